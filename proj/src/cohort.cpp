#include "longipred/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "longipred/csv.hpp"
#include "longipred/errors.hpp"
#include "longipred/util.hpp"

namespace longipred {

namespace {

int checked_dim(const std::vector<Subject>& subjects,
                std::size_t (*get)(const Subject&), const char* what) {
  if (subjects.empty()) return 0;
  std::size_t dim = get(subjects.front());
  for (const auto& s : subjects) {
    if (get(s) != dim) {
      fail(ErrorCode::RaggedRow, std::string("subject ") + s.id +
                                     ": inconsistent " + what + " count");
    }
  }
  return static_cast<int>(dim);
}

bool phenotype_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(),
                                      b.data() + b.size());
}

void check_finite(const Eigen::VectorXd& v, const std::string& context) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      fail(ErrorCode::NonFiniteValue, context);
    }
  }
}

}  // namespace

int Cohort::n_loci() const {
  return subjects.empty() ? 0 : static_cast<int>(subjects.front().genotype.size());
}
int Cohort::n_clinical() const {
  return subjects.empty() ? 0 : static_cast<int>(subjects.front().clinical.size());
}
int Cohort::n_features() const {
  return subjects.empty()
             ? 0
             : static_cast<int>(subjects.front().baseline_features.size());
}
int Cohort::n_phenotypes() const {
  return subjects.empty()
             ? 0
             : static_cast<int>(subjects.front().baseline_phenotype.size());
}

Cohort make_cohort(std::vector<Subject> subjects,
                   std::vector<Observation> observations) {
  std::sort(subjects.begin(), subjects.end(),
            [](const Subject& a, const Subject& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < subjects.size(); ++i) {
    if (subjects[i].id == subjects[i - 1].id) {
      fail(ErrorCode::InvalidValue, "duplicate subject id " + subjects[i].id);
    }
  }

  checked_dim(subjects, [](const Subject& s) { return s.genotype.size(); },
              "genotype");
  checked_dim(subjects,
              [](const Subject& s) { return std::size_t(s.clinical.size()); },
              "clinical");
  checked_dim(
      subjects,
      [](const Subject& s) { return std::size_t(s.baseline_features.size()); },
      "feature");
  int m = checked_dim(
      subjects,
      [](const Subject& s) { return std::size_t(s.baseline_phenotype.size()); },
      "phenotype");

  for (const auto& s : subjects) {
    if (!std::isfinite(s.baseline_age) || s.baseline_age <= 0.0) {
      fail(ErrorCode::InvalidValue,
           "subject " + s.id + ": baseline age must be finite and positive");
    }
    for (int g : s.genotype) {
      if (g < 0 || g > 2) {
        fail(ErrorCode::BadGenotype,
             "subject " + s.id + ": genotype value " + std::to_string(g));
      }
    }
    check_finite(s.clinical, "subject " + s.id + ": clinical");
    check_finite(s.baseline_features, "subject " + s.id + ": features");
    check_finite(s.baseline_phenotype, "subject " + s.id + ": phenotype");
  }

  std::unordered_map<std::string, int> index;
  index.reserve(subjects.size());
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    index.emplace(subjects[i].id, static_cast<int>(i));
  }

  for (const auto& o : observations) {
    auto it = index.find(o.subject_id);
    if (it == index.end()) {
      fail(ErrorCode::MissingSubject,
           "observation references unknown subject " + o.subject_id);
    }
    if (o.phenotype.size() != m) {
      fail(ErrorCode::RaggedRow,
           "observation for " + o.subject_id + ": phenotype width " +
               std::to_string(o.phenotype.size()) + ", cohort has " +
               std::to_string(m));
    }
    check_finite(o.phenotype, "observation for " + o.subject_id);
    if (!std::isfinite(o.age) ||
        o.age < subjects[it->second].baseline_age) {
      fail(ErrorCode::InvalidValue,
           "observation for " + o.subject_id + " precedes baseline age");
    }
  }

  std::sort(observations.begin(), observations.end(),
            [](const Observation& a, const Observation& b) {
              if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
              if (a.age != b.age) return a.age < b.age;
              return phenotype_less(a.phenotype, b.phenotype);
            });

  Cohort cohort;
  cohort.subjects = std::move(subjects);
  cohort.observations = std::move(observations);
  cohort.incidence.reserve(cohort.observations.size());
  for (const auto& o : cohort.observations) {
    cohort.incidence.push_back(index.at(o.subject_id));
  }
  return cohort;
}

namespace {

double parse_numeric(const std::string& token, const std::string& context) {
  if (token.empty()) {
    fail(ErrorCode::NonFiniteValue, context + ": missing value");
  }
  double value = 0.0;
  if (!parse_double(token, value)) {
    fail(ErrorCode::ParseError, context + ": cannot parse '" + token + "'");
  }
  if (!std::isfinite(value)) {
    fail(ErrorCode::NonFiniteValue, context + ": non-finite value '" + token + "'");
  }
  return value;
}

/// Counts the run of header fields named <prefix>1, <prefix>2, ... starting
/// at `pos`. The full header must be exactly id,x_b,g_*,c_*,f_*,y_* (or the
/// observation variant); anything else is a parse error.
int count_group(const std::vector<std::string>& header, std::size_t& pos,
                const std::string& prefix) {
  int count = 0;
  while (pos < header.size() &&
         header[pos] == prefix + std::to_string(count + 1)) {
    ++count;
    ++pos;
  }
  return count;
}

}  // namespace

Cohort load_cohort(const std::filesystem::path& subjects_path,
                   const std::filesystem::path& observations_path) {
  csv::Table stab = csv::read_file(subjects_path);
  std::size_t pos = 0;
  bool ok = stab.header.size() >= 2 && stab.header[0] == "id" &&
            stab.header[1] == "x_b";
  pos = 2;
  int s = ok ? count_group(stab.header, pos, "g_") : 0;
  int q = ok ? count_group(stab.header, pos, "c_") : 0;
  int p = ok ? count_group(stab.header, pos, "f_") : 0;
  int m = ok ? count_group(stab.header, pos, "y_") : 0;
  if (!ok || pos != stab.header.size() || s < 1 || q < 1 || p < 1 || m < 1) {
    fail(ErrorCode::ParseError,
         subjects_path.filename().string() +
             ": header must be id,x_b,g_1..,c_1..,f_1..,y_1..");
  }

  std::vector<Subject> subjects;
  subjects.reserve(stab.rows.size());
  for (const auto& row : stab.rows) {
    Subject subj;
    subj.id = row[0];
    if (subj.id.empty()) fail(ErrorCode::InvalidValue, "empty subject id");
    std::string ctx = "subject " + subj.id;
    subj.baseline_age = parse_numeric(row[1], ctx + " x_b");
    subj.genotype.reserve(s);
    for (int i = 0; i < s; ++i) {
      double g = parse_numeric(row[2 + i], ctx + " genotype");
      if (g != 0.0 && g != 1.0 && g != 2.0) {
        fail(ErrorCode::BadGenotype, ctx + ": genotype value '" + row[2 + i] + "'");
      }
      subj.genotype.push_back(static_cast<int>(g));
    }
    subj.clinical.resize(q);
    for (int i = 0; i < q; ++i) {
      subj.clinical[i] = parse_numeric(row[2 + s + i], ctx + " clinical");
    }
    subj.baseline_features.resize(p);
    for (int i = 0; i < p; ++i) {
      subj.baseline_features[i] = parse_numeric(row[2 + s + q + i], ctx + " feature");
    }
    subj.baseline_phenotype.resize(m);
    for (int i = 0; i < m; ++i) {
      subj.baseline_phenotype[i] =
          parse_numeric(row[2 + s + q + p + i], ctx + " phenotype");
    }
    subjects.push_back(std::move(subj));
  }

  csv::Table otab = csv::read_file(observations_path);
  pos = 2;
  ok = otab.header.size() >= 2 && otab.header[0] == "id" &&
       otab.header[1] == "x_t";
  int om = ok ? count_group(otab.header, pos, "y_") : 0;
  if (!ok || pos != otab.header.size() || om < 1) {
    fail(ErrorCode::ParseError, observations_path.filename().string() +
                                    ": header must be id,x_t,y_1..");
  }
  if (om != m) {
    fail(ErrorCode::RaggedRow,
         "observation phenotype width " + std::to_string(om) +
             " does not match subject width " + std::to_string(m));
  }

  std::vector<Observation> observations;
  observations.reserve(otab.rows.size());
  for (const auto& row : otab.rows) {
    Observation obs;
    obs.subject_id = row[0];
    std::string ctx = "observation " + obs.subject_id;
    obs.age = parse_numeric(row[1], ctx + " x_t");
    obs.phenotype.resize(om);
    for (int i = 0; i < om; ++i) {
      obs.phenotype[i] = parse_numeric(row[2 + i], ctx + " phenotype");
    }
    observations.push_back(std::move(obs));
  }

  return make_cohort(std::move(subjects), std::move(observations));
}

void write_cohort(const Cohort& cohort,
                  const std::filesystem::path& subjects_path,
                  const std::filesystem::path& observations_path) {
  csv::Table stab;
  stab.header = {"id", "x_b"};
  int s = cohort.n_loci(), q = cohort.n_clinical(), p = cohort.n_features(),
      m = cohort.n_phenotypes();
  for (int i = 1; i <= s; ++i) stab.header.push_back("g_" + std::to_string(i));
  for (int i = 1; i <= q; ++i) stab.header.push_back("c_" + std::to_string(i));
  for (int i = 1; i <= p; ++i) stab.header.push_back("f_" + std::to_string(i));
  for (int i = 1; i <= m; ++i) stab.header.push_back("y_" + std::to_string(i));
  for (const auto& subj : cohort.subjects) {
    std::vector<std::string> row;
    row.reserve(stab.header.size());
    row.push_back(subj.id);
    row.push_back(format_double(subj.baseline_age));
    for (int g : subj.genotype) row.push_back(std::to_string(g));
    for (int i = 0; i < q; ++i) row.push_back(format_double(subj.clinical[i]));
    for (int i = 0; i < p; ++i)
      row.push_back(format_double(subj.baseline_features[i]));
    for (int i = 0; i < m; ++i)
      row.push_back(format_double(subj.baseline_phenotype[i]));
    stab.rows.push_back(std::move(row));
  }
  csv::write_file(subjects_path, stab);

  csv::Table otab;
  otab.header = {"id", "x_t"};
  for (int i = 1; i <= m; ++i) otab.header.push_back("y_" + std::to_string(i));
  for (const auto& obs : cohort.observations) {
    std::vector<std::string> row;
    row.reserve(otab.header.size());
    row.push_back(obs.subject_id);
    row.push_back(format_double(obs.age));
    for (int i = 0; i < m; ++i) row.push_back(format_double(obs.phenotype[i]));
    otab.rows.push_back(std::move(row));
  }
  csv::write_file(observations_path, otab);
}

Cohort filter_stratum(const Cohort& cohort, const std::string& stratum) {
  if (stratum.empty()) return cohort;
  std::string prefix = stratum + "_";
  std::vector<Subject> subjects;
  for (const auto& subj : cohort.subjects) {
    if (subj.id.rfind(prefix, 0) == 0) subjects.push_back(subj);
  }
  if (subjects.empty()) {
    fail(ErrorCode::DegenerateCohort, "stratum '" + stratum + "' matches no subject");
  }
  std::vector<Observation> observations;
  for (const auto& obs : cohort.observations) {
    if (obs.subject_id.rfind(prefix, 0) == 0) observations.push_back(obs);
  }
  return make_cohort(std::move(subjects), std::move(observations));
}

Deltas deltas(const Cohort& cohort) {
  int n = cohort.n_observations();
  int m = cohort.n_phenotypes();
  Deltas d;
  d.dx.resize(n);
  d.dy.resize(n, m);
  for (int k = 0; k < n; ++k) {
    const Subject& subj = cohort.subjects[cohort.incidence[k]];
    const Observation& obs = cohort.observations[k];
    d.dx[k] = obs.age - subj.baseline_age;
    d.dy.row(k) = (obs.phenotype - subj.baseline_phenotype).transpose();
  }
  return d;
}

}  // namespace longipred
