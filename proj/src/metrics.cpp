#include "longipred/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

#include "longipred/csv.hpp"
#include "longipred/errors.hpp"
#include "longipred/predictor.hpp"
#include "longipred/util.hpp"

namespace longipred {

using nlohmann::json;

double relative_error(double pred, double truth) {
  if (truth == 0.0) {
    fail(ErrorCode::ZeroTruth, "relative error against a zero truth value");
  }
  return std::abs(pred - truth) / std::abs(truth);
}

double dice(const LabelMap& a, const LabelMap& b, int label) {
  if (!(a.grid == b.grid)) {
    fail(ErrorCode::DimensionMismatch, "dice over mismatched grids");
  }
  long both = 0, in_a = 0, in_b = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    bool pa = a.labels[i] == label;
    bool pb = b.labels[i] == label;
    in_a += pa;
    in_b += pb;
    both += pa && pb;
  }
  if (in_a + in_b == 0) return 1.0;
  return 2.0 * double(both) / double(in_a + in_b);
}

namespace {

// Last follow-up per subject, in canonical order the last matching row.
std::map<std::string, const Observation*> last_observation(const Cohort& cohort) {
  std::map<std::string, const Observation*> last;
  for (const Observation& obs : cohort.observations) {
    last[obs.subject_id] = &obs;
  }
  return last;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t h = v.size() / 2;
  if (v.size() % 2 == 1) return v[h];
  return 0.5 * (v[h - 1] + v[h]);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

std::vector<std::string> top_decile(const Cohort& cohort, int dim) {
  if (dim < 0 || dim >= cohort.n_phenotypes()) {
    fail(ErrorCode::DimensionMismatch, "phenotype dimension out of range");
  }
  auto last = last_observation(cohort);
  std::vector<std::pair<double, std::string>> ranked;
  for (const Subject& subj : cohort.subjects) {
    auto it = last.find(subj.id);
    if (it == last.end()) continue;
    double y_b = subj.baseline_phenotype[dim];
    double y_t = it->second->phenotype[dim];
    double change = y_b == 0.0 ? std::numeric_limits<double>::infinity()
                               : std::abs(y_t - y_b) / std::abs(y_b);
    ranked.emplace_back(change, subj.id);
  }
  if (ranked.empty()) {
    fail(ErrorCode::DegenerateCohort, "no follow-ups to rank");
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::size_t keep = (ranked.size() + 9) / 10;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < keep; ++i) ids.push_back(ranked[i].second);
  std::sort(ids.begin(), ids.end());
  return ids;
}

EvalReport compare_methods(const ModelBundle& bundle, const Cohort& test,
                           const std::vector<std::string>& methods,
                           const Atlas* atlas, bool allow_unconverged) {
  const FittedModel& model = bundle.model;
  int m = model.n_dims();
  if (test.n_phenotypes() != m) {
    fail(ErrorCode::DimensionMismatch, "test cohort phenotype width differs");
  }
  for (const std::string& method : methods) {
    if (method != "full" && method != "pop" && method != "carry") {
      fail(ErrorCode::InvalidValue, "unknown method " + method);
    }
  }

  // Follow-up ages per subject, canonical order.
  std::map<std::string, std::vector<const Observation*>> by_subject;
  for (const Observation& obs : test.observations) {
    by_subject[obs.subject_id].push_back(&obs);
  }

  std::vector<std::set<std::string>> top(m);
  for (int d = 0; d < m; ++d) {
    auto ids = top_decile(test, d);
    top[d] = std::set<std::string>(ids.begin(), ids.end());
  }

  bool with_labels = atlas != nullptr && bundle.deformation.has_value();
  int n_labels = with_labels ? atlas->n_labels : 0;

  EvalReport report;
  report.methods = methods;
  for (const std::string& method : methods) {
    std::vector<std::vector<double>> errs(m), errs_top(m);
    std::vector<std::vector<double>> dices(n_labels + 1);
    for (const Subject& subj : test.subjects) {
      auto it = by_subject.find(subj.id);
      if (it == by_subject.end()) continue;
      PredictionRequest req;
      req.subject = subj;
      for (const Observation* obs : it->second) {
        req.target_ages.push_back(obs->age);
      }
      Prediction pred;
      if (method == "full") {
        pred = predict(model, req, allow_unconverged);
      } else if (method == "pop") {
        pred = predict_population_only(model, req, allow_unconverged);
      } else {
        pred = predict_baseline_carry(req);
      }
      for (std::size_t t = 0; t < it->second.size(); ++t) {
        const Eigen::VectorXd& truth = it->second[t]->phenotype;
        for (int d = 0; d < m; ++d) {
          if (truth[d] == 0.0) continue;
          double err = relative_error(pred.y_hat(int(t), d), truth[d]);
          errs[d].push_back(err);
          if (top[d].count(subj.id)) errs_top[d].push_back(err);
        }
      }
      if (with_labels) {
        int t_last = static_cast<int>(it->second.size()) - 1;
        LabelMap truth_map = propagate_labels(
            *atlas, it->second[t_last]->phenotype, *bundle.deformation);
        Eigen::VectorXd y_hat(m);
        for (int d = 0; d < m; ++d) y_hat[d] = pred.y_hat(t_last, d);
        LabelMap pred_map = propagate_labels(*atlas, y_hat, *bundle.deformation);
        for (int label = 2; label <= n_labels; ++label) {
          dices[label - 1].push_back(dice(pred_map, truth_map, label));
        }
      }
    }
    for (int d = 0; d < m; ++d) {
      MethodDimStats cell;
      cell.method = method;
      cell.dim = d;
      cell.mean_rel_err = mean_of(errs[d]);
      cell.median_rel_err = median_of(errs[d]);
      cell.mean_rel_err_top = mean_of(errs_top[d]);
      cell.median_rel_err_top = median_of(errs_top[d]);
      cell.n_overall = static_cast<int>(errs[d].size());
      cell.n_top = static_cast<int>(errs_top[d].size());
      report.cells.push_back(std::move(cell));
    }
    if (with_labels) {
      for (int label = 2; label <= n_labels; ++label) {
        DiceStats cell;
        cell.method = method;
        cell.label = label;
        cell.mean_dice = mean_of(dices[label - 1]);
        cell.n_subjects = static_cast<int>(dices[label - 1].size());
        report.dice_cells.push_back(std::move(cell));
      }
    }
  }
  return report;
}

std::vector<SummaryCell> aggregate_reports(const std::vector<EvalReport>& reports) {
  if (reports.empty()) return {};
  const EvalReport& first = reports.front();
  for (const EvalReport& r : reports) {
    if (r.cells.size() != first.cells.size() ||
        r.dice_cells.size() != first.dice_cells.size()) {
      fail(ErrorCode::DimensionMismatch, "replicate reports disagree in shape");
    }
  }
  auto moments = [&](auto getter) {
    std::vector<double> values;
    for (const EvalReport& r : reports) values.push_back(getter(r));
    double mu = mean_of(values);
    double var = 0.0;
    for (double v : values) var += (v - mu) * (v - mu);
    var = values.size() > 1 ? var / double(values.size() - 1) : 0.0;
    return std::pair<double, double>(mu, std::sqrt(var));
  };

  std::vector<SummaryCell> cells;
  for (std::size_t i = 0; i < first.cells.size(); ++i) {
    struct Entry {
      const char* metric;
      double MethodDimStats::*member;
    };
    const Entry entries[] = {
        {"mean_rel_err", &MethodDimStats::mean_rel_err},
        {"median_rel_err", &MethodDimStats::median_rel_err},
        {"mean_rel_err_top", &MethodDimStats::mean_rel_err_top},
        {"median_rel_err_top", &MethodDimStats::median_rel_err_top},
    };
    for (const Entry& e : entries) {
      auto [mu, sd] = moments(
          [&](const EvalReport& r) { return r.cells[i].*(e.member); });
      SummaryCell cell;
      cell.method = first.cells[i].method;
      cell.dim = first.cells[i].dim;
      cell.metric = e.metric;
      cell.mean = mu;
      cell.stddev = sd;
      cells.push_back(std::move(cell));
    }
  }
  for (std::size_t i = 0; i < first.dice_cells.size(); ++i) {
    auto [mu, sd] = moments(
        [&](const EvalReport& r) { return r.dice_cells[i].mean_dice; });
    SummaryCell cell;
    cell.method = first.dice_cells[i].method;
    cell.dim = first.dice_cells[i].label;
    cell.metric = "dice";
    cell.mean = mu;
    cell.stddev = sd;
    cells.push_back(std::move(cell));
  }
  return cells;
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  json doc;
  doc["schema"] = "longipred-report/1";
  doc["methods"] = report.methods;
  json cells = json::array();
  for (const MethodDimStats& c : report.cells) {
    cells.push_back({{"method", c.method},
                     {"dim", c.dim},
                     {"mean_rel_err", c.mean_rel_err},
                     {"median_rel_err", c.median_rel_err},
                     {"mean_rel_err_top", c.mean_rel_err_top},
                     {"median_rel_err_top", c.median_rel_err_top},
                     {"n_overall", c.n_overall},
                     {"n_top", c.n_top}});
  }
  doc["cells"] = std::move(cells);
  if (!report.dice_cells.empty()) {
    json dcells = json::array();
    for (const DiceStats& c : report.dice_cells) {
      dcells.push_back({{"method", c.method},
                        {"label", c.label},
                        {"mean_dice", c.mean_dice},
                        {"n_subjects", c.n_subjects}});
    }
    doc["dice"] = std::move(dcells);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

void write_plotdata_csv(const EvalReport& report, const std::filesystem::path& path) {
  csv::Table table;
  table.header = {"method", "stratum", "dim", "metric", "value"};
  auto push = [&](const std::string& method, const std::string& stratum,
                  int dim, const std::string& metric, double value) {
    table.rows.push_back({method, stratum, std::to_string(dim), metric,
                          format_double(value)});
  };
  for (const MethodDimStats& c : report.cells) {
    push(c.method, "overall", c.dim, "mean_rel_err", c.mean_rel_err);
    push(c.method, "overall", c.dim, "median_rel_err", c.median_rel_err);
    push(c.method, "top_decile", c.dim, "mean_rel_err", c.mean_rel_err_top);
    push(c.method, "top_decile", c.dim, "median_rel_err", c.median_rel_err_top);
  }
  for (const DiceStats& c : report.dice_cells) {
    push(c.method, "overall", c.label, "dice", c.mean_dice);
  }
  csv::write_file(path, table);
}

}  // namespace longipred
