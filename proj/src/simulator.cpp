#include "longipred/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "longipred/errors.hpp"
#include "longipred/model_io.hpp"

namespace longipred {

using nlohmann::json;

int SimScenario::total_subjects() const {
  int total = 0;
  for (const auto& s : strata) total += s.count;
  return total;
}

namespace {

[[noreturn]] void bad_scenario(const std::string& message) {
  fail(ErrorCode::InvalidScenario, message);
}

Eigen::VectorXd json_vector(const json& node, const std::string& name) {
  if (!node.is_array() || node.empty()) {
    bad_scenario(name + " must be a non-empty array");
  }
  Eigen::VectorXd v(node.size());
  for (std::size_t i = 0; i < node.size(); ++i) {
    if (!node[i].is_number()) bad_scenario(name + " must be numeric");
    v[i] = node[i].get<double>();
  }
  return v;
}

void validate_scenario(const SimScenario& sc) {
  if (sc.strata.empty()) bad_scenario("at least one stratum required");
  for (const auto& st : sc.strata) {
    if (st.name.empty() || st.name.find('_') != std::string::npos) {
      bad_scenario("stratum names must be non-empty and free of '_'");
    }
    if (st.count < 1 || st.count > 9999) {
      bad_scenario("stratum count must be in 1..9999");
    }
    if (!std::isfinite(st.effect_scale)) bad_scenario("non-finite effect scale");
  }
  for (std::size_t i = 0; i < sc.strata.size(); ++i) {
    for (std::size_t j = i + 1; j < sc.strata.size(); ++j) {
      if (sc.strata[i].name == sc.strata[j].name) {
        bad_scenario("duplicate stratum name " + sc.strata[i].name);
      }
    }
  }
  if (sc.n_loci < 1) bad_scenario("need at least one locus");
  if (sc.n_clinical < 1) bad_scenario("need at least one clinical indicator");
  if (sc.maf.size() != sc.n_loci) bad_scenario("maf length must equal loci");
  for (int s = 0; s < sc.n_loci; ++s) {
    if (!(sc.maf[s] > 0.0 && sc.maf[s] <= 0.5)) {
      bad_scenario("minor-allele frequencies must lie in (0, 0.5]");
    }
  }
  if (sc.schedule.empty()) bad_scenario("empty observation schedule");
  double prev = 0.0;
  for (double dt : sc.schedule) {
    if (!(dt > prev)) bad_scenario("schedule must be strictly increasing and positive");
    prev = dt;
  }
  const VarianceComponents& t = sc.theta_true;
  if (!(t.sigma2 > 0.0) || t.tau2_G < 0.0 || t.tau2_C < 0.0 || t.tau2_I < 0.0) {
    bad_scenario("invalid variance components");
  }
  if (!(sc.baseline_age_max >= sc.baseline_age_min) ||
      !(sc.baseline_age_min > 0.0)) {
    bad_scenario("baseline age range must be positive");
  }
  if (sc.mode == SimMode::kScalar) {
    if (sc.n_features < 1) bad_scenario("need at least one feature");
    if (sc.beta_bar_true.size() < 1) bad_scenario("beta_bar must be non-empty");
  } else {
    if (sc.grid_width < 16 || sc.grid_height < 16) {
      bad_scenario("anatomy grid must be at least 16x16");
    }
    if (sc.growth_rates.size() < 1) bad_scenario("growth_rates must be non-empty");
    if (!(sc.mode_amplitude > 0.0)) bad_scenario("mode_amplitude must be positive");
  }
}

}  // namespace

SimScenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }

  SimScenario sc;
  try {
    std::string mode = doc.at("mode").get<std::string>();
    if (mode == "scalar") {
      sc.mode = SimMode::kScalar;
    } else if (mode == "anatomy2d") {
      sc.mode = SimMode::kAnatomy2d;
    } else {
      bad_scenario("unknown mode " + mode);
    }
    sc.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& st : doc.at("strata")) {
      SimStratum stratum;
      stratum.name = st.at("name").get<std::string>();
      stratum.count = st.at("count").get<int>();
      stratum.effect_scale = st.value("effect_scale", 1.0);
      sc.strata.push_back(std::move(stratum));
    }
    sc.n_loci = doc.at("loci").get<int>();
    sc.n_clinical = doc.at("clinical").get<int>();
    sc.maf = json_vector(doc.at("maf"), "maf");
    if (sc.maf.size() == 1 && sc.n_loci > 1) {
      sc.maf = Eigen::VectorXd::Constant(sc.n_loci, sc.maf[0]);
    }
    sc.schedule = doc.at("schedule").get<std::vector<double>>();
    const json& th = doc.at("theta");
    sc.theta_true.tau2_G = th.at("tau2_G").get<double>();
    sc.theta_true.tau2_C = th.at("tau2_C").get<double>();
    sc.theta_true.tau2_I = th.at("tau2_I").get<double>();
    sc.theta_true.sigma2 = th.at("sigma2").get<double>();
    if (doc.contains("baseline_age")) {
      const json& ba = doc.at("baseline_age");
      sc.baseline_age_min = ba.at(0).get<double>();
      sc.baseline_age_max = ba.at(1).get<double>();
    }
    if (sc.mode == SimMode::kScalar) {
      sc.n_features = doc.at("features").get<int>();
      sc.beta_bar_true = json_vector(doc.at("beta_bar"), "beta_bar");
      if (doc.contains("baseline_phenotype")) {
        const json& bp = doc.at("baseline_phenotype");
        sc.baseline_phenotype_mean = bp.at("mean").get<double>();
        sc.baseline_phenotype_spread = bp.at("spread").get<double>();
      }
    } else {
      if (doc.contains("grid")) {
        sc.grid_width = doc.at("grid").at(0).get<int>();
        sc.grid_height = doc.at("grid").at(1).get<int>();
      }
      sc.mode_amplitude = doc.value("mode_amplitude", 0.8);
      sc.growth_rates = json_vector(doc.at("growth_rates"), "growth_rates");
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidScenario, path.string() + ": " + e.what());
  }
  validate_scenario(sc);
  return sc;
}

Eigen::VectorXd sample_mvn(Rng& rng, const Eigen::MatrixXd& cov) {
  int n = static_cast<int>(cov.rows());
  Eigen::MatrixXd stabilized = cov;
  stabilized.diagonal().array() += 1e-12;
  Eigen::LLT<Eigen::MatrixXd> llt(stabilized);
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::SingularV, "draw covariance is not positive definite");
  }
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) z[i] = rng.normal();
  return llt.matrixL() * z;
}

namespace {

// Deterministic id list: per stratum "<name>_0001".."<name>_NNNN", sorted.
// Everything downstream walks subjects in this order so that truth rows
// line up with the canonical cohort order.
struct Roster {
  std::vector<std::string> ids;
  std::vector<int> stratum_index;   // parallel to ids
};

Roster make_roster(const SimScenario& sc) {
  std::vector<std::pair<std::string, int>> entries;
  for (std::size_t s = 0; s < sc.strata.size(); ++s) {
    for (int i = 1; i <= sc.strata[s].count; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%04d", i);
      entries.emplace_back(sc.strata[s].name + "_" + buf,
                           static_cast<int>(s));
    }
  }
  std::sort(entries.begin(), entries.end());
  Roster roster;
  for (auto& [id, stratum] : entries) {
    roster.ids.push_back(std::move(id));
    roster.stratum_index.push_back(stratum);
  }
  return roster;
}

// Stream ids for the seed forks; one stream per independent draw family.
enum Stream : std::uint64_t {
  kGenotype = 1,
  kClinical = 2,
  kAnatomy = 3,
  kEffects = 4,
  kNoise = 5,
  kAges = 6,
  kBaseline = 7,
};

double smoothstep_logistic(double t, double width) {
  return 1.0 / (1.0 + std::exp(-t / width));
}

}  // namespace

AnatomySetup make_anatomy_atlas(const SimScenario& scenario) {
  validate_scenario(scenario);
  if (scenario.mode != SimMode::kAnatomy2d) {
    bad_scenario("anatomy atlas requested for a scalar scenario");
  }
  Grid2D grid{scenario.grid_width, scenario.grid_height};
  double cx = (grid.width - 1) / 2.0;
  double cy = (grid.height - 1) / 2.0;
  double unit = std::min(grid.width, grid.height);
  // Ring radii for the three foreground structures; label 1 is background.
  double r_inner = 0.125 * unit;
  double r_mid = 0.22 * unit;
  double r_outer = 0.375 * unit;

  AnatomySetup setup;
  setup.atlas.n_labels = 4;
  setup.atlas.intensity.grid = grid;
  setup.atlas.intensity.pixels.resize(grid.size());
  setup.atlas.labels.grid = grid;
  setup.atlas.labels.labels.resize(grid.size());
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      int idx = y * grid.width + x;
      double rho = std::hypot(x - cx, y - cy);
      int label = 1;
      if (rho < r_inner) {
        label = 2;
      } else if (rho < r_mid) {
        label = 3;
      } else if (rho < r_outer) {
        label = 4;
      }
      setup.atlas.labels.labels[idx] = label;
      double v = 0.15;
      v += 0.20 * smoothstep_logistic(r_outer - rho, 0.8);
      v += 0.20 * smoothstep_logistic(r_mid - rho, 0.8);
      v += 0.35 * smoothstep_logistic(r_inner - rho, 0.8);
      setup.atlas.intensity.pixels[idx] = v;
    }
  }

  // Smooth radial ring bumps, one per growth mode, normalized to a 1 px
  // peak so mode coefficients read directly as pixels of boundary motion.
  int n_modes = static_cast<int>(scenario.growth_rates.size());
  double ring_sigma = 0.055 * unit;
  for (int r = 0; r < n_modes; ++r) {
    double ring_radius = r_inner + (r_outer - r_inner) *
                                       (n_modes == 1 ? 0.5 : double(r) / (n_modes - 1));
    DisplacementField mode = DisplacementField::zero(grid);
    for (int y = 0; y < grid.height; ++y) {
      for (int x = 0; x < grid.width; ++x) {
        int idx = y * grid.width + x;
        double dx = x - cx, dy = y - cy;
        double rho = std::hypot(dx, dy);
        if (rho < 1e-9) continue;
        double bump = std::exp(-0.5 * std::pow((rho - ring_radius) / ring_sigma, 2));
        mode.ux[idx] = bump * dx / rho;
        mode.uy[idx] = bump * dy / rho;
      }
    }
    setup.modes.push_back(std::move(mode));
  }

  Roster roster = make_roster(scenario);
  int big_n = static_cast<int>(roster.ids.size());
  Rng rng = Rng(scenario.seed).fork(kAnatomy);
  setup.baseline_coeffs.resize(big_n, n_modes);
  for (int i = 0; i < big_n; ++i) {
    DisplacementField field = DisplacementField::zero(grid);
    for (int r = 0; r < n_modes; ++r) {
      double a = scenario.mode_amplitude * rng.normal();
      setup.baseline_coeffs(i, r) = a;
      field.ux += a * setup.modes[r].ux;
      field.uy += a * setup.modes[r].uy;
    }
    setup.baseline_fields.push_back(std::move(field));
  }
  return setup;
}

SimResult simulate(const SimScenario& scenario) {
  validate_scenario(scenario);
  Roster roster = make_roster(scenario);
  int big_n = static_cast<int>(roster.ids.size());

  std::vector<Subject> subjects(big_n);
  {
    Rng rng_g = Rng(scenario.seed).fork(kGenotype);
    Rng rng_c = Rng(scenario.seed).fork(kClinical);
    Rng rng_a = Rng(scenario.seed).fork(kAges);
    for (int i = 0; i < big_n; ++i) {
      Subject& subj = subjects[i];
      subj.id = roster.ids[i];
      subj.baseline_age =
          rng_a.uniform(scenario.baseline_age_min, scenario.baseline_age_max);
      subj.genotype.resize(scenario.n_loci);
      for (int s = 0; s < scenario.n_loci; ++s) {
        subj.genotype[s] = rng_g.binomial2(scenario.maf[s]);
      }
      subj.clinical.resize(scenario.n_clinical);
      for (int q = 0; q < scenario.n_clinical; ++q) {
        subj.clinical[q] = rng_c.normal();
      }
    }
  }

  SimTruth truth;
  truth.subject_ids = roster.ids;
  for (int i = 0; i < big_n; ++i) {
    truth.stratum_of.push_back(scenario.strata[roster.stratum_index[i]].name);
  }
  truth.effect_scale.resize(big_n);
  for (int i = 0; i < big_n; ++i) {
    truth.effect_scale[i] = scenario.strata[roster.stratum_index[i]].effect_scale;
  }
  truth.theta_true = scenario.theta_true;

  int m = 0;
  if (scenario.mode == SimMode::kScalar) {
    m = static_cast<int>(scenario.beta_bar_true.size());
    truth.beta_bar_true = scenario.beta_bar_true;
    Rng rng_f = Rng(scenario.seed).fork(kBaseline);
    for (int i = 0; i < big_n; ++i) {
      subjects[i].baseline_features.resize(scenario.n_features);
      for (int p = 0; p < scenario.n_features; ++p) {
        subjects[i].baseline_features[p] = rng_f.normal();
      }
      subjects[i].baseline_phenotype.resize(m);
      for (int d = 0; d < m; ++d) {
        subjects[i].baseline_phenotype[d] =
            scenario.baseline_phenotype_mean +
            scenario.baseline_phenotype_spread * rng_f.normal();
      }
    }
  } else {
    AnatomySetup setup = make_anatomy_atlas(scenario);
    DeformationModel basis = fit_pca(setup.baseline_fields, setup.atlas);
    m = basis.n_components();
    // The population slope drives the smooth modes; expressed in
    // coefficient space it is the basis projection of the mode patterns.
    Eigen::VectorXd zero_code = encode(
        DisplacementField::zero({scenario.grid_width, scenario.grid_height}),
        basis);
    truth.beta_bar_true = Eigen::VectorXd::Zero(m);
    for (std::size_t r = 0; r < setup.modes.size(); ++r) {
      truth.beta_bar_true +=
          scenario.growth_rates[r] * (encode(setup.modes[r], basis) - zero_code);
    }
    for (int i = 0; i < big_n; ++i) {
      Eigen::VectorXd code = encode(setup.baseline_fields[i], basis);
      subjects[i].baseline_phenotype = code;
      subjects[i].baseline_features = code;
    }
    truth.atlas = std::move(setup.atlas);
    truth.deformation = std::move(basis);
    truth.baseline_fields = std::move(setup.baseline_fields);
  }

  // Kernel matrices over the sampled covariates; the subject-level effects
  // are exact multivariate-normal draws against them, one independent
  // triple per phenotype dimension.
  Cohort covariates = make_cohort(subjects, {});
  truth.kernel_params = default_kernel_params(covariates);
  GramSet grams = gram_set(covariates, truth.kernel_params);
  truth.h_G.resize(big_n, m);
  truth.h_C.resize(big_n, m);
  truth.h_I.resize(big_n, m);
  {
    Rng rng_h = Rng(scenario.seed).fork(kEffects);
    for (int d = 0; d < m; ++d) {
      truth.h_G.col(d) = sample_mvn(rng_h, scenario.theta_true.tau2_G * grams.K_G);
      truth.h_C.col(d) = sample_mvn(rng_h, scenario.theta_true.tau2_C * grams.K_C);
      truth.h_I.col(d) = sample_mvn(rng_h, scenario.theta_true.tau2_I * grams.K_I);
    }
  }

  int per_subject = static_cast<int>(scenario.schedule.size());
  int n = big_n * per_subject;
  truth.noise.resize(n, m);
  std::vector<Observation> observations;
  observations.reserve(n);
  {
    Rng rng_e = Rng(scenario.seed).fork(kNoise);
    double sd = std::sqrt(scenario.theta_true.sigma2);
    int row = 0;
    for (int i = 0; i < big_n; ++i) {
      // `covariates` shares the sorted subject order by construction.
      const Subject& subj = covariates.subjects[i];
      for (double dt : scenario.schedule) {
        Observation obs;
        obs.subject_id = subj.id;
        obs.age = subj.baseline_age + dt;
        obs.phenotype.resize(m);
        for (int d = 0; d < m; ++d) {
          double eps = sd * rng_e.normal();
          truth.noise(row, d) = eps;
          double slope = truth.effect_scale[i] * truth.beta_bar_true[d] +
                         truth.h_G(i, d) + truth.h_C(i, d) + truth.h_I(i, d);
          obs.phenotype[d] = subj.baseline_phenotype[d] + dt * slope + eps;
        }
        observations.push_back(std::move(obs));
        ++row;
      }
    }
  }

  SimResult result;
  result.cohort = make_cohort(std::move(subjects), std::move(observations));
  result.truth = std::move(truth);
  return result;
}

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    rows.push_back(vector_to_json(m.row(i).transpose()));
  }
  return rows;
}

}  // namespace

void write_sim_outputs(const SimResult& result,
                       const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_cohort(result.cohort, out_dir / "subjects.csv",
               out_dir / "observations.csv");

  const SimTruth& truth = result.truth;
  json doc;
  doc["schema"] = "longipred-truth/1";
  doc["subject_ids"] = truth.subject_ids;
  doc["stratum"] = truth.stratum_of;
  doc["effect_scale"] = vector_to_json(truth.effect_scale);
  doc["beta_bar_true"] = vector_to_json(truth.beta_bar_true);
  doc["theta_true"] = {{"tau2_G", truth.theta_true.tau2_G},
                       {"tau2_C", truth.theta_true.tau2_C},
                       {"tau2_I", truth.theta_true.tau2_I},
                       {"sigma2", truth.theta_true.sigma2}};
  doc["kernel_params"] = kernel_params_to_json(truth.kernel_params);
  doc["h_G"] = matrix_to_json(truth.h_G);
  doc["h_C"] = matrix_to_json(truth.h_C);
  doc["h_I"] = matrix_to_json(truth.h_I);
  doc["noise"] = matrix_to_json(truth.noise);

  std::ofstream out(out_dir / "truth.json", std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write truth.json");
  out << doc.dump(2) << '\n';

  if (truth.atlas) {
    write_pgm(out_dir / "atlas.pgm", truth.atlas->intensity);
    write_label_pgm(out_dir / "atlas_labels.pgm", truth.atlas->labels);
  }
  if (truth.deformation) {
    std::ofstream dm(out_dir / "deformation_model.json", std::ios::binary);
    if (!dm) fail(ErrorCode::IoError, "cannot write deformation_model.json");
    dm << deformation_to_json(*truth.deformation).dump(2) << '\n';
  }
}

}  // namespace longipred
