#include <doctest.h>

#include <Eigen/Cholesky>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "longipred/errors.hpp"
#include "longipred/kernels.hpp"
#include "longipred/simulator.hpp"
#include "longipred/util.hpp"

using namespace longipred;
namespace fs = std::filesystem;

namespace {

SimScenario scalar_scenario(std::uint64_t seed) {
  SimScenario sc;
  sc.mode = SimMode::kScalar;
  sc.seed = seed;
  sc.strata = {{"study", 12, 1.0}, {"val", 5, 1.5}};
  sc.n_loci = 4;
  sc.n_clinical = 2;
  sc.maf = Eigen::VectorXd::Constant(4, 0.3);
  sc.schedule = {1.0, 2.0};
  sc.theta_true.tau2_G = 0.8;
  sc.theta_true.tau2_C = 0.6;
  sc.theta_true.tau2_I = 0.4;
  sc.theta_true.sigma2 = 0.5;
  sc.baseline_age_min = 60.0;
  sc.baseline_age_max = 75.0;
  sc.n_features = 3;
  sc.beta_bar_true = Eigen::VectorXd::Constant(1, 2.0);
  sc.baseline_phenotype_mean = 50.0;
  sc.baseline_phenotype_spread = 8.0;
  return sc;
}

SimScenario anatomy_scenario(std::uint64_t seed) {
  SimScenario sc;
  sc.mode = SimMode::kAnatomy2d;
  sc.seed = seed;
  sc.strata = {{"scan", 8, 1.0}};
  sc.n_loci = 3;
  sc.n_clinical = 2;
  sc.maf = Eigen::VectorXd::Constant(3, 0.25);
  sc.schedule = {1.0, 2.0};
  sc.theta_true.tau2_G = 0.02;
  sc.theta_true.tau2_C = 0.02;
  sc.theta_true.tau2_I = 0.02;
  sc.theta_true.sigma2 = 0.01;
  sc.grid_width = 32;
  sc.grid_height = 32;
  sc.mode_amplitude = 0.4;
  sc.growth_rates = Eigen::VectorXd::Constant(3, 0.2);
  return sc;
}

// Stacked per-observation identity check shared by both modes.
void check_truth_identity(const SimResult& result, double tol) {
  const Cohort& cohort = result.cohort;
  const SimTruth& truth = result.truth;
  int n_dims = cohort.n_phenotypes();
  REQUIRE(truth.noise.rows() == cohort.n_observations());
  for (int o = 0; o < cohort.n_observations(); ++o) {
    int i = cohort.incidence[o];
    const Subject& subject = cohort.subjects[i];
    REQUIRE(subject.id == truth.subject_ids[i]);
    double dx = cohort.observations[o].age - subject.baseline_age;
    for (int d = 0; d < n_dims; ++d) {
      double slope = truth.effect_scale[i] * truth.beta_bar_true[d] +
                     truth.h_G(i, d) + truth.h_C(i, d) + truth.h_I(i, d);
      double predicted =
          subject.baseline_phenotype[d] + dx * slope + truth.noise(o, d);
      CHECK(std::abs(cohort.observations[o].phenotype[d] - predicted) < tol);
    }
  }
}

std::optional<ErrorCode> run_invalid(const SimScenario& sc) {
  try {
    simulate(sc);
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace

TEST_CASE("simulation is reproducible bit for bit") {
  SimScenario sc = scalar_scenario(40);
  SimResult a = simulate(sc);
  SimResult b = simulate(sc);
  REQUIRE(a.cohort.n_subjects() == b.cohort.n_subjects());
  for (int i = 0; i < a.cohort.n_subjects(); ++i) {
    const Subject& sa = a.cohort.subjects[i];
    const Subject& sb = b.cohort.subjects[i];
    CHECK(sa.id == sb.id);
    CHECK(sa.baseline_age == sb.baseline_age);
    CHECK(sa.genotype == sb.genotype);
    CHECK(sa.clinical == sb.clinical);
    CHECK(sa.baseline_features == sb.baseline_features);
    CHECK(sa.baseline_phenotype == sb.baseline_phenotype);
  }
  REQUIRE(a.cohort.n_observations() == b.cohort.n_observations());
  for (int o = 0; o < a.cohort.n_observations(); ++o) {
    CHECK(a.cohort.observations[o].age == b.cohort.observations[o].age);
    CHECK(a.cohort.observations[o].phenotype ==
          b.cohort.observations[o].phenotype);
  }
  CHECK(a.truth.h_G == b.truth.h_G);
  CHECK(a.truth.h_C == b.truth.h_C);
  CHECK(a.truth.h_I == b.truth.h_I);
  CHECK(a.truth.noise == b.truth.noise);

  SimScenario other = scalar_scenario(41);
  SimResult c = simulate(other);
  CHECK(a.truth.noise != c.truth.noise);
}

TEST_CASE("written outputs are byte-identical across runs") {
  SimScenario sc = scalar_scenario(42);
  auto base = fs::temp_directory_path() / "longipred_sim_repro";
  fs::remove_all(base);
  fs::create_directories(base / "one");
  fs::create_directories(base / "two");
  write_sim_outputs(simulate(sc), base / "one");
  write_sim_outputs(simulate(sc), base / "two");
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(base / "one")) {
    auto name = entry.path().filename();
    CHECK(sha256_file(entry.path()) == sha256_file(base / "two" / name));
    ++compared;
  }
  CHECK(compared >= 3);
  CHECK(fs::exists(base / "one" / "subjects.csv"));
  CHECK(fs::exists(base / "one" / "observations.csv"));
  CHECK(fs::exists(base / "one" / "truth.json"));
}

TEST_CASE("stacked observations decompose into slope plus stored noise") {
  SimResult result = simulate(scalar_scenario(43));
  check_truth_identity(result, 1e-9);
}

TEST_CASE("the noiseless limit follows the population slope") {
  SimScenario sc = scalar_scenario(44);
  sc.theta_true.tau2_G = 0.0;
  sc.theta_true.tau2_C = 0.0;
  sc.theta_true.tau2_I = 0.0;
  sc.theta_true.sigma2 = 1e-12;
  SimResult result = simulate(sc);
  for (int o = 0; o < result.cohort.n_observations(); ++o) {
    const Subject& subject =
        result.cohort.subjects[result.cohort.incidence[o]];
    double slope =
        result.truth.effect_scale[result.cohort.incidence[o]] *
        sc.beta_bar_true[0];
    double dx = result.cohort.observations[o].age - subject.baseline_age;
    CHECK(result.cohort.observations[o].phenotype[0] ==
          doctest::Approx(subject.baseline_phenotype[0] + dx * slope)
              .epsilon(1e-5));
  }
}

TEST_CASE("roster ids sort canonically and carry their stratum") {
  SimResult result = simulate(scalar_scenario(45));
  const auto& ids = result.truth.subject_ids;
  REQUIRE(static_cast<int>(ids.size()) == 17);
  for (std::size_t i = 1; i < ids.size(); ++i) CHECK(ids[i - 1] < ids[i]);
  CHECK(ids.front() == "study_0001");
  CHECK(ids.back() == "val_0005");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK(result.cohort.subjects[i].id == ids[i]);
    const std::string& stratum = result.truth.stratum_of[i];
    CHECK(ids[i].substr(0, stratum.size() + 1) == stratum + "_");
    double expected = stratum == "val" ? 1.5 : 1.0;
    CHECK(result.truth.effect_scale[i] == expected);
  }
}

TEST_CASE("ages follow the schedule and genotypes are allele counts") {
  SimScenario sc = scalar_scenario(46);
  SimResult result = simulate(sc);
  std::vector<int> seen(result.cohort.n_subjects(), 0);
  for (int o = 0; o < result.cohort.n_observations(); ++o) {
    int i = result.cohort.incidence[o];
    const Subject& subject = result.cohort.subjects[i];
    CHECK(result.cohort.observations[o].age ==
          subject.baseline_age + sc.schedule[seen[i]]);
    ++seen[i];
  }
  for (int count : seen) CHECK(count == static_cast<int>(sc.schedule.size()));
  for (const Subject& subject : result.cohort.subjects) {
    CHECK(subject.baseline_age >= sc.baseline_age_min);
    CHECK(subject.baseline_age <= sc.baseline_age_max);
    for (int g : subject.genotype) CHECK((g == 0 || g == 1 || g == 2));
  }
}

TEST_CASE("minor-allele frequency shifts genotype counts") {
  SimScenario sc = scalar_scenario(47);
  sc.strata = {{"big", 200, 1.0}};
  sc.n_loci = 2;
  sc.maf = Eigen::VectorXd(2);
  sc.maf << 0.5, 0.05;
  SimResult result = simulate(sc);
  double mean0 = 0.0, mean1 = 0.0;
  for (const Subject& subject : result.cohort.subjects) {
    mean0 += subject.genotype[0];
    mean1 += subject.genotype[1];
  }
  mean0 /= result.cohort.n_subjects();
  mean1 /= result.cohort.n_subjects();
  CHECK(mean0 > 0.8);
  CHECK(mean0 < 1.2);
  CHECK(mean1 > 0.02);
  CHECK(mean1 < 0.25);
}

TEST_CASE("whitened random-effect draws match the kernel covariance") {
  std::vector<double> zg, zc, zi;
  for (int seed = 0; seed < 400; ++seed) {
    SimScenario sc = scalar_scenario(1000 + seed);
    sc.strata = {{"mc", 4, 1.0}};
    sc.n_loci = 3;
    sc.maf = Eigen::VectorXd::Constant(3, 0.3);
    sc.n_clinical = 1;
    sc.n_features = 1;
    SimResult result = simulate(sc);
    GramSet grams = gram_set(result.cohort, result.truth.kernel_params);
    auto whiten = [&](const Eigen::MatrixXd& k, double tau2,
                      const Eigen::MatrixXd& h, std::vector<double>& out) {
      Eigen::MatrixXd cov =
          tau2 * k + 1e-12 * Eigen::MatrixXd::Identity(k.rows(), k.cols());
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      REQUIRE(llt.info() == Eigen::Success);
      Eigen::VectorXd z = llt.matrixL().solve(Eigen::VectorXd(h.col(0)));
      for (int i = 0; i < z.size(); ++i) out.push_back(z[i]);
    };
    whiten(grams.K_G, sc.theta_true.tau2_G, result.truth.h_G, zg);
    whiten(grams.K_C, sc.theta_true.tau2_C, result.truth.h_C, zc);
    whiten(grams.K_I, sc.theta_true.tau2_I, result.truth.h_I, zi);
  }
  auto moments = [](const std::vector<double>& z) {
    double mean = 0.0, var = 0.0;
    for (double v : z) mean += v;
    mean /= z.size();
    for (double v : z) var += (v - mean) * (v - mean);
    var /= (z.size() - 1);
    return std::pair{mean, var};
  };
  for (const auto* z : {&zg, &zc, &zi}) {
    auto [mean, var] = moments(*z);
    CHECK(std::abs(mean) < 0.08);
    CHECK(std::abs(var - 1.0) < 0.12);
  }
  // Streams are mutually independent.
  double cross = 0.0;
  for (std::size_t i = 0; i < zg.size(); ++i) cross += zg[i] * zc[i];
  cross /= zg.size();
  CHECK(std::abs(cross) < 0.08);
}

TEST_CASE("the mvn sampler reproduces its covariance") {
  Eigen::Matrix3d cov;
  cov << 2.0, 0.6, -0.3, 0.6, 1.5, 0.2, -0.3, 0.2, 1.0;
  Rng rng(77);
  Eigen::Matrix3d emp = Eigen::Matrix3d::Zero();
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x = sample_mvn(rng, cov);
    emp += x * x.transpose();
  }
  emp /= n;
  CHECK((emp - cov).cwiseAbs().maxCoeff() < 0.1 * cov.norm());

  Rng r1(5), r2(5);
  CHECK(sample_mvn(r1, cov) == sample_mvn(r2, cov));

  Eigen::Matrix2d indefinite;
  indefinite << 1.0, 2.0, 2.0, 1.0;
  Rng r3(6);
  try {
    sample_mvn(r3, indefinite);
    FAIL("expected a singular covariance error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingularV);
  }
}

TEST_CASE("scenario validation rejects malformed configurations") {
  SimScenario good = scalar_scenario(48);
  CHECK(!run_invalid(good).has_value());

  auto mutate = [&](auto fn) {
    SimScenario sc = scalar_scenario(48);
    fn(sc);
    return run_invalid(sc);
  };
  CHECK(mutate([](SimScenario& s) { s.strata.clear(); }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.strata[0].name = "has_underscore"; }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.strata[1].name = s.strata[0].name; }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.strata[0].count = 0; }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.maf[1] = 0.6; }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.maf[0] = 0.0; }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) {
          s.maf = Eigen::VectorXd::Constant(2, 0.3);
        }) == ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.schedule = {1.0, 1.0}; }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.schedule = {-1.0, 2.0}; }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.schedule.clear(); }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.theta_true.sigma2 = 0.0; }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.theta_true.tau2_C = -0.1; }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.n_features = 0; }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.beta_bar_true.resize(0); }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate([](SimScenario& s) { s.baseline_age_max = 10.0; }) ==
        ErrorCode::InvalidScenario);

  auto mutate_anat = [&](auto fn) {
    SimScenario sc = anatomy_scenario(49);
    fn(sc);
    return run_invalid(sc);
  };
  CHECK(mutate_anat([](SimScenario& s) { s.grid_width = 8; }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate_anat([](SimScenario& s) { s.growth_rates.resize(0); }) ==
        ErrorCode::InvalidScenario);
  CHECK(mutate_anat([](SimScenario& s) { s.mode_amplitude = 0.0; }) ==
        ErrorCode::InvalidScenario);
}

TEST_CASE("scenario files parse, apply defaults, and reject junk") {
  auto dir = fs::temp_directory_path() / "longipred_sim_json";
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "good.json");
    out << R"({"mode":"scalar","seed":9,"strata":[{"name":"a","count":3}],
              "loci":4,"clinical":2,"maf":[0.3],"schedule":[1.0,2.5],
              "theta":{"tau2_G":1.0,"tau2_C":0.5,"tau2_I":0.25,"sigma2":0.4},
              "features":2,"beta_bar":[1.5,-0.5]})";
  }
  SimScenario sc = load_scenario(dir / "good.json");
  CHECK(sc.seed == 9);
  CHECK(sc.strata.size() == 1);
  CHECK(sc.strata[0].effect_scale == 1.0);
  CHECK(sc.n_loci == 4);
  REQUIRE(sc.maf.size() == 4);   // scalar maf broadcasts across loci
  CHECK(sc.maf[3] == 0.3);
  CHECK(sc.schedule == std::vector<double>{1.0, 2.5});
  CHECK(sc.theta_true.sigma2 == 0.4);
  CHECK(sc.beta_bar_true.size() == 2);
  CHECK(sc.baseline_age_min == 65.0);

  {
    std::ofstream out(dir / "broken.json");
    out << "{\"mode\": ";
  }
  try {
    load_scenario(dir / "broken.json");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
  }

  {
    std::ofstream out(dir / "badmode.json");
    out << R"({"mode":"volumetric","seed":1,"strata":[{"name":"a","count":2}],
              "loci":1,"clinical":1,"maf":[0.2],"schedule":[1.0],
              "theta":{"tau2_G":0,"tau2_C":0,"tau2_I":0,"sigma2":1},
              "features":1,"beta_bar":[1.0]})";
  }
  try {
    load_scenario(dir / "badmode.json");
    FAIL("expected an invalid scenario error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidScenario);
  }

  {
    std::ofstream out(dir / "missing.json");
    out << R"({"mode":"scalar","seed":1})";
  }
  try {
    load_scenario(dir / "missing.json");
    FAIL("expected an invalid scenario error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidScenario);
  }
}

TEST_CASE("anatomy cohorts expose a usable atlas and basis") {
  SimScenario sc = anatomy_scenario(50);
  SimResult result = simulate(sc);
  REQUIRE(result.truth.atlas.has_value());
  REQUIRE(result.truth.deformation.has_value());
  const Atlas& atlas = *result.truth.atlas;
  CHECK(atlas.n_labels == 4);
  CHECK(atlas.intensity.grid.width == 32);

  std::set<int> seen(atlas.labels.labels.begin(), atlas.labels.labels.end());
  CHECK(seen == std::set<int>{1, 2, 3, 4});
  CHECK(atlas.intensity.pixels.minCoeff() >= 0.0);
  CHECK(atlas.intensity.pixels.maxCoeff() <= 1.0);

  int m = result.truth.deformation->n_components();
  CHECK(m >= 3);
  CHECK(result.cohort.n_phenotypes() == m);
  CHECK(result.truth.beta_bar_true.size() == m);

  REQUIRE(static_cast<int>(result.truth.baseline_fields.size()) ==
          result.cohort.n_subjects());
  for (const DisplacementField& f : result.truth.baseline_fields) {
    CHECK_NOTHROW(invert(f));
  }

  check_truth_identity(result, 1e-9);
}

TEST_CASE("the atlas is reproducible from the seed alone") {
  SimScenario sc = anatomy_scenario(51);
  AnatomySetup a = make_anatomy_atlas(sc);
  AnatomySetup b = make_anatomy_atlas(sc);
  CHECK(a.atlas.intensity.pixels.matrix() == b.atlas.intensity.pixels.matrix());
  CHECK(a.atlas.labels.labels == b.atlas.labels.labels);
  CHECK(a.baseline_coeffs == b.baseline_coeffs);
  REQUIRE(a.modes.size() == b.modes.size());
  CHECK(a.modes.size() == 3);
}

TEST_CASE("outward ring displacement shrinks the enclosed label") {
  SimScenario sc = anatomy_scenario(52);
  AnatomySetup setup = make_anatomy_atlas(sc);
  const DisplacementField& mode = setup.modes.front();
  auto volume = [&](double t) {
    DisplacementField f = mode;
    f.ux *= t;
    f.uy *= t;
    LabelMap warped = warp_labels(setup.atlas.labels, f);
    int count = 0;
    for (int label : warped.labels) count += label == 2 ? 1 : 0;
    return count;
  };
  int v0 = volume(0.0);
  int v1 = volume(0.8);
  int v2 = volume(1.6);
  CHECK(v0 >= v1);
  CHECK(v1 >= v2);
  CHECK(v2 < v0);
}

TEST_CASE("anatomy outputs include the atlas and basis files") {
  SimScenario sc = anatomy_scenario(53);
  auto dir = fs::temp_directory_path() / "longipred_sim_anat";
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_sim_outputs(simulate(sc), dir);
  for (const char* name :
       {"subjects.csv", "observations.csv", "truth.json", "atlas.pgm",
        "atlas_labels.pgm", "deformation_model.json"}) {
    CHECK(fs::exists(dir / name));
  }
  Atlas loaded;
  loaded.intensity = read_pgm(dir / "atlas.pgm");
  loaded.labels = read_label_pgm(dir / "atlas_labels.pgm");
  CHECK(loaded.intensity.grid.width == 32);
  std::set<int> seen(loaded.labels.labels.begin(), loaded.labels.labels.end());
  CHECK(seen.size() == 4);
}
