#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "longipred/errors.hpp"
#include "longipred/metrics.hpp"
#include "testutil.hpp"

using namespace longipred;
namespace fs = std::filesystem;

namespace {

LabelMap strip_map(int first, int count) {
  LabelMap map;
  map.grid = {10, 10};
  map.labels.assign(100, 1);
  for (int i = first; i < first + count; ++i) map.labels[i] = 2;
  return map;
}

Subject ranked_subject(const std::string& id, double baseline) {
  Subject s;
  s.id = id;
  s.baseline_age = 70.0;
  s.genotype = {1};
  s.clinical = Eigen::VectorXd::Constant(1, 0.0);
  s.baseline_features = Eigen::VectorXd::Constant(1, 0.0);
  s.baseline_phenotype = Eigen::VectorXd::Constant(1, baseline);
  return s;
}

Observation at(const std::string& id, double age, double value) {
  Observation o;
  o.subject_id = id;
  o.age = age;
  o.phenotype = Eigen::VectorXd::Constant(1, value);
  return o;
}

}  // namespace

TEST_CASE("relative error and its zero-truth guard") {
  CHECK(relative_error(10.0, 10.0) == 0.0);
  CHECK(relative_error(9.0, 10.0) == doctest::Approx(0.1));
  CHECK(relative_error(0.0, 10.0) == 1.0);
  CHECK(relative_error(-11.0, 10.0) == doctest::Approx(2.1));
  CHECK(relative_error(3.0, -2.0) == doctest::Approx(2.5));
  try {
    relative_error(1.0, 0.0);
    FAIL("expected a zero-truth error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroTruth);
  }
}

TEST_CASE("dice overlap on hand-built regions") {
  LabelMap a = strip_map(0, 50);
  CHECK(dice(a, a, 2) == 1.0);
  CHECK(dice(a, strip_map(50, 50), 2) == 0.0);
  LabelMap half = strip_map(25, 50);
  CHECK(dice(a, half, 2) == doctest::Approx(0.5));
  CHECK(dice(a, half, 2) == dice(half, a, 2));
  // Label 3 appears in neither map: perfect agreement by convention.
  CHECK(dice(a, half, 3) == 1.0);

  LabelMap small;
  small.grid = {5, 5};
  small.labels.assign(25, 1);
  try {
    dice(a, small, 1);
    FAIL("expected a grid mismatch error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("top-decile ranking by relative phenotype change") {
  SUBCASE("the largest mover wins") {
    std::vector<Subject> subjects;
    std::vector<Observation> observations;
    for (int i = 0; i < 10; ++i) {
      std::string id = "s0" + std::to_string(i);
      subjects.push_back(ranked_subject(id, 10.0));
      double bump = i == 5 ? 5.0 : 1.0;
      observations.push_back(at(id, 71.0, 10.0 + bump));
    }
    Cohort cohort = make_cohort(subjects, observations);
    CHECK(top_decile(cohort, 0) == std::vector<std::string>{"s05"});
  }

  SUBCASE("ties fall to the lexicographically smallest ids") {
    std::vector<Subject> subjects;
    std::vector<Observation> observations;
    for (int i = 0; i < 10; ++i) {
      std::string id = "s0" + std::to_string(i);
      subjects.push_back(ranked_subject(id, 10.0));
      observations.push_back(at(id, 71.0, 11.0));
    }
    Cohort cohort = make_cohort(subjects, observations);
    CHECK(top_decile(cohort, 0) == std::vector<std::string>{"s00"});
  }

  SUBCASE("twenty subjects yield two sorted ids") {
    std::vector<Subject> subjects;
    std::vector<Observation> observations;
    for (int i = 0; i < 20; ++i) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "s%02d", i);
      subjects.push_back(ranked_subject(buf, 10.0));
      double bump = (i == 17 || i == 3) ? 4.0 : 1.0;
      observations.push_back(at(buf, 71.0, 10.0 + bump));
    }
    Cohort cohort = make_cohort(subjects, observations);
    CHECK(top_decile(cohort, 0) == std::vector<std::string>{"s03", "s17"});
  }

  SUBCASE("a zero baseline counts as an infinite change") {
    std::vector<Subject> subjects;
    std::vector<Observation> observations;
    for (int i = 0; i < 10; ++i) {
      std::string id = "s0" + std::to_string(i);
      subjects.push_back(ranked_subject(id, i == 7 ? 0.0 : 10.0));
      observations.push_back(at(id, 71.0, i == 7 ? 0.5 : 30.0));
    }
    Cohort cohort = make_cohort(subjects, observations);
    CHECK(top_decile(cohort, 0) == std::vector<std::string>{"s07"});
  }

  SUBCASE("only the last follow-up matters") {
    std::vector<Subject> subjects = {ranked_subject("a", 10.0),
                                     ranked_subject("b", 10.0)};
    std::vector<Observation> observations = {
        at("a", 71.0, 40.0), at("a", 72.0, 10.5),   // ends close to baseline
        at("b", 71.0, 10.1), at("b", 72.0, 13.0)};
    Cohort cohort = make_cohort(subjects, observations);
    CHECK(top_decile(cohort, 0) == std::vector<std::string>{"b"});
  }

  SUBCASE("subjects without follow-ups are not eligible") {
    std::vector<Subject> subjects;
    std::vector<Observation> observations;
    for (int i = 0; i < 10; ++i) {
      std::string id = "s0" + std::to_string(i);
      subjects.push_back(ranked_subject(id, 10.0));
      if (i != 4) observations.push_back(at(id, 71.0, 12.0 + i));
    }
    Cohort cohort = make_cohort(subjects, observations);
    auto ids = top_decile(cohort, 0);
    CHECK(ids == std::vector<std::string>{"s09"});
  }

  SUBCASE("invalid requests carry error codes") {
    Cohort cohort = make_cohort({ranked_subject("a", 1.0)}, {});
    try {
      top_decile(cohort, 1);
      FAIL("expected a dimension error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DimensionMismatch);
    }
    try {
      top_decile(cohort, 0);
      FAIL("expected a degenerate cohort error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateCohort);
    }
  }
}

namespace {

struct EvalFixture {
  ModelBundle bundle;
  Cohort test;

  EvalFixture() {
    Rng rng(650);
    testutil::CohortSpec spec;
    spec.n_subjects = 8;
    Cohort train = testutil::random_cohort(rng, spec);
    KernelParams params = estimate_kernel_params(train);
    bundle.model = fit(train, gram_set(train, params));

    std::vector<Subject> subjects;
    std::vector<Observation> observations;
    auto subject = [&](const std::string& id, double yb, double shift) {
      Subject s;
      s.id = id;
      s.baseline_age = 70.0;
      s.genotype = {0, 1, 2, 1};
      s.clinical = Eigen::VectorXd(2);
      s.clinical << 0.3 + shift, -0.7 + 0.5 * shift;
      s.baseline_features = Eigen::VectorXd(2);
      s.baseline_features << 1.0 - shift, 0.25 * shift;
      s.baseline_phenotype = Eigen::VectorXd::Constant(1, yb);
      return s;
    };
    subjects.push_back(subject("t1", 10.0, 0.0));
    subjects.push_back(subject("t2", 8.0, 0.5));
    subjects.push_back(subject("t3", 5.0, 1.0));
    observations.push_back(at("t1", 72.0, 12.5));   // carry error 0.2
    observations.push_back(at("t2", 72.0, 20.0));   // carry error 0.6
    observations.push_back(at("t3", 72.0, 0.0));    // zero truth, skipped
    test = make_cohort(subjects, observations);
  }
};

}  // namespace

TEST_CASE_FIXTURE(EvalFixture, "method comparison aggregates carry errors") {
  EvalReport report =
      compare_methods(bundle, test, {"full", "pop", "carry"});
  CHECK(report.methods == std::vector<std::string>{"full", "pop", "carry"});
  REQUIRE(report.cells.size() == 3);
  const MethodDimStats* carry = nullptr;
  for (const auto& cell : report.cells) {
    CHECK(cell.dim == 0);
    CHECK(cell.n_overall == 2);   // the zero-truth pair is skipped
    CHECK(cell.n_top == 1);
    CHECK(std::isfinite(cell.mean_rel_err));
    if (cell.method == "carry") carry = &cell;
  }
  REQUIRE(carry != nullptr);
  CHECK(carry->mean_rel_err == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(carry->median_rel_err == doctest::Approx(0.4).epsilon(1e-12));
  // Top decile of three subjects is t2 alone (relative change 1.5).
  CHECK(carry->mean_rel_err_top == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(carry->median_rel_err_top == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(report.dice_cells.empty());
}

TEST_CASE_FIXTURE(EvalFixture, "method comparison is deterministic") {
  EvalReport a = compare_methods(bundle, test, {"full", "carry"});
  EvalReport b = compare_methods(bundle, test, {"full", "carry"});
  REQUIRE(a.cells.size() == b.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    CHECK(a.cells[i].mean_rel_err == b.cells[i].mean_rel_err);
    CHECK(a.cells[i].median_rel_err == b.cells[i].median_rel_err);
    CHECK(a.cells[i].mean_rel_err_top == b.cells[i].mean_rel_err_top);
  }
}

TEST_CASE_FIXTURE(EvalFixture, "method comparison rejects bad requests") {
  try {
    compare_methods(bundle, test, {"full", "oracle"});
    FAIL("expected an unknown method error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidValue);
  }

  Rng rng(651);
  testutil::CohortSpec wide;
  wide.n_subjects = 4;
  wide.n_phenotypes = 2;
  Cohort mismatched = testutil::random_cohort(rng, wide);
  try {
    compare_methods(bundle, mismatched, {"carry"});
    FAIL("expected a width mismatch error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

namespace {

EvalReport tiny_report(double base) {
  EvalReport report;
  report.methods = {"carry"};
  MethodDimStats cell;
  cell.method = "carry";
  cell.dim = 0;
  cell.mean_rel_err = base;
  cell.median_rel_err = base + 1.0;
  cell.mean_rel_err_top = base + 2.0;
  cell.median_rel_err_top = base + 3.0;
  cell.n_overall = 2;
  cell.n_top = 1;
  report.cells.push_back(cell);
  return report;
}

}  // namespace

TEST_CASE("replicate aggregation uses the sample deviation") {
  std::vector<SummaryCell> cells =
      aggregate_reports({tiny_report(1.0), tiny_report(3.0)});
  REQUIRE(cells.size() == 4);
  for (const SummaryCell& cell : cells) {
    CHECK(cell.method == "carry");
    CHECK(cell.dim == 0);
    CHECK(cell.stddev == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  }
  CHECK(cells[0].metric == "mean_rel_err");
  CHECK(cells[0].mean == doctest::Approx(2.0));
  CHECK(cells[3].metric == "median_rel_err_top");
  CHECK(cells[3].mean == doctest::Approx(5.0));

  EvalReport lopsided = tiny_report(1.0);
  lopsided.cells.push_back(lopsided.cells[0]);
  try {
    aggregate_reports({tiny_report(1.0), lopsided});
    FAIL("expected a shape mismatch error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("reports serialize to json and long-format csv") {
  EvalReport report = tiny_report(3.0);
  auto dir = fs::temp_directory_path() / "longipred_metrics_test";
  fs::create_directories(dir);

  write_report_json(report, dir / "report.json");
  std::ifstream in(dir / "report.json");
  nlohmann::json doc = nlohmann::json::parse(in);
  CHECK(doc.at("schema").get<std::string>() == "longipred-report/1");
  REQUIRE(doc.at("cells").size() == 1);
  CHECK(doc["cells"][0].at("mean_rel_err").get<double>() == 3.0);
  CHECK(doc["cells"][0].at("method").get<std::string>() == "carry");

  write_plotdata_csv(report, dir / "plotdata.csv");
  std::ifstream csv(dir / "plotdata.csv");
  std::string line;
  REQUIRE(std::getline(csv, line));
  CHECK(line == "method,stratum,dim,metric,value");
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "carry,overall,0,mean_rel_err,3");
  CHECK(rows[2] == "carry,top_decile,0,mean_rel_err,5");
}
