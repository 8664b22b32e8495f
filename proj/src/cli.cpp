#include "longipred/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "longipred/cohort.hpp"
#include "longipred/csv.hpp"
#include "longipred/deformation.hpp"
#include "longipred/errors.hpp"
#include "longipred/kernels.hpp"
#include "longipred/metrics.hpp"
#include "longipred/mixedmodel.hpp"
#include "longipred/model_io.hpp"
#include "longipred/predictor.hpp"
#include "longipred/simulator.hpp"
#include "longipred/util.hpp"

namespace longipred::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunConfig {
  std::string scenario;
  std::string train;
  std::string test;
  std::string model;
  std::string out;
  std::string config_file;
  std::string stratum_train;
  std::string stratum_test;
  std::string methods = "full,pop,carry";
  std::string deformation;
  std::string horizons;
  std::uint64_t seed = 0;
  bool seed_given = false;
  double tol = 1e-6;
  int max_iter = 200;
  bool reml = false;
  bool allow_unconverged = false;
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  for (char c : text) {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else {
      item += c;
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

Cohort load_dir_cohort(const std::string& dir, const std::string& stratum) {
  Cohort cohort = load_cohort(fs::path(dir) / "subjects.csv",
                              fs::path(dir) / "observations.csv");
  return filter_stratum(cohort, stratum);
}

json manifest_input(const fs::path& path) {
  return json{{"file", path.filename().string()},
              {"sha256", sha256_file(path)}};
}

void write_manifest(const fs::path& out_dir, const std::string& subcommand,
                    const std::vector<fs::path>& inputs, json options) {
  json doc;
  doc["schema"] = "longipred-manifest/1";
  doc["tool_version"] = kToolVersion;
  doc["subcommand"] = subcommand;
  json in = json::array();
  for (const fs::path& p : inputs) in.push_back(manifest_input(p));
  doc["inputs"] = std::move(in);
  doc["options"] = std::move(options);
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write manifest.json");
  out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------- simulate

int do_simulate(RunConfig& cfg) {
  SimScenario scenario = load_scenario(cfg.scenario);
  if (cfg.seed_given) scenario.seed = cfg.seed;
  SimResult result = simulate(scenario);
  fs::create_directories(cfg.out);
  write_sim_outputs(result, cfg.out);
  write_manifest(cfg.out, "simulate", {fs::path(cfg.scenario)},
                 json{{"seed", scenario.seed}});
  return 0;
}

// --------------------------------------------------------------------- fit

int do_fit(RunConfig& cfg) {
  fs::path train_dir(cfg.train);
  Cohort cohort = load_dir_cohort(cfg.train, cfg.stratum_train);
  KernelParams params = estimate_kernel_params(cohort);
  GramSet grams = gram_set(cohort, params);
  FitOptions opts;
  opts.tol = cfg.tol;
  opts.max_iter = cfg.max_iter;
  opts.reml = cfg.reml;

  ModelBundle bundle;
  bundle.model = fit(cohort, grams, opts);

  std::vector<fs::path> inputs = {train_dir / "subjects.csv",
                                  train_dir / "observations.csv"};
  fs::path basis_path;
  if (!cfg.deformation.empty()) {
    basis_path = cfg.deformation;
  } else if (fs::exists(train_dir / "deformation_model.json")) {
    basis_path = train_dir / "deformation_model.json";
  }
  if (!basis_path.empty()) {
    std::ifstream in(basis_path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open " + basis_path.string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::ParseError, basis_path.string() + ": " + e.what());
    }
    bundle.deformation = deformation_from_json(doc);
    inputs.push_back(basis_path);
  }

  fs::create_directories(cfg.out);
  save_model(bundle, fs::path(cfg.out) / "model.json");
  write_manifest(cfg.out, "fit", inputs,
                 json{{"tol", cfg.tol},
                      {"max_iter", cfg.max_iter},
                      {"reml", cfg.reml},
                      {"stratum_train", cfg.stratum_train},
                      {"allow_unconverged", cfg.allow_unconverged}});

  if (!bundle.model.all_converged()) {
    std::cerr << "NotConverged: one or more dimensions hit max-iter"
              << (cfg.allow_unconverged ? " (continuing)" : "") << '\n';
    if (!cfg.allow_unconverged) return 3;
  }
  return 0;
}

// ----------------------------------------------------------------- predict

struct TargetSet {
  std::vector<const Subject*> subjects;
  std::vector<std::vector<double>> ages;   // parallel to subjects
};

TargetSet target_ages(const Cohort& test, const std::string& horizons) {
  TargetSet targets;
  if (!horizons.empty()) {
    std::vector<double> offsets;
    for (const std::string& tok : split_list(horizons)) {
      double value = 0.0;
      if (!parse_double(tok, value)) {
        fail(ErrorCode::ParseError, "bad horizon value " + tok);
      }
      offsets.push_back(value);
    }
    if (offsets.empty()) {
      fail(ErrorCode::InvalidValue, "empty horizon list");
    }
    for (const Subject& subj : test.subjects) {
      targets.subjects.push_back(&subj);
      std::vector<double> ages;
      for (double h : offsets) ages.push_back(subj.baseline_age + h);
      targets.ages.push_back(std::move(ages));
    }
    return targets;
  }
  // Observed follow-up ages; subjects without follow-ups are skipped.
  for (std::size_t i = 0; i < test.subjects.size(); ++i) {
    std::vector<double> ages;
    for (std::size_t o = 0; o < test.observations.size(); ++o) {
      if (test.incidence[o] == static_cast<int>(i)) {
        ages.push_back(test.observations[o].age);
      }
    }
    if (!ages.empty()) {
      targets.subjects.push_back(&test.subjects[i]);
      targets.ages.push_back(std::move(ages));
    }
  }
  return targets;
}

void write_predictions(const FittedModel& model, const TargetSet& targets,
                       const fs::path& path, bool allow_unconverged) {
  csv::Table table;
  table.header = {"id",       "x_t",    "dim",    "y_hat",
                  "term_pop", "term_G", "term_C", "term_I"};
  for (std::size_t s = 0; s < targets.subjects.size(); ++s) {
    PredictionRequest req;
    req.subject = *targets.subjects[s];
    req.target_ages = targets.ages[s];
    Prediction pred = predict(model, req, allow_unconverged);
    for (const std::string& w : pred.warnings) std::cerr << w << '\n';
    for (std::size_t t = 0; t < req.target_ages.size(); ++t) {
      for (int d = 0; d < model.n_dims(); ++d) {
        const PredictionTerms& terms = pred.terms[t][d];
        table.rows.push_back({req.subject.id, format_double(req.target_ages[t]),
                              std::to_string(d), format_double(terms.y_hat),
                              format_double(terms.term_pop),
                              format_double(terms.term_G),
                              format_double(terms.term_C),
                              format_double(terms.term_I)});
      }
    }
  }
  csv::write_file(path, table);
}

int do_predict(RunConfig& cfg) {
  ModelBundle bundle = load_model(cfg.model);
  Cohort test = load_dir_cohort(cfg.test, cfg.stratum_test);
  TargetSet targets = target_ages(test, cfg.horizons);
  fs::create_directories(cfg.out);
  write_predictions(bundle.model, targets, fs::path(cfg.out) / "predictions.csv",
                    cfg.allow_unconverged);
  fs::path test_dir(cfg.test);
  write_manifest(cfg.out, "predict",
                 {fs::path(cfg.model), test_dir / "subjects.csv",
                  test_dir / "observations.csv"},
                 json{{"stratum_test", cfg.stratum_test},
                      {"horizons", cfg.horizons},
                      {"allow_unconverged", cfg.allow_unconverged}});
  return 0;
}

// ---------------------------------------------------------------- evaluate

int do_evaluate(RunConfig& cfg) {
  ModelBundle bundle = load_model(cfg.model);
  Cohort test = load_dir_cohort(cfg.test, cfg.stratum_test);
  std::vector<std::string> methods = split_list(cfg.methods);
  if (methods.empty()) fail(ErrorCode::InvalidValue, "no methods requested");

  fs::path test_dir(cfg.test);
  std::optional<Atlas> atlas;
  fs::path labels_path = test_dir / "atlas_labels.pgm";
  if (bundle.deformation && fs::exists(labels_path)) {
    Atlas a;
    a.labels = read_label_pgm(labels_path);
    a.n_labels = 0;
    for (int label : a.labels.labels) a.n_labels = std::max(a.n_labels, label);
    atlas = std::move(a);
  }

  EvalReport report =
      compare_methods(bundle, test, methods, atlas ? &*atlas : nullptr,
                      cfg.allow_unconverged);
  fs::create_directories(cfg.out);
  write_report_json(report, fs::path(cfg.out) / "report.json");
  write_plotdata_csv(report, fs::path(cfg.out) / "plotdata.csv");

  std::vector<fs::path> inputs = {fs::path(cfg.model),
                                  test_dir / "subjects.csv",
                                  test_dir / "observations.csv"};
  if (atlas) inputs.push_back(labels_path);
  write_manifest(cfg.out, "evaluate", inputs,
                 json{{"methods", cfg.methods},
                      {"stratum_test", cfg.stratum_test},
                      {"allow_unconverged", cfg.allow_unconverged}});
  return 0;
}

// ------------------------------------------------------------- kernel-dump

void write_gram_csv(const fs::path& path, const Eigen::MatrixXd& gram,
                    const std::vector<std::string>& ids) {
  csv::Table table;
  table.header = ids;
  for (Eigen::Index i = 0; i < gram.rows(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index j = 0; j < gram.cols(); ++j) {
      row.push_back(format_double(gram(i, j)));
    }
    table.rows.push_back(std::move(row));
  }
  csv::write_file(path, table);
}

int do_kernel_dump(RunConfig& cfg) {
  fs::path train_dir(cfg.train);
  Cohort cohort = load_dir_cohort(cfg.train, cfg.stratum_train);
  KernelParams params = estimate_kernel_params(cohort);
  GramSet grams = gram_set(cohort, params);
  std::vector<std::string> ids;
  for (const Subject& subj : cohort.subjects) ids.push_back(subj.id);

  fs::create_directories(cfg.out);
  write_gram_csv(fs::path(cfg.out) / "K_G.csv", grams.K_G, ids);
  write_gram_csv(fs::path(cfg.out) / "K_C.csv", grams.K_C, ids);
  write_gram_csv(fs::path(cfg.out) / "K_I.csv", grams.K_I, ids);
  json params_doc = kernel_params_to_json(params);
  params_doc["jitter_added"] = {{"K_G", grams.jitter_G},
                                {"K_C", grams.jitter_C},
                                {"K_I", grams.jitter_I}};
  std::ofstream out(fs::path(cfg.out) / "kernel_params.json", std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write kernel_params.json");
  out << params_doc.dump(2) << '\n';

  write_manifest(cfg.out, "kernel-dump",
                 {train_dir / "subjects.csv", train_dir / "observations.csv"},
                 json{{"stratum_train", cfg.stratum_train}});
  return 0;
}

// ---------------------------------------------------------------- pipeline

int do_pipeline(RunConfig& cfg) {
  fs::path root(cfg.out);
  fs::create_directories(root);

  RunConfig sim = cfg;
  sim.out = (root / "sim").string();
  int rc = do_simulate(sim);
  if (rc != 0) return rc;

  RunConfig fit_cfg = cfg;
  fit_cfg.train = sim.out;
  fit_cfg.out = (root / "fit").string();
  rc = do_fit(fit_cfg);
  if (rc != 0) return rc;

  RunConfig pred_cfg = cfg;
  pred_cfg.model = (fs::path(fit_cfg.out) / "model.json").string();
  pred_cfg.test = sim.out;
  pred_cfg.out = (root / "predict").string();
  rc = do_predict(pred_cfg);
  if (rc != 0) return rc;

  RunConfig eval_cfg = cfg;
  eval_cfg.model = pred_cfg.model;
  eval_cfg.test = sim.out;
  eval_cfg.out = (root / "eval").string();
  rc = do_evaluate(eval_cfg);
  if (rc != 0) return rc;

  write_manifest(root, "pipeline", {fs::path(cfg.scenario)},
                 json{{"seed", cfg.seed_given ? json(cfg.seed) : json()},
                      {"stratum_train", cfg.stratum_train},
                      {"stratum_test", cfg.stratum_test},
                      {"methods", cfg.methods}});
  return 0;
}

// ------------------------------------------------------------------ driver

// Optional JSON config file: {"flag-name": value}. Values are injected as
// flags right after the subcommand so explicit flags win (last one counts).
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open config " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ParseError, path + ": " + e.what());
  }
  if (!doc.is_object()) {
    fail(ErrorCode::InvalidValue, "config must be a JSON object");
  }

  std::vector<std::string> injected;
  for (const auto& [key, value] : doc.items()) {
    if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back("--" + key);
    } else if (value.is_string()) {
      injected.push_back("--" + key);
      injected.push_back(value.get<std::string>());
    } else if (value.is_number_integer()) {
      injected.push_back("--" + key);
      injected.push_back(std::to_string(value.get<long long>()));
    } else if (value.is_number_float()) {
      injected.push_back("--" + key);
      injected.push_back(format_double(value.get<double>()));
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& item : value) {
        if (!joined.empty()) joined += ',';
        joined += item.get<std::string>();
      }
      injected.push_back("--" + key);
      injected.push_back(joined);
    } else {
      fail(ErrorCode::InvalidValue, "unsupported config value for " + key);
    }
  }
  std::vector<std::string> merged;
  merged.push_back(args[0]);
  merged.insert(merged.end(), injected.begin(), injected.end());
  merged.insert(merged.end(), args.begin() + 1, args.end());
  return merged;
}

void add_common_options(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--config", cfg.config_file,
                  "JSON config file; explicit flags win");
  sub->add_option("--out", cfg.out, "output directory")->required();
}

}  // namespace

int run(const std::vector<std::string>& args) {
  RunConfig cfg;
  CLI::App app{"longitudinal kernel-machine phenotype prediction"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  // Config-file values are injected ahead of the explicit argv, so repeated
  // options must resolve to the last occurrence for the explicit flag to win.
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  CLI::App* sim = app.add_subcommand("simulate", "sample a synthetic cohort");
  sim->add_option("--scenario", cfg.scenario, "scenario JSON")->required();
  CLI::Option* seed_opt =
      sim->add_option("--seed", cfg.seed, "override the scenario seed");
  add_common_options(sim, cfg);

  CLI::App* fit_cmd = app.add_subcommand("fit", "estimate the mixed model");
  fit_cmd->add_option("--train", cfg.train, "training cohort directory")
      ->required();
  fit_cmd->add_option("--stratum-train", cfg.stratum_train,
                      "train on this id prefix only");
  fit_cmd->add_option("--tol", cfg.tol, "score convergence tolerance");
  fit_cmd->add_option("--max-iter", cfg.max_iter, "iteration cap");
  fit_cmd->add_flag("--reml", cfg.reml, "restricted maximum likelihood");
  fit_cmd->add_flag("--allow-unconverged", cfg.allow_unconverged,
                    "exit 0 even when a dimension hits max-iter");
  fit_cmd->add_option("--deformation", cfg.deformation,
                      "basis JSON to embed (defaults to the training "
                      "directory's deformation_model.json when present)");
  add_common_options(fit_cmd, cfg);

  CLI::App* pred = app.add_subcommand("predict", "project follow-ups");
  pred->add_option("--model", cfg.model, "fitted model JSON")->required();
  pred->add_option("--test", cfg.test, "test cohort directory")->required();
  pred->add_option("--stratum-test", cfg.stratum_test,
                   "predict this id prefix only");
  pred->add_option("--horizons", cfg.horizons,
                   "comma-separated age offsets (default: observed ages)");
  pred->add_flag("--allow-unconverged", cfg.allow_unconverged,
                 "predict from an unconverged model");
  add_common_options(pred, cfg);

  CLI::App* eval = app.add_subcommand("evaluate", "score methods on held-out data");
  eval->add_option("--model", cfg.model, "fitted model JSON")->required();
  eval->add_option("--test", cfg.test, "test cohort directory")->required();
  eval->add_option("--stratum-test", cfg.stratum_test,
                   "evaluate this id prefix only");
  eval->add_option("--methods", cfg.methods, "subset of full,pop,carry");
  eval->add_flag("--allow-unconverged", cfg.allow_unconverged,
                 "evaluate an unconverged model");
  add_common_options(eval, cfg);

  CLI::App* kdump = app.add_subcommand("kernel-dump", "write Gram matrices");
  kdump->add_option("--train", cfg.train, "cohort directory")->required();
  kdump->add_option("--stratum-train", cfg.stratum_train,
                    "restrict to this id prefix");
  add_common_options(kdump, cfg);

  CLI::App* pipe = app.add_subcommand(
      "pipeline", "simulate, fit, predict, and evaluate in one run");
  pipe->add_option("--scenario", cfg.scenario, "scenario JSON")->required();
  CLI::Option* pipe_seed =
      pipe->add_option("--seed", cfg.seed, "override the scenario seed");
  pipe->add_option("--stratum-train", cfg.stratum_train,
                   "train on this id prefix only");
  pipe->add_option("--stratum-test", cfg.stratum_test,
                   "predict/evaluate this id prefix only");
  pipe->add_option("--methods", cfg.methods, "subset of full,pop,carry");
  pipe->add_option("--tol", cfg.tol, "score convergence tolerance");
  pipe->add_option("--max-iter", cfg.max_iter, "iteration cap");
  pipe->add_flag("--reml", cfg.reml, "restricted maximum likelihood");
  pipe->add_flag("--allow-unconverged", cfg.allow_unconverged,
                 "continue past non-convergence");
  add_common_options(pipe, cfg);

  try {
    std::vector<std::string> merged = apply_config_file(args);
    std::vector<const char*> argv;
    argv.push_back("longipred");
    for (const std::string& a : merged) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    // Covers --help/--version (exit 0) and argument errors (nonzero).
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
  cfg.seed_given = seed_opt->count() > 0 || pipe_seed->count() > 0;

  try {
    if (sim->parsed()) return do_simulate(cfg);
    if (fit_cmd->parsed()) return do_fit(cfg);
    if (pred->parsed()) return do_predict(cfg);
    if (eval->parsed()) return do_evaluate(cfg);
    if (kdump->parsed()) return do_kernel_dump(cfg);
    if (pipe->parsed()) return do_pipeline(cfg);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    bool unconverged = e.code() == ErrorCode::NotConverged ||
                       e.code() == ErrorCode::UnconvergedModel;
    return unconverged ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}

}  // namespace longipred::cli
