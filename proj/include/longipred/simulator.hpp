#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "longipred/cohort.hpp"
#include "longipred/deformation.hpp"
#include "longipred/kernels.hpp"
#include "longipred/mixedmodel.hpp"
#include "longipred/util.hpp"

namespace longipred {

enum class SimMode { kScalar, kAnatomy2d };

/// Subjects are named "<stratum>_<0000 index>"; effect_scale multiplies the
/// population slope for the stratum (1 everywhere for a homogeneous cohort).
struct SimStratum {
  std::string name;
  int count = 0;
  double effect_scale = 1.0;
};

struct SimScenario {
  SimMode mode = SimMode::kScalar;
  std::uint64_t seed = 0;
  std::vector<SimStratum> strata;

  int n_loci = 0;
  int n_clinical = 0;
  Eigen::VectorXd maf;              // length n_loci, entries in (0, 0.5]
  std::vector<double> schedule;     // follow-up age offsets, strictly increasing, > 0
  VarianceComponents theta_true;    // shared across phenotype dimensions
  double baseline_age_min = 65.0;
  double baseline_age_max = 75.0;

  // scalar mode
  int n_features = 0;               // standard-normal feature vector length
  Eigen::VectorXd beta_bar_true;    // length M
  double baseline_phenotype_mean = 100.0;
  double baseline_phenotype_spread = 10.0;

  // anatomy mode: phenotype dimensions and features are the per-label
  // basis coefficients, so M and P emerge from the fit.
  int grid_width = 64;
  int grid_height = 64;
  double mode_amplitude = 0.8;      // baseline coefficient spread, px
  Eigen::VectorXd growth_rates;     // px per year along each smooth mode

  int total_subjects() const;
};

SimScenario load_scenario(const std::filesystem::path& path);

/// Ground truth in canonical order (subjects sorted by id, observations
/// sorted by id then age). The stacked identity
///   dy = dx (scale beta + h_G + h_C + h_I) + noise
/// holds exactly, entry by entry.
struct SimTruth {
  std::vector<std::string> subject_ids;
  std::vector<std::string> stratum_of;
  Eigen::VectorXd effect_scale;       // per subject
  Eigen::VectorXd beta_bar_true;      // length M
  VarianceComponents theta_true;
  KernelParams kernel_params;         // used for the h draws
  Eigen::MatrixXd h_G, h_C, h_I;      // N x M
  Eigen::MatrixXd noise;              // n x M

  // anatomy mode
  std::optional<Atlas> atlas;
  std::optional<DeformationModel> deformation;
  std::vector<DisplacementField> baseline_fields;   // per subject
};

struct SimResult {
  Cohort cohort;
  SimTruth truth;
};

SimResult simulate(const SimScenario& scenario);

/// Exact zero-mean multivariate normal draw: Cholesky of cov + 1e-12 I.
Eigen::VectorXd sample_mvn(Rng& rng, const Eigen::MatrixXd& cov);

struct AnatomySetup {
  Atlas atlas;
  std::vector<DisplacementField> modes;             // smooth unit patterns
  std::vector<DisplacementField> baseline_fields;   // per subject, id order
  Eigen::MatrixXd baseline_coeffs;                  // N x n_modes
};

/// Concentric four-label atlas plus per-subject smooth low-rank fields,
/// reproducible from scenario.seed alone.
AnatomySetup make_anatomy_atlas(const SimScenario& scenario);

/// Cohort CSVs, truth.json, and in anatomy mode the atlas images and the
/// basis model, all under out_dir.
void write_sim_outputs(const SimResult& result,
                       const std::filesystem::path& out_dir);

}  // namespace longipred
