#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "longipred/cohort.hpp"
#include "longipred/kernels.hpp"

namespace longipred {

struct VarianceComponents {
  double tau2_G = 0.0;
  double tau2_C = 0.0;
  double tau2_I = 0.0;
  double sigma2 = 1.0;   // > 0
};

struct FitOptions {
  double tol = 1e-6;       // converged when max |score| < tol * n
  int max_iter = 200;
  bool reml = false;       // extension; default is plain maximum likelihood
  bool pin_tau_zero = false;  // population trend only, closed form
};

/// Per-phenotype-dimension fit, all at the same training subject order.
struct DimensionFit {
  double beta_bar = 0.0;
  VarianceComponents theta;
  Eigen::VectorXd alpha_G, alpha_C, alpha_I;   // length N
  std::vector<double> loglik_trace;            // non-decreasing
  int iterations = 0;
  bool converged = false;
};

struct FittedModel {
  std::vector<DimensionFit> dims;   // M entries
  Eigen::VectorXd beta_bar_pop;     // per-dim slope with all tau2 pinned to 0
  KernelParams params;
  double max_train_dx = 0.0;        // largest training age offset, for
                                    // extrapolation warnings
  // Training subject bank, in canonical subject order.
  std::vector<std::string> subject_ids;
  std::vector<std::vector<int>> genotypes;
  Eigen::MatrixXd clinical;   // N x Q, raw values
  Eigen::MatrixXd features;   // N x P

  int n_dims() const { return static_cast<int>(dims.size()); }
  int n_train_subjects() const { return static_cast<int>(subject_ids.size()); }
  bool all_converged() const;
  Eigen::VectorXd beta_bar() const;
};

/// Exact Gaussian log-density of the stacked phenotype changes for one
/// dimension, with marginal covariance
///   V = sum_D tau2_D diag(dx) Z K_D Z' diag(dx) + sigma2 I.
double log_likelihood(const Cohort& cohort, const GramSet& grams,
                      double beta_bar, const VarianceComponents& theta,
                      int dim);

/// Log-likelihood at the generalized-least-squares slope for this theta.
/// Returns the profiled value and writes the slope to beta_out.
double profile_log_likelihood(const Cohort& cohort, const GramSet& grams,
                              const VarianceComponents& theta, int dim,
                              double& beta_out);

/// Residual (REML) variant; the slope is profiled out, so no beta argument.
double reml_log_likelihood(const Cohort& cohort, const GramSet& grams,
                           const VarianceComponents& theta, int dim);

/// Score d l / d theta in component order (tau2_G, tau2_C, tau2_I, sigma2)
/// and the Fisher information 0.5 tr(Vi V_k Vi V_l). With reml = true the
/// restricted-likelihood projection replaces Vi and beta_bar is ignored
/// (the restricted likelihood does not depend on it).
void score_and_fisher(const Cohort& cohort, const GramSet& grams,
                      double beta_bar, const VarianceComponents& theta,
                      int dim, Eigen::Vector4d& score, Eigen::Matrix4d& info,
                      bool reml = false);

/// Fisher scoring with step halving and nonnegativity projection, one
/// independent fit per phenotype dimension. Never throws on hitting
/// max_iter; the per-dimension converged flag records it.
FittedModel fit(const Cohort& cohort, const GramSet& grams,
                const FitOptions& opts = {});

}  // namespace longipred
