#pragma once

#include <Eigen/Dense>
#include <vector>

#include "longipred/cohort.hpp"

namespace longipred {

/// Kernel hyperparameters plus the clinical standardization frozen at
/// training time. Clinical vectors are standardized with `clinical_mean` /
/// `clinical_scale` before any kernel evaluation, at training and at
/// prediction time alike.
struct KernelParams {
  Eigen::VectorXd w;               // diagonal weights, length Q, entries >= 0
  double sigma2_C = 1.0;           // > 0
  double sigma2_I = 1.0;           // > 0
  double jitter = 1e-10;           // per-subject diagonal repair unit
  Eigen::VectorXd clinical_mean;   // length Q
  Eigen::VectorXd clinical_scale;  // length Q, entries > 0

  Eigen::VectorXd standardize(const Eigen::VectorXd& clinical) const;
};

struct GramSet {
  Eigen::MatrixXd K_G, K_C, K_I;   // N x N, symmetric
  KernelParams params;
  // Amount actually added to each diagonal (0 when the matrix needed none).
  double jitter_G = 0.0, jitter_C = 0.0, jitter_I = 0.0;
};

/// Allele-sharing similarity in [0,1]: mean over loci of (2 - |g_i - g_j|)/2.
double ibs_kernel(const std::vector<int>& g_i, const std::vector<int>& g_j);

/// exp(-(1/sigma2_C) * sum_k w_k (c_i[k] - c_j[k])^2). Callers pass
/// standardized clinical vectors.
double clinical_kernel(const Eigen::VectorXd& c_i, const Eigen::VectorXd& c_j,
                       const Eigen::VectorXd& w, double sigma2_C);

/// exp(-(1/sigma2_I) * ||f_i - f_j||^2).
double image_kernel(const Eigen::VectorXd& f_i, const Eigen::VectorXd& f_j,
                    double sigma2_I);

/// Data-driven hyperparameters:
///  - clinical standardization from training mean/stddev;
///  - w_k = |slope| of the per-subject mean observed annual phenotype change
///    regressed on standardized clinical indicator k, rescaled to trace Q
///    (all-zero slopes fall back to uniform weights);
///  - sigma2_C = median over subject pairs of the w-weighted squared
///    clinical distance; sigma2_I = median squared feature distance.
KernelParams estimate_kernel_params(const Cohort& cohort);

/// Same standardization and median bandwidths but uniform weights; uses no
/// outcome data, so it works on a cohort without observations.
KernelParams default_kernel_params(const Cohort& cohort);

/// The three Gram matrices over cohort subjects. Exact symmetry by
/// construction; if an eigenvalue dips below zero the diagonal is lifted in
/// multiples of jitter * N until none does.
GramSet gram_set(const Cohort& cohort, const KernelParams& params);

}  // namespace longipred
