#include "longipred/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "longipred/errors.hpp"

namespace longipred {

Eigen::VectorXd KernelParams::standardize(const Eigen::VectorXd& clinical) const {
  if (clinical.size() != clinical_mean.size()) {
    fail(ErrorCode::LengthMismatch, "clinical vector width mismatch");
  }
  return (clinical - clinical_mean).cwiseQuotient(clinical_scale);
}

double ibs_kernel(const std::vector<int>& g_i, const std::vector<int>& g_j) {
  if (g_i.size() != g_j.size() || g_i.empty()) {
    fail(ErrorCode::LengthMismatch, "genotype vectors of unequal or zero length");
  }
  int shared = 0;
  for (std::size_t s = 0; s < g_i.size(); ++s) {
    if (g_i[s] < 0 || g_i[s] > 2 || g_j[s] < 0 || g_j[s] > 2) {
      fail(ErrorCode::BadGenotype, "genotype value outside {0,1,2}");
    }
    shared += 2 - std::abs(g_i[s] - g_j[s]);
  }
  return static_cast<double>(shared) / (2.0 * static_cast<double>(g_i.size()));
}

double clinical_kernel(const Eigen::VectorXd& c_i, const Eigen::VectorXd& c_j,
                       const Eigen::VectorXd& w, double sigma2_C) {
  if (c_i.size() != c_j.size() || c_i.size() != w.size()) {
    fail(ErrorCode::LengthMismatch, "clinical vector width mismatch");
  }
  if (!(sigma2_C > 0.0)) {
    fail(ErrorCode::NonPositiveVariance, "sigma2_C must be positive");
  }
  Eigen::VectorXd diff = c_i - c_j;
  double dist = diff.cwiseProduct(diff).dot(w);
  return std::exp(-dist / sigma2_C);
}

double image_kernel(const Eigen::VectorXd& f_i, const Eigen::VectorXd& f_j,
                    double sigma2_I) {
  if (f_i.size() != f_j.size()) {
    fail(ErrorCode::LengthMismatch, "feature vector width mismatch");
  }
  if (!(sigma2_I > 0.0)) {
    fail(ErrorCode::NonPositiveVariance, "sigma2_I must be positive");
  }
  return std::exp(-(f_i - f_j).squaredNorm() / sigma2_I);
}

namespace {

double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  if (n == 0) return 0.0;
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

namespace {

/// Standardization from the training mean/stddev; rejects constant columns.
void fit_standardizer(const Cohort& cohort, KernelParams& params) {
  int big_n = cohort.n_subjects();
  int q = cohort.n_clinical();
  if (big_n < 2) {
    fail(ErrorCode::DegenerateCohort, "need at least 2 subjects");
  }
  params.clinical_mean.resize(q);
  params.clinical_scale.resize(q);
  for (int k = 0; k < q; ++k) {
    double mean = 0.0;
    for (const auto& s : cohort.subjects) mean += s.clinical[k];
    mean /= big_n;
    double ss = 0.0;
    for (const auto& s : cohort.subjects) {
      double d = s.clinical[k] - mean;
      ss += d * d;
    }
    double var = ss / (big_n - 1);
    if (!(var > 0.0)) {
      fail(ErrorCode::DegenerateCohort,
           "clinical indicator " + std::to_string(k + 1) + " has zero variance");
    }
    params.clinical_mean[k] = mean;
    params.clinical_scale[k] = std::sqrt(var);
  }
}

Eigen::MatrixXd standardized_clinical(const Cohort& cohort,
                                      const KernelParams& params) {
  Eigen::MatrixXd std_clin(cohort.n_subjects(), cohort.n_clinical());
  for (int i = 0; i < cohort.n_subjects(); ++i) {
    std_clin.row(i) = params.standardize(cohort.subjects[i].clinical).transpose();
  }
  return std_clin;
}

void fit_bandwidths(const Cohort& cohort, const Eigen::MatrixXd& std_clin,
                    KernelParams& params) {
  int big_n = cohort.n_subjects();
  std::vector<double> clin_dists, feat_dists;
  clin_dists.reserve(big_n * (big_n - 1) / 2);
  feat_dists.reserve(big_n * (big_n - 1) / 2);
  for (int i = 0; i < big_n; ++i) {
    for (int j = i + 1; j < big_n; ++j) {
      Eigen::VectorXd diff = (std_clin.row(i) - std_clin.row(j)).transpose();
      clin_dists.push_back(diff.cwiseProduct(diff).dot(params.w));
      feat_dists.push_back((cohort.subjects[i].baseline_features -
                            cohort.subjects[j].baseline_features)
                               .squaredNorm());
    }
  }
  params.sigma2_C = median_of(std::move(clin_dists));
  params.sigma2_I = median_of(std::move(feat_dists));
  if (!(params.sigma2_C > 0.0)) {
    fail(ErrorCode::DegenerateCohort, "median clinical distance is zero");
  }
  if (!(params.sigma2_I > 0.0)) {
    fail(ErrorCode::DegenerateCohort, "median feature distance is zero");
  }
}

}  // namespace

KernelParams estimate_kernel_params(const Cohort& cohort) {
  int big_n = cohort.n_subjects();
  int q = cohort.n_clinical();
  KernelParams params;
  fit_standardizer(cohort, params);
  Eigen::MatrixXd std_clin = standardized_clinical(cohort, params);

  // Per-subject mean annual change, averaged over follow-ups and phenotype
  // dimensions; subjects observed only at baseline carry no signal and drop
  // out of the weight regression.
  Deltas d = deltas(cohort);
  std::vector<double> rate(big_n, 0.0);
  std::vector<int> rate_count(big_n, 0);
  for (int k = 0; k < cohort.n_observations(); ++k) {
    if (d.dx[k] == 0.0) continue;
    rate[cohort.incidence[k]] += d.dy.row(k).mean() / d.dx[k];
    ++rate_count[cohort.incidence[k]];
  }
  std::vector<int> informative;
  for (int i = 0; i < big_n; ++i) {
    if (rate_count[i] > 0) {
      rate[i] /= rate_count[i];
      informative.push_back(i);
    }
  }
  if (informative.empty()) {
    fail(ErrorCode::DegenerateCohort, "no observation after baseline age");
  }

  params.w.resize(q);
  double rate_mean = 0.0;
  for (int i : informative) rate_mean += rate[i];
  rate_mean /= static_cast<double>(informative.size());
  for (int k = 0; k < q; ++k) {
    double s_mean = 0.0;
    for (int i : informative) s_mean += std_clin(i, k);
    s_mean /= static_cast<double>(informative.size());
    double sxy = 0.0, sxx = 0.0;
    for (int i : informative) {
      double dxk = std_clin(i, k) - s_mean;
      sxy += dxk * (rate[i] - rate_mean);
      sxx += dxk * dxk;
    }
    params.w[k] = sxx > 0.0 ? std::abs(sxy / sxx) : 0.0;
  }
  double trace = params.w.sum();
  if (trace > 0.0) {
    params.w *= static_cast<double>(q) / trace;
  } else {
    params.w.setOnes();
  }

  fit_bandwidths(cohort, std_clin, params);
  return params;
}

KernelParams default_kernel_params(const Cohort& cohort) {
  KernelParams params;
  fit_standardizer(cohort, params);
  params.w = Eigen::VectorXd::Ones(cohort.n_clinical());
  fit_bandwidths(cohort, standardized_clinical(cohort, params), params);
  return params;
}

namespace {

/// Lifts the diagonal in multiples of `unit` until the smallest eigenvalue
/// is nonnegative. Returns the amount added (0 for an already-PSD matrix).
double repair_psd(Eigen::MatrixXd& k_mat, double unit) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k_mat,
                                                     Eigen::EigenvaluesOnly);
  double min_eig = eig.eigenvalues().minCoeff();
  if (min_eig >= 0.0) return 0.0;
  double amount = unit * std::ceil(-min_eig / unit);
  k_mat.diagonal().array() += amount;
  return amount;
}

}  // namespace

GramSet gram_set(const Cohort& cohort, const KernelParams& params) {
  int big_n = cohort.n_subjects();
  GramSet grams;
  grams.params = params;
  grams.K_G.resize(big_n, big_n);
  grams.K_C.resize(big_n, big_n);
  grams.K_I.resize(big_n, big_n);

  Eigen::MatrixXd std_clin(big_n, params.clinical_mean.size());
  for (int i = 0; i < big_n; ++i) {
    std_clin.row(i) = params.standardize(cohort.subjects[i].clinical).transpose();
  }

  for (int i = 0; i < big_n; ++i) {
    grams.K_G(i, i) = grams.K_C(i, i) = grams.K_I(i, i) = 1.0;
    for (int j = i + 1; j < big_n; ++j) {
      double kg = ibs_kernel(cohort.subjects[i].genotype,
                             cohort.subjects[j].genotype);
      double kc = clinical_kernel(std_clin.row(i).transpose(),
                                  std_clin.row(j).transpose(), params.w,
                                  params.sigma2_C);
      double ki = image_kernel(cohort.subjects[i].baseline_features,
                               cohort.subjects[j].baseline_features,
                               params.sigma2_I);
      grams.K_G(i, j) = grams.K_G(j, i) = kg;
      grams.K_C(i, j) = grams.K_C(j, i) = kc;
      grams.K_I(i, j) = grams.K_I(j, i) = ki;
    }
  }

  double unit = params.jitter * big_n;
  grams.jitter_G = repair_psd(grams.K_G, unit);
  grams.jitter_C = repair_psd(grams.K_C, unit);
  grams.jitter_I = repair_psd(grams.K_I, unit);
  return grams;
}

}  // namespace longipred
