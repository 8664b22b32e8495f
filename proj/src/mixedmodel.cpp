#include "longipred/mixedmodel.hpp"

#include <array>
#include <cmath>

#include "longipred/errors.hpp"
#include "longipred/util.hpp"

namespace longipred {

bool FittedModel::all_converged() const {
  for (const auto& d : dims) {
    if (!d.converged) return false;
  }
  return true;
}

Eigen::VectorXd FittedModel::beta_bar() const {
  Eigen::VectorXd b(dims.size());
  for (std::size_t m = 0; m < dims.size(); ++m) b[m] = dims[m].beta_bar;
  return b;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

struct Design {
  int n = 0;
  int big_n = 0;
  Eigen::VectorXd dx;
  std::vector<int> subj;   // observation -> subject index
};

Design make_design(const Cohort& cohort) {
  Design des;
  des.n = cohort.n_observations();
  des.big_n = cohort.n_subjects();
  Deltas d = deltas(cohort);
  des.dx = std::move(d.dx);
  des.subj = cohort.incidence;
  return des;
}

// w = Z' diag(dx) u, gathered per subject.
Eigen::VectorXd gather(const Design& des, const Eigen::VectorXd& u) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(des.big_n);
  for (int k = 0; k < des.n; ++k) w[des.subj[k]] += des.dx[k] * u[k];
  return w;
}

// v = diag(dx) Z t, scattered back to observations.
Eigen::VectorXd scatter(const Design& des, const Eigen::VectorXd& t) {
  Eigen::VectorXd v(des.n);
  for (int k = 0; k < des.n; ++k) v[k] = des.dx[k] * t[des.subj[k]];
  return v;
}

/// Everything about V(theta) that the likelihood, the score, and the fit
/// loop need, computed once per theta.
struct Decomposition {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double logdet = 0.0;
  Eigen::VectorXd vx;   // Vi dx
  double s = 0.0;       // dx' Vi dx
};

Decomposition decompose(const Design& des, const GramSet& grams,
                        const VarianceComponents& theta) {
  Eigen::MatrixXd ksum = theta.tau2_G * grams.K_G + theta.tau2_C * grams.K_C +
                         theta.tau2_I * grams.K_I;
  Eigen::MatrixXd v(des.n, des.n);
  for (int k = 0; k < des.n; ++k) {
    for (int l = k; l < des.n; ++l) {
      double val = des.dx[k] * des.dx[l] * ksum(des.subj[k], des.subj[l]);
      if (k == l) val += theta.sigma2;
      v(k, l) = val;
      v(l, k) = val;
    }
  }
  Decomposition dec;
  dec.llt.compute(v);
  if (dec.llt.info() != Eigen::Success) {
    fail(ErrorCode::SingularV, "marginal covariance is not positive definite");
  }
  dec.logdet = 2.0 * dec.llt.matrixLLT().diagonal().array().log().sum();
  dec.vx = dec.llt.solve(des.dx);
  dec.s = des.dx.dot(dec.vx);
  return dec;
}

double gls_beta(const Design& des, const Decomposition& dec,
                const Eigen::VectorXd& dyv) {
  if (!(dec.s > 0.0) || des.dx.cwiseAbs().maxCoeff() == 0.0) {
    fail(ErrorCode::DegenerateDesign, "no age change in any observation");
  }
  return dec.vx.dot(dyv) / dec.s;
}

double loglik_at(const Design& des, const Decomposition& dec,
                 const Eigen::VectorXd& dyv, double beta) {
  Eigen::VectorXd r = dyv - beta * des.dx;
  double quad = r.dot(dec.llt.solve(r));
  return -0.5 * (des.n * kLog2Pi + dec.logdet + quad);
}

double reml_loglik_at(const Design& des, const Decomposition& dec,
                      const Eigen::VectorXd& dyv) {
  double beta = gls_beta(des, dec, dyv);
  Eigen::VectorXd r = dyv - beta * des.dx;
  double quad = r.dot(dec.llt.solve(r));
  return -0.5 * ((des.n - 1) * kLog2Pi + dec.logdet + std::log(dec.s) + quad);
}

void check_theta(const VarianceComponents& theta) {
  bool finite = std::isfinite(theta.tau2_G) && std::isfinite(theta.tau2_C) &&
                std::isfinite(theta.tau2_I) && std::isfinite(theta.sigma2);
  if (!finite || theta.tau2_G < 0.0 || theta.tau2_C < 0.0 ||
      theta.tau2_I < 0.0 || theta.sigma2 <= 0.0) {
    fail(ErrorCode::NonPositiveVariance, "invalid variance components");
  }
}

void check_dim(const Cohort& cohort, int dim) {
  if (dim < 0 || dim >= cohort.n_phenotypes()) {
    fail(ErrorCode::DimensionMismatch,
         "phenotype dimension " + std::to_string(dim) + " out of range");
  }
}

void score_fisher_impl(const Design& des, const GramSet& grams,
                       const Decomposition& dec, const Eigen::VectorXd& resid,
                       Eigen::Vector4d& score, Eigen::Matrix4d& info,
                       bool reml) {
  const std::array<const Eigen::MatrixXd*, 3> kmats = {&grams.K_G, &grams.K_C,
                                                       &grams.K_I};
  Eigen::MatrixXd vinv =
      dec.llt.solve(Eigen::MatrixXd::Identity(des.n, des.n));

  // a = Vi diag(dx) Z and m = Z' diag(dx) a carry every trace we need:
  //   tr(Vi G_D)      = sum(K_D o m)
  //   tr(Vi G_D Vi G_E) = sum((K_D m) o (K_E m)')
  //   tr(Vi G_D Vi)   = sum(K_D o a'a)
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(des.n, des.big_n);
  for (int k = 0; k < des.n; ++k) {
    a.col(des.subj[k]) += des.dx[k] * vinv.col(k);
  }
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(des.big_n, des.big_n);
  for (int k = 0; k < des.n; ++k) {
    m.row(des.subj[k]) += des.dx[k] * a.row(k);
  }

  Eigen::VectorXd u = dec.llt.solve(resid);
  Eigen::VectorXd w = gather(des, u);

  std::array<Eigen::MatrixXd, 3> p;
  for (int d = 0; d < 3; ++d) {
    p[d] = (*kmats[d]) * m;
    score[d] = 0.5 * (w.dot((*kmats[d]) * w) - p[d].trace());
  }
  score[3] = 0.5 * (u.squaredNorm() - vinv.trace());

  Eigen::MatrixXd ata = a.transpose() * a;
  for (int d = 0; d < 3; ++d) {
    for (int e = d; e < 3; ++e) {
      info(d, e) = info(e, d) =
          0.5 * p[d].cwiseProduct(p[e].transpose()).sum();
    }
    info(d, 3) = info(3, d) = 0.5 * kmats[d]->cwiseProduct(ata).sum();
  }
  info(3, 3) = 0.5 * vinv.squaredNorm();

  if (!reml) return;

  // Restricted likelihood swaps Vi for P = Vi - vx vx' / s (the single
  // fixed-effect column projected out); all corrections are rank one.
  Eigen::VectorXd t = gather(des, dec.vx);
  std::array<Eigen::VectorXd, 4> q;      // G_D vx per component
  std::array<double, 4> vgv;             // vx' G_D vx
  for (int d = 0; d < 3; ++d) {
    Eigen::VectorXd kt = (*kmats[d]) * t;
    q[d] = scatter(des, kt);
    vgv[d] = t.dot(kt);
  }
  q[3] = dec.vx;
  vgv[3] = dec.vx.squaredNorm();

  std::array<Eigen::VectorXd, 4> viq;
  for (int d = 0; d < 4; ++d) viq[d] = dec.llt.solve(q[d]);

  for (int d = 0; d < 4; ++d) {
    score[d] += 0.5 * vgv[d] / dec.s;
    for (int e = d; e < 4; ++e) {
      double corr = -q[d].dot(viq[e]) / dec.s +
                    0.5 * vgv[d] * vgv[e] / (dec.s * dec.s);
      info(d, e) += corr;
      if (e != d) info(e, d) += corr;
    }
  }
}

}  // namespace

double log_likelihood(const Cohort& cohort, const GramSet& grams,
                      double beta_bar, const VarianceComponents& theta,
                      int dim) {
  check_theta(theta);
  check_dim(cohort, dim);
  Design des = make_design(cohort);
  Decomposition dec = decompose(des, grams, theta);
  Eigen::VectorXd dyv = deltas(cohort).dy.col(dim);
  return loglik_at(des, dec, dyv, beta_bar);
}

double profile_log_likelihood(const Cohort& cohort, const GramSet& grams,
                              const VarianceComponents& theta, int dim,
                              double& beta_out) {
  check_theta(theta);
  check_dim(cohort, dim);
  Design des = make_design(cohort);
  Decomposition dec = decompose(des, grams, theta);
  Eigen::VectorXd dyv = deltas(cohort).dy.col(dim);
  beta_out = gls_beta(des, dec, dyv);
  return loglik_at(des, dec, dyv, beta_out);
}

double reml_log_likelihood(const Cohort& cohort, const GramSet& grams,
                           const VarianceComponents& theta, int dim) {
  check_theta(theta);
  check_dim(cohort, dim);
  Design des = make_design(cohort);
  Decomposition dec = decompose(des, grams, theta);
  Eigen::VectorXd dyv = deltas(cohort).dy.col(dim);
  return reml_loglik_at(des, dec, dyv);
}

void score_and_fisher(const Cohort& cohort, const GramSet& grams,
                      double beta_bar, const VarianceComponents& theta,
                      int dim, Eigen::Vector4d& score, Eigen::Matrix4d& info,
                      bool reml) {
  check_theta(theta);
  check_dim(cohort, dim);
  Design des = make_design(cohort);
  Decomposition dec = decompose(des, grams, theta);
  Eigen::VectorXd dyv = deltas(cohort).dy.col(dim);
  double beta = reml ? gls_beta(des, dec, dyv) : beta_bar;
  Eigen::VectorXd resid = dyv - beta * des.dx;
  score_fisher_impl(des, grams, dec, resid, score, info, reml);
}

namespace {

struct ThetaVec {
  // Flat view in component order (tau2_G, tau2_C, tau2_I, sigma2).
  static Eigen::Vector4d pack(const VarianceComponents& t) {
    return {t.tau2_G, t.tau2_C, t.tau2_I, t.sigma2};
  }
  static VarianceComponents unpack(const Eigen::Vector4d& v) {
    return {v[0], v[1], v[2], v[3]};
  }
};

DimensionFit fit_dimension(const Design& des, const GramSet& grams,
                           const Eigen::VectorXd& dyv, const FitOptions& opts,
                           double sigma_floor) {
  DimensionFit out;
  int n = des.n;

  double sxx = des.dx.squaredNorm();
  double beta_ols = des.dx.dot(dyv) / sxx;
  Eigen::VectorXd resid_ols = dyv - beta_ols * des.dx;

  if (opts.pin_tau_zero) {
    out.beta_bar = beta_ols;
    out.theta = {0.0, 0.0, 0.0,
                 std::max(resid_ols.squaredNorm() / n, sigma_floor)};
    out.alpha_G = out.alpha_C = out.alpha_I = Eigen::VectorXd::Zero(des.big_n);
    out.converged = true;
    out.loglik_trace.push_back(
        -0.5 * (n * kLog2Pi + n * std::log(out.theta.sigma2) +
                resid_ols.squaredNorm() / out.theta.sigma2));
    return out;
  }

  double v0 = resid_ols.squaredNorm() / std::max(n - 1, 1);
  if (v0 <= 0.0) v0 = sigma_floor * 2.0;
  Eigen::Vector4d theta{v0 / 6.0, v0 / 6.0, v0 / 6.0,
                        std::max(0.5 * v0, sigma_floor)};

  auto project = [&](Eigen::Vector4d t) {
    for (int d = 0; d < 3; ++d) t[d] = std::max(t[d], 0.0);
    t[3] = std::max(t[3], sigma_floor);
    return t;
  };

  auto evaluate = [&](const Eigen::Vector4d& t, double& beta_out) {
    Decomposition dec = decompose(des, grams, ThetaVec::unpack(t));
    beta_out = gls_beta(des, dec, dyv);
    if (opts.reml) return reml_loglik_at(des, dec, dyv);
    return loglik_at(des, dec, dyv, beta_out);
  };

  double beta = beta_ols;
  double loglik = evaluate(theta, beta);
  out.loglik_trace.push_back(loglik);

  double score_tol = opts.tol * n;
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    Decomposition dec = decompose(des, grams, ThetaVec::unpack(theta));
    beta = gls_beta(des, dec, dyv);
    Eigen::VectorXd resid = dyv - beta * des.dx;
    Eigen::Vector4d score;
    Eigen::Matrix4d info;
    score_fisher_impl(des, grams, dec, resid, score, info, opts.reml);

    // At an active bound a negative score is the optimality condition, not
    // a direction to follow; freeze those coordinates.
    std::array<bool, 4> frozen{};
    Eigen::Vector4d kkt = score;
    for (int d = 0; d < 3; ++d) {
      if (theta[d] <= 0.0 && score[d] < 0.0) {
        frozen[d] = true;
        kkt[d] = 0.0;
      }
    }
    if (theta[3] <= sigma_floor && score[3] < 0.0) {
      frozen[3] = true;
      kkt[3] = 0.0;
    }
    if (kkt.cwiseAbs().maxCoeff() < score_tol) {
      out.converged = true;
      break;
    }

    Eigen::Matrix4d sys = info;
    Eigen::Vector4d rhs = kkt;
    for (int d = 0; d < 4; ++d) {
      if (frozen[d]) {
        sys.row(d).setZero();
        sys.col(d).setZero();
        sys(d, d) = 1.0;
        rhs[d] = 0.0;
      }
    }
    double scale = sys.diagonal().cwiseAbs().maxCoeff();
    Eigen::Vector4d delta;
    bool solved = false;
    for (double ridge : {0.0, 1e-10, 1e-7, 1e-4, 1e-1}) {
      Eigen::Matrix4d damped =
          sys + ridge * scale * Eigen::Matrix4d::Identity();
      Eigen::LDLT<Eigen::Matrix4d> ldlt(damped);
      if (ldlt.info() != Eigen::Success) continue;
      delta = ldlt.solve(rhs);
      if (delta.allFinite() && delta.dot(rhs) > 0.0) {
        solved = true;
        break;
      }
    }
    if (!solved) delta = rhs / std::max(scale, 1.0);  // gradient fallback

    double step = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 25; ++halving, step *= 0.5) {
      Eigen::Vector4d cand = project(theta + step * delta);
      if ((cand - theta).cwiseAbs().maxCoeff() == 0.0) break;
      double cand_beta = beta;
      double cand_loglik = evaluate(cand, cand_beta);
      if (std::isfinite(cand_loglik) && cand_loglik >= loglik) {
        double gain = cand_loglik - loglik;
        theta = cand;
        beta = cand_beta;
        loglik = cand_loglik;
        out.loglik_trace.push_back(loglik);
        accepted = true;
        if (gain <= 1e-10 * (1.0 + std::abs(loglik))) {
          out.converged = true;
        }
        break;
      }
    }
    if (out.converged) {
      ++iter;
      break;
    }
    if (!accepted) {
      // No ascent even at tiny steps: numerically stationary.
      out.converged = kkt.cwiseAbs().maxCoeff() < score_tol * 10.0;
      break;
    }
  }
  out.iterations = iter;

  Decomposition dec = decompose(des, grams, ThetaVec::unpack(theta));
  out.beta_bar = gls_beta(des, dec, dyv);
  out.theta = ThetaVec::unpack(theta);
  Eigen::VectorXd resid = dyv - out.beta_bar * des.dx;
  Eigen::VectorXd w = gather(des, dec.llt.solve(resid));
  out.alpha_G = out.theta.tau2_G * w;
  out.alpha_C = out.theta.tau2_C * w;
  out.alpha_I = out.theta.tau2_I * w;
  return out;
}

}  // namespace

FittedModel fit(const Cohort& cohort, const GramSet& grams,
                const FitOptions& opts) {
  Design des = make_design(cohort);
  if (des.n == 0 || des.dx.cwiseAbs().maxCoeff() == 0.0) {
    fail(ErrorCode::DegenerateDesign, "no age change in any observation");
  }
  int informative = 0;
  for (int k = 0; k < des.n; ++k) {
    if (des.dx[k] != 0.0) ++informative;
  }
  if (informative < 5) {
    fail(ErrorCode::TooFewSamples,
         "need at least 5 observations after baseline, have " +
             std::to_string(informative));
  }

  Deltas d = deltas(cohort);
  int m = cohort.n_phenotypes();

  FittedModel model;
  model.dims.resize(m);
  model.beta_bar_pop.resize(m);
  model.params = grams.params;
  model.max_train_dx = des.dx.maxCoeff();
  model.subject_ids.reserve(des.big_n);
  model.genotypes.reserve(des.big_n);
  model.clinical.resize(des.big_n, cohort.n_clinical());
  model.features.resize(des.big_n, cohort.n_features());
  for (int i = 0; i < des.big_n; ++i) {
    model.subject_ids.push_back(cohort.subjects[i].id);
    model.genotypes.push_back(cohort.subjects[i].genotype);
    model.clinical.row(i) = cohort.subjects[i].clinical.transpose();
    model.features.row(i) = cohort.subjects[i].baseline_features.transpose();
  }

  double sxx = des.dx.squaredNorm();
  parallel_for_index(m, [&](int dim) {
    Eigen::VectorXd dyv = d.dy.col(dim);
    double var_dy =
        (dyv.array() - dyv.mean()).square().sum() / std::max(des.n - 1, 1);
    double sigma_floor = std::max(1e-8 * var_dy, 1e-12);
    model.dims[dim] = fit_dimension(des, grams, dyv, opts, sigma_floor);
    model.beta_bar_pop[dim] = des.dx.dot(dyv) / sxx;
  });
  return model;
}

}  // namespace longipred
