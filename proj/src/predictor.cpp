#include "longipred/predictor.hpp"

#include <cmath>

#include "longipred/errors.hpp"
#include "longipred/kernels.hpp"
#include "longipred/util.hpp"

namespace longipred {

namespace {

void check_request(const FittedModel& model, const PredictionRequest& req) {
  const Subject& s = req.subject;
  if (!model.genotypes.empty() &&
      s.genotype.size() != model.genotypes.front().size()) {
    fail(ErrorCode::DimensionMismatch, "genotype width differs from training");
  }
  if (s.clinical.size() != model.clinical.cols()) {
    fail(ErrorCode::DimensionMismatch, "clinical width differs from training");
  }
  if (s.baseline_features.size() != model.features.cols()) {
    fail(ErrorCode::DimensionMismatch, "feature width differs from training");
  }
  if (s.baseline_phenotype.size() != model.n_dims()) {
    fail(ErrorCode::DimensionMismatch, "phenotype width differs from training");
  }
  for (double age : req.target_ages) {
    if (!std::isfinite(age) || age < s.baseline_age) {
      fail(ErrorCode::InvalidValue,
           "target age " + format_double(age) + " precedes baseline");
    }
  }
}

void check_converged(const FittedModel& model, bool allow_unconverged) {
  if (!model.all_converged() && !allow_unconverged) {
    fail(ErrorCode::UnconvergedModel,
         "model did not converge; pass allow_unconverged to predict anyway");
  }
}

void note_extrapolation(const FittedModel& model, const PredictionRequest& req,
                        Prediction& pred) {
  for (double age : req.target_ages) {
    double dx = age - req.subject.baseline_age;
    if (dx > model.max_train_dx) {
      pred.warnings.push_back(
          "subject " + req.subject.id + ": age offset " + format_double(dx) +
          " is beyond the training horizon " +
          format_double(model.max_train_dx));
    }
  }
}

}  // namespace

Prediction predict(const FittedModel& model, const PredictionRequest& req,
                   bool allow_unconverged) {
  check_converged(model, allow_unconverged);
  check_request(model, req);

  int big_n = model.n_train_subjects();
  Eigen::VectorXd k_g(big_n), k_c(big_n), k_i(big_n);
  Eigen::VectorXd c_new = model.params.standardize(req.subject.clinical);
  for (int j = 0; j < big_n; ++j) {
    k_g[j] = ibs_kernel(req.subject.genotype, model.genotypes[j]);
    Eigen::VectorXd c_j =
        model.params.standardize(model.clinical.row(j).transpose());
    k_c[j] = clinical_kernel(c_new, c_j, model.params.w, model.params.sigma2_C);
    k_i[j] = image_kernel(req.subject.baseline_features,
                          model.features.row(j).transpose(),
                          model.params.sigma2_I);
  }

  Prediction pred;
  pred.target_ages = req.target_ages;
  pred.terms.resize(req.target_ages.size());
  for (std::size_t t = 0; t < req.target_ages.size(); ++t) {
    double dx = req.target_ages[t] - req.subject.baseline_age;
    pred.terms[t].resize(model.n_dims());
    for (int m = 0; m < model.n_dims(); ++m) {
      const DimensionFit& fit = model.dims[m];
      PredictionTerms& terms = pred.terms[t][m];
      terms.term_pop = dx * fit.beta_bar;
      terms.term_G = dx * k_g.dot(fit.alpha_G);
      terms.term_C = dx * k_c.dot(fit.alpha_C);
      terms.term_I = dx * k_i.dot(fit.alpha_I);
      terms.y_hat = req.subject.baseline_phenotype[m] + terms.term_pop +
                    terms.term_G + terms.term_C + terms.term_I;
    }
  }
  note_extrapolation(model, req, pred);
  return pred;
}

Prediction predict_population_only(const FittedModel& model,
                                   const PredictionRequest& req,
                                   bool allow_unconverged) {
  check_converged(model, allow_unconverged);
  check_request(model, req);

  Prediction pred;
  pred.target_ages = req.target_ages;
  pred.terms.resize(req.target_ages.size());
  for (std::size_t t = 0; t < req.target_ages.size(); ++t) {
    double dx = req.target_ages[t] - req.subject.baseline_age;
    pred.terms[t].resize(model.n_dims());
    for (int m = 0; m < model.n_dims(); ++m) {
      PredictionTerms& terms = pred.terms[t][m];
      terms.term_pop = dx * model.beta_bar_pop[m];
      terms.y_hat = req.subject.baseline_phenotype[m] + terms.term_pop;
    }
  }
  note_extrapolation(model, req, pred);
  return pred;
}

Prediction predict_baseline_carry(const PredictionRequest& req) {
  for (double age : req.target_ages) {
    if (!std::isfinite(age) || age < req.subject.baseline_age) {
      fail(ErrorCode::InvalidValue,
           "target age " + format_double(age) + " precedes baseline");
    }
  }
  Prediction pred;
  pred.target_ages = req.target_ages;
  pred.terms.resize(req.target_ages.size());
  for (std::size_t t = 0; t < req.target_ages.size(); ++t) {
    pred.terms[t].resize(req.subject.baseline_phenotype.size());
    for (int m = 0; m < req.subject.baseline_phenotype.size(); ++m) {
      pred.terms[t][m].y_hat = req.subject.baseline_phenotype[m];
    }
  }
  return pred;
}

}  // namespace longipred
