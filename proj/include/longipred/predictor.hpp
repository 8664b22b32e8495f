#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "longipred/cohort.hpp"
#include "longipred/mixedmodel.hpp"

namespace longipred {

struct PredictionRequest {
  Subject subject;                  // baseline data only
  std::vector<double> target_ages;  // each >= subject.baseline_age
};

/// One target age, one phenotype dimension. y_hat is the sum of the
/// baseline value and the four recorded terms; the identity is exact
/// because y_hat is computed by summing exactly these terms.
struct PredictionTerms {
  double y_hat = 0.0;
  double term_pop = 0.0;
  double term_G = 0.0;
  double term_C = 0.0;
  double term_I = 0.0;
};

struct Prediction {
  std::vector<double> target_ages;
  std::vector<std::vector<PredictionTerms>> terms;  // [age][dim]
  std::vector<std::string> warnings;

  double y_hat(int age_index, int dim) const {
    return terms[age_index][dim].y_hat;
  }
};

/// Full model: y_b + dx (beta_bar + k_G'a_G + k_C'a_C + k_I'a_I) per
/// dimension, kernels evaluated against the training bank with the frozen
/// hyperparameters. Target ages past the training horizon are allowed and
/// recorded as warnings.
Prediction predict(const FittedModel& model, const PredictionRequest& req,
                   bool allow_unconverged = false);

/// Population trend only: kernel terms pinned to zero and the slope taken
/// from the variance-free fit.
Prediction predict_population_only(const FittedModel& model,
                                   const PredictionRequest& req,
                                   bool allow_unconverged = false);

/// No-change reference: y_hat = y_b at every target age.
Prediction predict_baseline_carry(const PredictionRequest& req);

}  // namespace longipred
