#pragma once

#include "captensor/types.hpp"

#include <vector>

namespace captensor {

inline constexpr double kDefaultProbabilityFloor = 1e-12;

double sigmoid(double x);
double log_sigmoid(double x);

// Psi_{i,j,k} = sum_r theta(i,r) * a(j,r) * gamma(k,r).
double capability(const FactorParams& params, int model, int prompt, int rater);

// Psi for pointwise subjects, Psi(second) - Psi(first) for pairs.
double effective_advantage(const FactorParams& params, const Subject& subject, int prompt,
                           int rater);

Eigen::VectorXd cutoffs_from_gaps(double base, const Eigen::VectorXd& gaps);

// Ordered-logit category probabilities. Middle categories are evaluated as
// sigma(z) sigma(-x) (1 - exp(x - z)) so no difference of nearly equal terms is formed.
Eigen::VectorXd ordinal_pmf(double delta, const Eigen::VectorXd& cutoffs);

double expected_label(double delta, const Eigen::VectorXd& cutoffs);

struct NllResult {
  double value = 0.0;
  bool empty_slice = false;
};

NllResult nll(const FactorParams& params, ObservationSpan observations,
              double probability_floor = kDefaultProbabilityFloor);

// Which parameter blocks receive gradients.
struct ParamMask {
  bool theta = true;
  bool a = true;
  std::vector<bool> gamma_rows;  // per rater
  std::vector<bool> cutoffs;     // per rater (base and gaps together)

  static ParamMask all(int raters);
  static ParamMask none(int raters);
  // Everything except gamma row 0 and the human cutoffs.
  static ParamMask autorater(int raters);
  static ParamMask human(int raters);

  bool gamma_row(int k) const { return gamma_rows.at(k); }
  bool cutoff(int k) const { return cutoffs.at(k); }
};

struct ParamGradient {
  Eigen::MatrixXd theta;
  Eigen::MatrixXd a;
  Eigen::MatrixXd gamma;
  Eigen::VectorXd base_cutoff;
  std::vector<Eigen::VectorXd> gaps;

  static ParamGradient zeros_like(const FactorParams& params);
  void set_zero();
  double max_abs() const;
};

ParamGradient nll_gradient(const FactorParams& params, ObservationSpan observations,
                           const ParamMask& mask,
                           double probability_floor = kDefaultProbabilityFloor);

// Accumulates the gradient into `grad` (not zeroed) and returns the NLL of the slice.
double accumulate_nll_gradient(const FactorParams& params, ObservationSpan observations,
                               const ParamMask& mask, ParamGradient& grad,
                               double probability_floor = kDefaultProbabilityFloor);

namespace detail {

// -log P(label | delta) and its partial derivatives with respect to delta and
// the two cutoffs bracketing the label. lo/hi index -1 means "no such cutoff".
struct LabelTerm {
  double neg_log_p = 0.0;
  double d_delta = 0.0;
  double d_lo = 0.0;
  double d_hi = 0.0;
  int lo = -1;
  int hi = -1;
  bool floored = false;
};

LabelTerm label_term(double delta, const double* cutoffs, int num_cutoffs, int label,
                     double probability_floor);

// accumulate_nll_gradient with observation n counted weights[n] times (null = 1).
double accumulate_weighted(const FactorParams& params, ObservationSpan observations,
                           const double* weights, const ParamMask& mask, ParamGradient& grad,
                           double probability_floor);

}  // namespace detail

}  // namespace captensor
