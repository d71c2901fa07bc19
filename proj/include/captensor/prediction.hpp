#pragma once

#include "captensor/fitting.hpp"
#include "captensor/types.hpp"

#include <optional>
#include <vector>

namespace captensor {

struct MetricEstimate {
  double value = 0.0;
  // Delta-method standard error from the human-stage covariance; empty when no
  // covariance was supplied.
  std::optional<double> standard_error;
};

// Mean over `prompts` of E[Y | Psi_hat(model, j, 0)] under the human cutoffs.
MetricEstimate predict_average_score(const FactorParams& params, const CovarianceEstimate* cov,
                                     int model, const std::vector<int>& prompts);

// Mean over matches of P(win) - P(loss) for `model` against opponents[n] on
// prompts[n], with `model` in the second (preferred-when-high) slot.
MetricEstimate predict_win_rate_difference(const FactorParams& params,
                                           const CovarianceEstimate* cov, int model,
                                           const std::vector<int>& prompts,
                                           const std::vector<int>& opponents);

enum class HoldoutMetric { AverageScore, WinRateDifference };

struct HoldoutReport {
  int model = 0;
  HoldoutMetric metric = HoldoutMetric::AverageScore;
  double predicted = 0.0;
  double standard_error_predicted = 0.0;
  std::optional<double> actual;  // absent in prediction-only mode
  double standard_error_actual = 0.0;
  std::size_t withheld_labels = 0;
};

// Leave-one-out: drop every human label involving `model`, fit both stages on
// what remains, predict the model's human metric on the withheld design and
// score it against the withheld labels.
HoldoutReport holdout_evaluation(const Dataset& data, int model, const FitConfig& config);

// Same with a stage-1 fit supplied by the caller. Stage 1 never sees human
// labels, so one stage-1 fit serves every held-out model.
HoldoutReport holdout_evaluation(const Dataset& data, int model, const FactorParams& stage1,
                                 const FitConfig& config);

}  // namespace captensor
