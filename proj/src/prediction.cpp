#include "captensor/prediction.hpp"

#include "captensor/core_model.hpp"
#include "captensor/errors.hpp"
#include "captensor/inference.hpp"

#include <algorithm>
#include <cmath>

namespace captensor {

namespace {

double logistic_density(double t) { return sigmoid(t) * sigmoid(-t); }

std::optional<double> delta_method_se(const Eigen::VectorXd& grad, const CovarianceEstimate* cov) {
  if (!cov) return std::nullopt;
  if (cov->sigma_hat.rows() != grad.size()) throw InputError("covariance does not match the rank");
  const double q = grad.dot(cov->sigma_hat * grad);
  return std::sqrt(std::max(q, 0.0) / static_cast<double>(cov->m));
}

struct Match {
  int prompt;
  int opponent;
  bool model_second;
};

MetricEstimate win_rate(const FactorParams& params, const CovarianceEstimate* cov, int model,
                        const std::vector<Match>& matches) {
  const RaterSpec& human = params.human();
  if (human.templ != Template::Pairwise) {
    throw ContractError("win-rate difference needs a pairwise human template");
  }
  if (human.num_categories != 3) {
    throw ContractError("win-rate difference needs a loss/tie/win human scale (3 categories)");
  }
  if (matches.empty()) throw InputError("no matches to predict");
  const Eigen::VectorXd gamma0 = params.gamma.row(0).transpose();
  const Eigen::VectorXd beta = params.cutoffs(0);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.rank());
  double total = 0.0;
  for (const Match& mt : matches) {
    if (mt.opponent == model) throw InputError("opponent schedule pits the model against itself");
    const int first = mt.model_second ? mt.opponent : model;
    const int second = mt.model_second ? model : mt.opponent;
    const Eigen::VectorXd x =
        feature_vector(params, second, mt.prompt) - feature_vector(params, first, mt.prompt);
    const double delta = x.dot(gamma0);
    const Eigen::VectorXd p = ordinal_pmf(delta, beta);
    const double sign = mt.model_second ? 1.0 : -1.0;
    total += sign * (p(2) - p(0));
    grad += sign * (logistic_density(delta - beta(1)) + logistic_density(beta(0) - delta)) * x;
  }
  const double n = static_cast<double>(matches.size());
  return {total / n, delta_method_se(grad / n, cov)};
}

}  // namespace

MetricEstimate predict_average_score(const FactorParams& params, const CovarianceEstimate* cov,
                                     int model, const std::vector<int>& prompts) {
  if (params.human().templ != Template::Pointwise) {
    throw ContractError("average score needs a pointwise human template");
  }
  if (prompts.empty()) throw InputError("no prompts to average over");
  const Eigen::VectorXd gamma0 = params.gamma.row(0).transpose();
  const Eigen::VectorXd beta = params.cutoffs(0);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.rank());
  double total = 0.0;
  for (int j : prompts) {
    const Eigen::VectorXd v = feature_vector(params, model, j);
    const double psi = v.dot(gamma0);
    total += expected_label(psi, beta);
    // E[Y] = sum_m sigma(psi - beta_m)
    double slope = 0.0;
    for (Eigen::Index m = 0; m < beta.size(); ++m) slope += logistic_density(psi - beta(m));
    grad += slope * v;
  }
  const double n = static_cast<double>(prompts.size());
  return {total / n, delta_method_se(grad / n, cov)};
}

MetricEstimate predict_win_rate_difference(const FactorParams& params,
                                           const CovarianceEstimate* cov, int model,
                                           const std::vector<int>& prompts,
                                           const std::vector<int>& opponents) {
  if (prompts.size() != opponents.size()) {
    throw InputError("opponent schedule must give one opponent per prompt entry");
  }
  std::vector<Match> matches;
  for (std::size_t n = 0; n < prompts.size(); ++n) matches.push_back({prompts[n], opponents[n], true});
  return win_rate(params, cov, model, matches);
}

HoldoutReport holdout_evaluation(const Dataset& data, int model, const FitConfig& config) {
  data.validate();
  const auto autorater = data.autorater();
  const bool placed = std::any_of(autorater.begin(), autorater.end(), [&](const Observation& o) {
    return o.subject.involves(model);
  });
  if (!placed) {
    throw ContractError("held-out model " + std::to_string(model) +
                        " has no autorater labels; stage 1 cannot place it");
  }
  const MultiRestartResult stage1 = multi_restart(autorater, data.dims, data.raters, config);
  return holdout_evaluation(data, model, stage1.best.params, config);
}

HoldoutReport holdout_evaluation(const Dataset& data, int model, const FactorParams& stage1,
                                 const FitConfig& config) {
  if (model < 0 || model >= data.dims.models) throw InputError("held-out model out of range");
  const bool placed = std::any_of(data.observations.begin(), data.observations.end(),
                                  [&](const Observation& o) {
                                    return o.rater > 0 && o.subject.involves(model);
                                  });
  if (!placed) {
    throw ContractError("held-out model " + std::to_string(model) +
                        " has no autorater labels; stage 1 cannot place it");
  }
  std::vector<Observation> kept;
  std::vector<Observation> withheld;
  for (const Observation& o : data.observations) {
    if (o.rater != 0) continue;
    (o.subject.involves(model) ? withheld : kept).push_back(o);
  }
  const Stage2Result s2 = fit_stage2(kept, stage1, config.stage2);
  const FactorParams params = apply_stage2(stage1, s2);

  HoldoutReport rep;
  rep.model = model;
  rep.withheld_labels = withheld.size();
  const RaterSpec& human = data.raters.at(0);
  if (human.templ == Template::Pointwise) {
    rep.metric = HoldoutMetric::AverageScore;
    std::vector<int> prompts;
    if (withheld.empty()) {
      for (int j = 0; j < data.dims.prompts; ++j) prompts.push_back(j);
    } else {
      for (const Observation& o : withheld) prompts.push_back(o.prompt);
    }
    const MetricEstimate est = predict_average_score(params, &s2.covariance, model, prompts);
    rep.predicted = est.value;
    rep.standard_error_predicted = est.standard_error.value_or(0.0);
    if (!withheld.empty()) {
      double sum = 0.0, sq = 0.0;
      for (const Observation& o : withheld) {
        sum += o.label;
        sq += static_cast<double>(o.label) * o.label;
      }
      const double n = static_cast<double>(withheld.size());
      const double mean = sum / n;
      rep.actual = mean;
      const double var = n > 1 ? std::max(0.0, (sq - n * mean * mean) / (n - 1.0)) : 0.0;
      rep.standard_error_actual = std::sqrt(var / n);
    }
  } else {
    rep.metric = HoldoutMetric::WinRateDifference;
    std::vector<Match> matches;
    double wins = 0.0, losses = 0.0;
    if (withheld.empty()) {
      for (int j = 0; j < data.dims.prompts; ++j) {
        for (int opp = 0; opp < data.dims.models; ++opp) {
          if (opp != model) matches.push_back({j, opp, true});
        }
      }
    } else {
      const int top = human.num_categories - 1;
      for (const Observation& o : withheld) {
        const bool second = o.subject.second == model;
        matches.push_back({o.prompt, second ? o.subject.first : o.subject.second, second});
        const int y = second ? o.label : top - o.label;
        if (y == top) wins += 1.0;
        if (y == 0) losses += 1.0;
      }
    }
    const MetricEstimate est = win_rate(params, &s2.covariance, model, matches);
    rep.predicted = est.value;
    rep.standard_error_predicted = est.standard_error.value_or(0.0);
    if (!withheld.empty()) {
      const double n = static_cast<double>(withheld.size());
      const double pw = wins / n, pl = losses / n;
      rep.actual = pw - pl;
      rep.standard_error_actual = std::sqrt(std::max(0.0, pw + pl - (pw - pl) * (pw - pl)) / n);
    }
  }
  return rep;
}

}  // namespace captensor
