#pragma once

#include "captensor/core_model.hpp"
#include "captensor/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace captensor {

struct AdamSettings {
  std::vector<double> learning_rates{0.05};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 512;
  int epochs = 40;
  // Cosine annealing from lr to lr * final_lr_fraction over all steps; 1 = constant.
  double final_lr_fraction = 1.0;
};

struct Stage2Settings {
  int max_iterations = 200;
  // Convergence when max |gradient of the normalized NLL| falls below this.
  double gradient_tolerance = 1e-10;
  // Parameters beyond this magnitude signal an optimum at infinity.
  double divergence_bound = 1e4;
};

struct Stage3Settings {
  double learning_rate = 1e-3;
  int max_epochs = 50;
  double validation_fraction = 0.2;
  int patience = 3;
};

struct FitConfig {
  int rank = 3;
  AdamSettings adam;
  double projection_eps = 1e-4;
  std::vector<std::uint64_t> restarts{0};
  Stage2Settings stage2;
  Stage3Settings stage3;
  double init_scale = 0.1;
  // L2 strength for the PromptSpecific baseline.
  double baseline_l2 = 0.0;
  double probability_floor = kDefaultProbabilityFloor;

  void validate() const;
};

// Gaussian entries with sd `init_scale`, zero base cutoffs, unit gaps.
FactorParams initialize_params(const Dims& dims, const std::vector<RaterSpec>& raters, int rank,
                               double init_scale, std::uint64_t seed);

struct Stage1Result {
  FactorParams params;
  std::vector<double> epoch_nll;  // full training NLL after each epoch
  std::uint64_t seed = 0;
  double learning_rate = 0.0;

  double final_nll() const { return epoch_nll.empty() ? 0.0 : epoch_nll.back(); }
};

// Mini-batch projected Adam on autorater observations, starting at `init`.
// Only parameters outside the human block are updated. After every step the
// gaps are clamped at projection_eps and the columns of theta and A are
// rescaled to unit L2 norm.
Stage1Result fit_stage1(const FactorParams& init, ObservationSpan autorater_data,
                        const FitConfig& config, std::uint64_t seed, double learning_rate);

Stage1Result fit_stage1(ObservationSpan autorater_data, const Dims& dims,
                        const std::vector<RaterSpec>& raters, const FitConfig& config,
                        std::uint64_t seed);

struct RestartRecord {
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  double final_nll = 0.0;
  bool diverged = false;
  std::string error;
};

struct MultiRestartResult {
  Stage1Result best;
  std::vector<RestartRecord> table;
  std::size_t selected = 0;
};

// One stage-1 run per (seed, learning rate); returns the lowest final training
// NLL, ties going to the earlier grid entry (seed-major order).
MultiRestartResult multi_restart(ObservationSpan autorater_data, const Dims& dims,
                                 const std::vector<RaterSpec>& raters, const FitConfig& config);

// Same selection over explicit initial points (one per seed slot).
MultiRestartResult multi_restart(const std::vector<FactorParams>& inits,
                                 ObservationSpan autorater_data, const FitConfig& config);

struct Stage2Result {
  Eigen::VectorXd gamma0;
  double base_cutoff = 0.0;
  Eigen::VectorXd gaps;
  CovarianceEstimate covariance;
  // Full inverse observed information over (gamma0, cutoffs).
  Eigen::MatrixXd full_inverse_hessian;
  bool converged = false;
  bool too_few_observations = false;
  double final_nll = 0.0;
  int iterations = 0;

  Eigen::VectorXd cutoffs() const { return cutoffs_from_gaps(base_cutoff, gaps); }
};

struct Stage2Start {
  Eigen::VectorXd gamma0;
  Eigen::VectorXd cutoffs;  // strictly increasing
};

// Ordered-logit regression of human labels on the frozen features v_{i,j}
// (or their differences), solved by damped Newton with backtracking. The
// covariance is m times the gamma0 block of the inverse Hessian of the summed NLL.
Stage2Result fit_stage2(ObservationSpan human_data, const FactorParams& frozen,
                        const Stage2Settings& settings = {},
                        const std::optional<Stage2Start>& start = std::nullopt);

// Writes gamma row 0 and the human cutoffs.
FactorParams apply_stage2(const FactorParams& params, const Stage2Result& result);

struct FinetuneResult {
  FactorParams params;
  int best_epoch = 0;
  std::vector<double> validation_nll;  // index 0 is the starting point
};

FinetuneResult fit_stage3_finetune(const FactorParams& params, ObservationSpan human_train,
                                   ObservationSpan human_val, const FitConfig& config,
                                   std::uint64_t seed);

struct ValidationSplit {
  std::vector<Observation> train;
  std::vector<Observation> validation;
};

ValidationSplit split_validation(ObservationSpan data, double fraction, std::uint64_t seed);

struct CanonicalResult {
  FactorParams params;
  bool tied_norms = false;
};

// Gauge fixing: unit-norm theta/A columns with the scale moved into gamma,
// columns ordered by decreasing gamma column norm, signs chosen so the last
// entries of each theta and A column are positive. Cutoffs are left alone.
CanonicalResult canonicalize(const FactorParams& params);

enum class BaselineKind { Constant, PromptSpecific };

// Human-only restricted fits. Constant: rank 1 with A and gamma fixed to ones
// (Bradley-Terry for binary pairwise data). PromptSpecific: rank config.rank,
// trainable A, gamma fixed to ones, optional L2 on theta and A.
Stage1Result fit_baseline(ObservationSpan human_data, const Dims& dims,
                          const std::vector<RaterSpec>& raters, BaselineKind kind,
                          const FitConfig& config, std::uint64_t seed);

struct TwoStageResult {
  FactorParams params;
  Stage2Result stage2;
  MultiRestartResult stage1;
};

// Stage 1 on autorater data followed by stage 2 on human data.
TwoStageResult fit_two_stage(const Dataset& data, const FitConfig& config);

}  // namespace captensor
