#pragma once

#include "captensor/fitting.hpp"
#include "captensor/inference.hpp"
#include "captensor/types.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace captensor {

// One designed (subject, prompt, rater) triple and how many labels to draw there.
struct DesignEntry {
  Subject subject;
  int prompt = 0;
  int rater = 0;
  int count = 1;
};

struct ScenarioSpec {
  Dims dims;
  int rank = 2;
  std::vector<RaterSpec> raters;  // raters[0] is the human

  // Generated design, used when `design` is empty. Every (model, prompt,
  // autorater) gets `labels_per_cell` labels; a pairwise autorater pairs each
  // model with a random opponent per prompt. Human labels are spread uniformly
  // over human cells (models, or ordered pairs of distinct models, times
  // prompts), at most `human_cell_multiplicity` per cell.
  int labels_per_cell = 10;
  int human_label_budget = 0;
  int human_cell_multiplicity = 4;
  // Restricts human labels to these prompts when nonempty.
  std::vector<int> human_prompts;
  std::vector<DesignEntry> design;

  // Parameter distributions. theta ~ N(0, theta_scale^2); A ~ N(a_mean, a_scale^2);
  // gamma row k ~ N(0, gamma_scale^2), with the human row scaled by human_gamma_scale.
  double theta_scale = 1.0;
  double a_scale = 1.0;
  double a_mean = 0.0;
  double gamma_scale = 1.0;
  double human_gamma_scale = 1.0;
  // Gaps are cutoff_spacing * U(0.75, 1.25), never below min_gap; cutoffs are
  // centered at zero plus a N(0, cutoff_shift^2) offset.
  double cutoff_spacing = 1.0;
  double min_gap = 0.2;
  double cutoff_shift = 0.25;

  std::uint64_t seed = 0;

  void validate() const;
  std::size_t human_cells() const;
};

FactorParams generate_ground_truth(const ScenarioSpec& spec);

// The design implied by the spec (the explicit list when given). Random parts
// are drawn from `seed`.
std::vector<DesignEntry> build_design(const ScenarioSpec& spec, std::uint64_t seed);

Dataset sample_design(const FactorParams& params, const std::vector<DesignEntry>& design,
                      std::uint64_t seed);

Dataset sample_observations(const FactorParams& params, const ScenarioSpec& spec);
Dataset sample_observations(const FactorParams& params, const ScenarioSpec& spec,
                            std::uint64_t seed);

struct CoverageQuery {
  int model = 0;
  int prompt = 0;
};

struct CoverageOptions {
  std::vector<double> levels{0.95};
  int replications = 100;
  // Human-slice capabilities Psi_{i,j,0} to cover; empty means every (model, prompt).
  std::vector<CoverageQuery> queries;
  FitConfig fit;
  int mc_draws = kDefaultMcDraws;
  // Skip stage 1 and freeze the true theta and A (the setting in which the
  // intervals are exact asymptotically).
  bool oracle_features = false;
  std::uint64_t seed = 0;
};

struct CoverageLevel {
  double level = 0.0;
  double pointwise = 0.0;  // fraction of (replication, query) pairs covered
  double pointwise_se = 0.0;
  double simultaneous = 0.0;  // fraction of replications with every query covered
  double simultaneous_se = 0.0;
  double mean_critical_value = 0.0;
};

struct ReplicationRecord {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  // Per level: queries covered pointwise, and whether all were covered jointly.
  std::vector<int> pointwise_hits;
  std::vector<bool> joint_hit;
  std::vector<double> critical_values;
};

struct CoverageReport {
  std::vector<CoverageLevel> levels;
  int replications = 0;
  int failures = 0;
  int queries = 0;
  std::vector<ReplicationRecord> details;
};

// Ground truth is drawn once from the spec; each replication resamples the
// data, refits and checks the intervals against the true Psi_{i,j,0}.
CoverageReport coverage_experiment(const ScenarioSpec& spec, const CoverageOptions& options);

struct RecoveryReport {
  double pearson = 0.0;
  // Mean over prompts of Kendall's tau-b between true and estimated model orderings.
  double kendall_tau = 0.0;
  std::size_t points = 0;
  bool pairwise = false;
  bool baseline = false;  // no autoraters: PromptSpecific baseline was fitted
};

RecoveryReport recovery_experiment(const ScenarioSpec& spec, const FitConfig& config);

double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y);
double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace captensor
