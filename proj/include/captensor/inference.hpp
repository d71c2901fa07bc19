#pragma once

#include "captensor/types.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace captensor {

inline constexpr int kDefaultMcDraws = 100000;
// Queries with v^T Sigma v at or below this get zero-width, flagged intervals.
inline constexpr double kDegenerateVariance = 1e-14;

// Phi^{-1}((1 + level) / 2).
double gaussian_two_sided_quantile(double level);

// v_{i,j}: elementwise product of theta row i and A row j.
Eigen::VectorXd feature_vector(const FactorParams& params, int model, int prompt);

// v_{i,J}: elementwise product of theta row i and a unit composite direction.
Eigen::VectorXd composite_feature(const FactorParams& params, int model,
                                  const Eigen::VectorXd& direction);

IntervalEstimate pointwise_ci(double point, const Eigen::VectorXd& v, const CovarianceEstimate& cov,
                              double level);

// Interval with an explicit critical value (the simultaneous constant c).
IntervalEstimate scaled_ci(double point, const Eigen::VectorXd& v, const CovarianceEstimate& cov,
                           double critical, double level, IntervalMode mode);

// Calibrates c so that P(max_q |Z_q| <= c) = level, where Z is centered
// Gaussian with the correlation of V Sigma V^T. Rows with (near) zero variance
// are dropped from the max. Draws are generated in fixed-size blocks whose
// seeds come from (seed, block index), so the result does not depend on threading.
double simultaneous_constant(const Eigen::MatrixXd& features, const CovarianceEstimate& cov,
                             double level, int mc_draws = kDefaultMcDraws,
                             std::uint64_t seed = 0);

struct Scope {
  enum class Kind { Prompt, Category };
  Kind kind = Kind::Prompt;
  int prompt = 0;
  std::vector<int> prompts;
  std::string name;

  static Scope single_prompt(int j);
  static Scope category(std::vector<int> prompts, std::string name = {});
};

struct IntervalOptions {
  double level = 0.95;
  IntervalMode mode = IntervalMode::Simultaneous;
  int mc_draws = kDefaultMcDraws;
  std::uint64_t seed = 0;
};

struct LeaderboardEntry {
  int model = 0;
  IntervalEstimate interval;
  int rank = 0;  // 1 = best point estimate
};

struct Leaderboard {
  Scope scope;
  std::vector<LeaderboardEntry> entries;
  std::optional<CompositeResult> composite;  // category scopes only
};

struct LeaderboardSet {
  std::vector<Leaderboard> boards;
  double critical_value = 0.0;
  // Human template is pairwise and values are compared across prompts; only
  // within-prompt differences are meaningful then.
  bool cross_prompt_caveat = false;
};

// Leaderboards for several scopes with intervals calibrated jointly over all
// (model, scope) queries.
LeaderboardSet leaderboards(const FactorParams& params, const CovarianceEstimate& cov,
                            const std::vector<Scope>& scopes, const IntervalOptions& options);

Leaderboard leaderboard(const FactorParams& params, const CovarianceEstimate& cov,
                        const Scope& scope, const IntervalOptions& options);

// Leading eigenvector of sum_j a_j a_j^T over the prompt set, with the first
// nonzero coordinate made positive, and its eigenvalue share.
CompositeResult reference_composite(const FactorParams& params, const std::vector<int>& prompts);
CompositeResult reference_composite(const Eigen::MatrixXd& rows);

enum class Verdict { FirstBetter, SecondBetter, Indistinguishable };
const char* to_string(Verdict v);

struct ComparisonRow {
  int prompt = 0;
  IntervalEstimate interval;  // Psi(second) - Psi(first)
  Verdict verdict = Verdict::Indistinguishable;
};

struct Comparison {
  int first = 0;
  int second = 0;
  std::vector<ComparisonRow> rows;
  double critical_value = 0.0;
  double fraction_second_better = 0.0;
  double fraction_indistinguishable = 0.0;
  double fraction_first_better = 0.0;
};

Verdict verdict_for(const IntervalEstimate& interval);

Comparison compare_models(const FactorParams& params, const CovarianceEstimate& cov, int first,
                          int second, const std::vector<int>& prompts,
                          const IntervalOptions& options);

struct GroupTest {
  int group = 0;
  int size = 0;
  double cohesion = 0.0;
  double p_value = 1.0;
  bool skipped = false;  // fewer than two prompts
};

// Permutation test of group/embedding independence with the cohesion of each
// group as statistic. assignment[j] is the group of prompt j, or -1 to leave
// the prompt out. p = (1 + #{permuted >= observed}) / (1 + n_permutations).
std::vector<GroupTest> cohesion_permutation_test(const FactorParams& params,
                                                 const std::vector<int>& assignment,
                                                 int n_permutations, std::uint64_t seed);

}  // namespace captensor
