#include "captensor/inference.hpp"

#include "captensor/errors.hpp"
#include "captensor/random.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace captensor {

double gaussian_two_sided_quantile(double level) {
  if (!(level > 0.0 && level < 1.0)) throw InputError("confidence level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 * (1.0 + level));
}

Eigen::VectorXd feature_vector(const FactorParams& params, int model, int prompt) {
  if (model < 0 || model >= params.num_models()) throw InputError("model index out of range");
  if (prompt < 0 || prompt >= params.num_prompts()) throw InputError("prompt index out of range");
  return params.theta.row(model).cwiseProduct(params.a.row(prompt)).transpose();
}

Eigen::VectorXd composite_feature(const FactorParams& params, int model,
                                  const Eigen::VectorXd& direction) {
  if (model < 0 || model >= params.num_models()) throw InputError("model index out of range");
  if (direction.size() != params.rank()) throw InputError("direction has wrong length");
  if (std::abs(direction.norm() - 1.0) > 1e-8) throw InputError("direction must be a unit vector");
  return params.theta.row(model).transpose().cwiseProduct(direction);
}

namespace {

void check_cov(const CovarianceEstimate& cov, int rank) {
  if (cov.sigma_hat.rows() != rank || cov.sigma_hat.cols() != rank) {
    throw InputError("covariance dimension does not match the rank");
  }
  if (cov.m < 1) throw InputError("covariance needs m >= 1");
}

// v^T Sigma v, clipped at zero within tolerance.
double quadratic_form(const Eigen::VectorXd& v, const CovarianceEstimate& cov) {
  const double q = v.dot(cov.sigma_hat * v);
  if (q < -1e-10) throw NumericalError("negative query variance v^T Sigma v");
  return std::max(q, 0.0);
}

bool degenerate_query(const Eigen::VectorXd& v, const CovarianceEstimate& cov) {
  return quadratic_form(v, cov) <= kDegenerateVariance;
}

}  // namespace

IntervalEstimate scaled_ci(double point, const Eigen::VectorXd& v, const CovarianceEstimate& cov,
                           double critical, double level, IntervalMode mode) {
  check_cov(cov, static_cast<int>(v.size()));
  IntervalEstimate ci;
  ci.point = point;
  ci.level = level;
  ci.mode = mode;
  ci.calibration_constant = critical;
  const double quad = quadratic_form(v, cov);
  if (quad <= kDegenerateVariance) {
    ci.degenerate = true;
    ci.lower = ci.upper = point;
    return ci;
  }
  ci.standard_error = std::sqrt(quad / static_cast<double>(cov.m));
  const double half = critical * ci.standard_error;
  ci.lower = point - half;
  ci.upper = point + half;
  return ci;
}

IntervalEstimate pointwise_ci(double point, const Eigen::VectorXd& v, const CovarianceEstimate& cov,
                              double level) {
  return scaled_ci(point, v, cov, gaussian_two_sided_quantile(level), level,
                   IntervalMode::Pointwise);
}

double simultaneous_constant(const Eigen::MatrixXd& features, const CovarianceEstimate& cov,
                             double level, int mc_draws, std::uint64_t seed) {
  const int R = static_cast<int>(features.cols());
  check_cov(cov, R);
  if (features.rows() < 1) throw InputError("simultaneous calibration needs at least one query");
  if (mc_draws < 1000) throw InputError("simultaneous calibration needs at least 1000 draws");
  if (!(level > 0.0 && level < 1.0)) throw InputError("confidence level must lie in (0, 1)");

  // Sigma = L L^T with L = Q sqrt(Lambda); negative roundoff eigenvalues clipped.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov.sigma_hat + cov.sigma_hat.transpose()));
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd L = es.eigenvectors() * lam.asDiagonal();

  // Standardized loadings: row q is v_q^T L / sd_q, so Z = loading * eps has
  // the correlation D^{-1/2} (V Sigma V^T) D^{-1/2}.
  std::vector<Eigen::RowVectorXd> rows;
  for (Eigen::Index q = 0; q < features.rows(); ++q) {
    const Eigen::VectorXd v = features.row(q).transpose();
    if (degenerate_query(v, cov)) continue;
    Eigen::RowVectorXd l = features.row(q) * L;
    const double sd = l.norm();
    if (sd <= 0.0) continue;
    rows.push_back(l / sd);
  }
  if (rows.empty()) throw NumericalError("every query has zero variance; nothing to calibrate");
  Eigen::MatrixXd loading(static_cast<Eigen::Index>(rows.size()), R);
  for (std::size_t q = 0; q < rows.size(); ++q) loading.row(static_cast<Eigen::Index>(q)) = rows[q];

  constexpr int kBlock = 1024;
  const int blocks = (mc_draws + kBlock - 1) / kBlock;
  std::vector<double> maxima(static_cast<std::size_t>(mc_draws));
  parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t b) {
    const int begin = static_cast<int>(b) * kBlock;
    const int len = std::min(kBlock, mc_draws - begin);
    Rng rng = make_rng(seed, 0xC0DE, b);
    Eigen::MatrixXd eps(R, len);
    for (int c = 0; c < len; ++c) {
      for (int r = 0; r < R; ++r) eps(r, c) = standard_normal(rng);
    }
    const Eigen::MatrixXd z = loading * eps;
    for (int c = 0; c < len; ++c) {
      maxima[static_cast<std::size_t>(begin + c)] = z.col(c).cwiseAbs().maxCoeff();
    }
  });
  const auto k = static_cast<std::size_t>(std::ceil(level * mc_draws - 1e-9)) - 1;
  std::nth_element(maxima.begin(), maxima.begin() + static_cast<std::ptrdiff_t>(k), maxima.end());
  return maxima[k];
}

// ---------------------------------------------------------------------------
// Reference composite

namespace {

struct Spectrum {
  Eigen::VectorXd values;  // nonincreasing, roundoff clamped to zero
  Eigen::VectorXd leading;
};

Spectrum gram_spectrum(const Eigen::MatrixXd& gram) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  const Eigen::Index n = gram.rows();
  Spectrum s;
  s.values = es.eigenvalues().reverse();
  const double top = s.values(0);
  for (Eigen::Index r = 0; r < n; ++r) {
    if (s.values(r) <= 1e-12 * top) s.values(r) = 0.0;
  }
  s.leading = es.eigenvectors().col(n - 1);
  return s;
}

double cohesion_of_gram(const Eigen::MatrixXd& gram) {
  const Spectrum s = gram_spectrum(gram);
  const double total = s.values.sum();
  return total > 0.0 ? s.values(0) / total : 0.0;
}

}  // namespace

CompositeResult reference_composite(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 1) throw InputError("reference composite needs a nonempty prompt set");
  const Eigen::MatrixXd gram = rows.transpose() * rows;
  if (gram.cwiseAbs().maxCoeff() == 0.0) {
    throw NumericalError("prompt loadings are all zero; no composite direction");
  }
  const Spectrum s = gram_spectrum(gram);
  CompositeResult out;
  out.eigenvalues = s.values;
  out.direction = s.leading.normalized();
  for (Eigen::Index r = 0; r < out.direction.size(); ++r) {
    if (std::abs(out.direction(r)) > 1e-12) {
      if (out.direction(r) < 0.0) out.direction = -out.direction;
      break;
    }
  }
  const double total = s.values.sum();
  out.cohesion = s.values(0) / total;
  out.tied = s.values.size() > 1 && s.values(0) - s.values(1) <= 1e-10 * s.values(0);
  return out;
}

CompositeResult reference_composite(const FactorParams& params, const std::vector<int>& prompts) {
  if (prompts.empty()) throw InputError("reference composite needs a nonempty prompt set");
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(prompts.size()), params.rank());
  for (std::size_t n = 0; n < prompts.size(); ++n) {
    if (prompts[n] < 0 || prompts[n] >= params.num_prompts()) {
      throw InputError("prompt index out of range");
    }
    rows.row(static_cast<Eigen::Index>(n)) = params.a.row(prompts[n]);
  }
  return reference_composite(rows);
}

// ---------------------------------------------------------------------------
// Leaderboards

Scope Scope::single_prompt(int j) {
  Scope s;
  s.kind = Kind::Prompt;
  s.prompt = j;
  s.prompts = {j};
  s.name = "prompt " + std::to_string(j);
  return s;
}

Scope Scope::category(std::vector<int> prompts, std::string name) {
  Scope s;
  s.kind = Kind::Category;
  s.prompts = std::move(prompts);
  s.name = std::move(name);
  return s;
}

namespace {

void require_intervals_allowed(const FactorParams& params, const IntervalOptions& options) {
  if (options.mode != IntervalMode::None && params.fine_tuned) {
    throw ContractError(
        "confidence intervals are not valid for fine-tuned parameters; request mode none");
  }
}

double critical_value(const std::vector<Eigen::VectorXd>& queries, const CovarianceEstimate& cov,
                      const IntervalOptions& options) {
  if (options.mode == IntervalMode::None) return 0.0;
  const double z = gaussian_two_sided_quantile(options.level);
  if (options.mode == IntervalMode::Pointwise) return z;
  std::vector<Eigen::VectorXd> live;
  for (const auto& v : queries) {
    if (!degenerate_query(v, cov)) live.push_back(v);
  }
  if (live.empty()) return z;  // only degenerate queries: nothing to widen
  Eigen::MatrixXd V(static_cast<Eigen::Index>(live.size()), live.front().size());
  for (std::size_t q = 0; q < live.size(); ++q) V.row(static_cast<Eigen::Index>(q)) = live[q].transpose();
  return simultaneous_constant(V, cov, options.level, options.mc_draws, options.seed);
}

IntervalEstimate make_interval(double point, const Eigen::VectorXd& v, const CovarianceEstimate& cov,
                               double critical, const IntervalOptions& options) {
  if (options.mode == IntervalMode::None) {
    IntervalEstimate ci;
    ci.point = ci.lower = ci.upper = point;
    ci.mode = IntervalMode::None;
    return ci;
  }
  return scaled_ci(point, v, cov, critical, options.level, options.mode);
}

}  // namespace

LeaderboardSet leaderboards(const FactorParams& params, const CovarianceEstimate& cov,
                            const std::vector<Scope>& scopes, const IntervalOptions& options) {
  require_intervals_allowed(params, options);
  if (options.mode != IntervalMode::None) check_cov(cov, params.rank());
  if (scopes.empty()) throw InputError("no leaderboard scopes given");
  const Eigen::VectorXd gamma0 = params.gamma.row(0).transpose();
  const int I = params.num_models();

  LeaderboardSet out;
  std::vector<std::vector<Eigen::VectorXd>> feats(scopes.size());
  std::vector<Eigen::VectorXd> all;
  for (std::size_t s = 0; s < scopes.size(); ++s) {
    const Scope& scope = scopes[s];
    Leaderboard board;
    board.scope = scope;
    if (scope.kind == Scope::Kind::Prompt) {
      if (scope.prompt < 0 || scope.prompt >= params.num_prompts()) {
        throw InputError("prompt index out of range");
      }
      for (int i = 0; i < I; ++i) feats[s].push_back(feature_vector(params, i, scope.prompt));
    } else {
      if (scope.prompts.empty()) throw InputError("category scope has no prompts");
      board.composite = reference_composite(params, scope.prompts);
      for (int i = 0; i < I; ++i) {
        feats[s].push_back(composite_feature(params, i, board.composite->direction));
      }
    }
    all.insert(all.end(), feats[s].begin(), feats[s].end());
    out.boards.push_back(std::move(board));
  }

  out.critical_value = critical_value(all, cov, options);
  const bool any_category = std::any_of(scopes.begin(), scopes.end(), [](const Scope& s) {
    return s.kind == Scope::Kind::Category;
  });
  out.cross_prompt_caveat =
      params.human().templ == Template::Pairwise && (scopes.size() > 1 || any_category);

  for (std::size_t s = 0; s < scopes.size(); ++s) {
    auto& entries = out.boards[s].entries;
    for (int i = 0; i < I; ++i) {
      const double point = feats[s][i].dot(gamma0);
      entries.push_back({i, make_interval(point, feats[s][i], cov, out.critical_value, options), 0});
    }
    std::stable_sort(entries.begin(), entries.end(), [](const auto& x, const auto& y) {
      return x.interval.point > y.interval.point;
    });
    for (std::size_t r = 0; r < entries.size(); ++r) entries[r].rank = static_cast<int>(r) + 1;
  }
  return out;
}

Leaderboard leaderboard(const FactorParams& params, const CovarianceEstimate& cov,
                        const Scope& scope, const IntervalOptions& options) {
  return leaderboards(params, cov, {scope}, options).boards.front();
}

// ---------------------------------------------------------------------------
// Two-model comparison

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::FirstBetter: return "first_better";
    case Verdict::SecondBetter: return "second_better";
    case Verdict::Indistinguishable: return "indistinguishable";
  }
  return "?";
}

Verdict verdict_for(const IntervalEstimate& ci) {
  if (ci.lower > 0.0) return Verdict::SecondBetter;
  if (ci.upper < 0.0) return Verdict::FirstBetter;
  return Verdict::Indistinguishable;
}

Comparison compare_models(const FactorParams& params, const CovarianceEstimate& cov, int first,
                          int second, const std::vector<int>& prompts,
                          const IntervalOptions& options) {
  require_intervals_allowed(params, options);
  if (options.mode != IntervalMode::None) check_cov(cov, params.rank());
  const Eigen::VectorXd gamma0 = params.gamma.row(0).transpose();
  std::vector<Eigen::VectorXd> diffs;
  for (int j : prompts) {
    diffs.push_back(feature_vector(params, second, j) - feature_vector(params, first, j));
  }
  Comparison out;
  out.first = first;
  out.second = second;
  out.critical_value = critical_value(diffs, cov, options);
  int n_second = 0, n_first = 0, n_tie = 0;
  for (std::size_t n = 0; n < prompts.size(); ++n) {
    ComparisonRow row;
    row.prompt = prompts[n];
    row.interval = make_interval(diffs[n].dot(gamma0), diffs[n], cov, out.critical_value, options);
    row.verdict = verdict_for(row.interval);
    switch (row.verdict) {
      case Verdict::SecondBetter: ++n_second; break;
      case Verdict::FirstBetter: ++n_first; break;
      case Verdict::Indistinguishable: ++n_tie; break;
    }
    out.rows.push_back(row);
  }
  if (!prompts.empty()) {
    const double n = static_cast<double>(prompts.size());
    out.fraction_second_better = n_second / n;
    out.fraction_first_better = n_first / n;
    out.fraction_indistinguishable = n_tie / n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cohesion permutation test

std::vector<GroupTest> cohesion_permutation_test(const FactorParams& params,
                                                 const std::vector<int>& assignment,
                                                 int n_permutations, std::uint64_t seed) {
  if (n_permutations < 100) throw InputError("permutation test needs at least 100 permutations");
  if (static_cast<int>(assignment.size()) != params.num_prompts()) {
    throw InputError("group assignment must list every prompt (-1 for none)");
  }
  const int R = params.rank();
  std::vector<std::size_t> pool;
  std::vector<int> labels;
  std::map<int, int> sizes;
  for (std::size_t j = 0; j < assignment.size(); ++j) {
    if (assignment[j] < 0) continue;
    pool.push_back(j);
    labels.push_back(assignment[j]);
    ++sizes[assignment[j]];
  }
  std::vector<int> group_ids;
  std::map<int, std::size_t> slot;
  for (const auto& [g, n] : sizes) {
    slot[g] = group_ids.size();
    group_ids.push_back(g);
  }
  const std::size_t G = group_ids.size();

  std::vector<Eigen::MatrixXd> outer(pool.size());
  for (std::size_t n = 0; n < pool.size(); ++n) {
    const Eigen::VectorXd a = params.a.row(static_cast<Eigen::Index>(pool[n])).transpose();
    outer[n] = a * a.transpose();
  }
  auto cohesions = [&](const std::vector<int>& lab) {
    std::vector<Eigen::MatrixXd> gram(G, Eigen::MatrixXd::Zero(R, R));
    for (std::size_t n = 0; n < lab.size(); ++n) gram[slot.at(lab[n])] += outer[n];
    std::vector<double> c(G);
    for (std::size_t g = 0; g < G; ++g) c[g] = cohesion_of_gram(gram[g]);
    return c;
  };

  const std::vector<double> observed = cohesions(labels);
  std::vector<std::vector<char>> exceed(static_cast<std::size_t>(n_permutations));
  parallel_for(static_cast<std::size_t>(n_permutations), [&](std::size_t b) {
    std::vector<std::size_t> idx(labels.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(seed, 0x9E57, b);
    shuffle_indices(idx, rng);
    std::vector<int> permuted(labels.size());
    for (std::size_t n = 0; n < labels.size(); ++n) permuted[n] = labels[idx[n]];
    const auto c = cohesions(permuted);
    exceed[b].resize(G);
    for (std::size_t g = 0; g < G; ++g) exceed[b][g] = c[g] >= observed[g] - 1e-12 ? 1 : 0;
  });

  std::vector<GroupTest> out;
  for (std::size_t g = 0; g < G; ++g) {
    GroupTest t;
    t.group = group_ids[g];
    t.size = sizes[t.group];
    t.cohesion = observed[g];
    if (t.size < 2) {
      t.skipped = true;
      t.p_value = 1.0;
      out.push_back(t);
      continue;
    }
    long count = 0;
    for (int b = 0; b < n_permutations; ++b) count += exceed[static_cast<std::size_t>(b)][g];
    t.p_value = (1.0 + static_cast<double>(count)) / (1.0 + n_permutations);
    out.push_back(t);
  }
  return out;
}

}  // namespace captensor
