#include "captensor/synthetic.hpp"

#include "captensor/core_model.hpp"
#include "captensor/errors.hpp"
#include "captensor/random.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace captensor {

namespace {

constexpr std::uint64_t kTruthStream = 0x7247;
constexpr std::uint64_t kDesignStream = 0xDE51;
constexpr std::uint64_t kLabelStream = 0x1AB1;
constexpr std::uint64_t kReplicationStream = 0xC07E;
constexpr std::uint64_t kMcStream = 0x3C3C;

int draw_label(const Eigen::VectorXd& pmf, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (Eigen::Index c = 0; c + 1 < pmf.size(); ++c) {
    acc += pmf(c);
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(pmf.size() - 1);
}

}  // namespace

void ScenarioSpec::validate() const {
  if (dims.models < 1 || dims.prompts < 1) throw InputError("scenario needs models and prompts");
  if (dims.raters < 1 || static_cast<int>(raters.size()) != dims.raters) {
    throw InputError("scenario rater specs must match dims.raters");
  }
  for (int k = 0; k < dims.raters; ++k) {
    raters[k].validate();
    if (raters[k].rater_id != k) throw InputError("rater ids must be 0..K in order");
    if (raters[k].templ == Template::Pairwise && dims.models < 2) {
      throw InputError("pairwise raters need at least two models");
    }
  }
  if (rank < 1) throw InputError("rank must be >= 1");
  if (labels_per_cell < 0 || human_label_budget < 0 || human_cell_multiplicity < 1) {
    throw InputError("label counts must be nonnegative");
  }
  if (human_label_budget > 0 &&
      static_cast<double>(human_label_budget) >
          static_cast<double>(human_cells()) * human_cell_multiplicity) {
    throw InputError("human label budget exceeds human cells x multiplicity");
  }
  for (int j : human_prompts) {
    if (j < 0 || j >= dims.prompts) throw InputError("human prompt out of range");
  }
  if (!(theta_scale >= 0 && a_scale >= 0 && gamma_scale >= 0 && human_gamma_scale >= 0)) {
    throw InputError("scales must be nonnegative");
  }
  if (!(min_gap > 0.0) || !(cutoff_spacing > 0.0) || !(cutoff_shift >= 0.0)) {
    throw InputError("cutoff spacing and min gap must be positive");
  }
  for (const DesignEntry& d : design) {
    Observation o{d.subject, d.prompt, d.rater, 0};
    validate_observation(o, dims, raters);
    if (d.count < 0) throw InputError("design counts must be nonnegative");
  }
}

std::size_t ScenarioSpec::human_cells() const {
  const std::size_t prompts = human_prompts.empty() ? dims.prompts : human_prompts.size();
  const std::size_t I = dims.models;
  const std::size_t subjects = raters.at(0).templ == Template::Pairwise ? I * (I - 1) : I;
  return subjects * prompts;
}

FactorParams generate_ground_truth(const ScenarioSpec& spec) {
  spec.validate();
  FactorParams p = FactorParams::zeros(spec.dims, spec.rank, spec.raters);
  Rng rng = make_rng(spec.seed, kTruthStream);
  for (Eigen::Index r = 0; r < p.theta.cols(); ++r) {
    for (Eigen::Index i = 0; i < p.theta.rows(); ++i) p.theta(i, r) = spec.theta_scale * standard_normal(rng);
  }
  for (Eigen::Index r = 0; r < p.a.cols(); ++r) {
    for (Eigen::Index j = 0; j < p.a.rows(); ++j) {
      p.a(j, r) = spec.a_mean + spec.a_scale * standard_normal(rng);
    }
  }
  for (Eigen::Index k = 0; k < p.gamma.rows(); ++k) {
    const double s = spec.gamma_scale * (k == 0 ? spec.human_gamma_scale : 1.0);
    for (Eigen::Index r = 0; r < p.gamma.cols(); ++r) p.gamma(k, r) = s * standard_normal(rng);
  }
  for (int k = 0; k < spec.dims.raters; ++k) {
    const int n = spec.raters[k].num_categories - 1;
    Eigen::VectorXd gaps(std::max(n - 1, 0));
    for (Eigen::Index g = 0; g < gaps.size(); ++g) {
      gaps(g) = std::max(spec.min_gap, spec.cutoff_spacing * (0.75 + 0.5 * uniform01(rng)));
    }
    p.base_cutoff(k) = -0.5 * gaps.sum() + spec.cutoff_shift * standard_normal(rng);
    p.gaps[k] = gaps;
  }
  return canonicalize(p).params;
}

std::vector<DesignEntry> build_design(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (!spec.design.empty()) return spec.design;
  std::vector<DesignEntry> out;
  Rng rng = make_rng(seed, kDesignStream);
  const int I = spec.dims.models;
  for (int k = 1; k < spec.dims.raters; ++k) {
    if (spec.labels_per_cell == 0) break;
    const bool pairwise = spec.raters[k].templ == Template::Pairwise;
    for (int j = 0; j < spec.dims.prompts; ++j) {
      for (int i = 0; i < I; ++i) {
        if (!pairwise) {
          out.push_back({Subject::single(i), j, k, spec.labels_per_cell});
          continue;
        }
        int opp = static_cast<int>(uniform_index(rng, I - 1));
        if (opp >= i) ++opp;
        const Subject s = uniform01(rng) < 0.5 ? Subject::pair(i, opp) : Subject::pair(opp, i);
        out.push_back({s, j, k, spec.labels_per_cell});
      }
    }
  }
  if (spec.human_label_budget > 0) {
    std::vector<int> prompts = spec.human_prompts;
    if (prompts.empty()) {
      prompts.resize(spec.dims.prompts);
      std::iota(prompts.begin(), prompts.end(), 0);
    }
    const bool pairwise = spec.raters[0].templ == Template::Pairwise;
    std::map<std::tuple<int, int, int>, int> counts;
    int drawn = 0;
    while (drawn < spec.human_label_budget) {
      const int j = prompts[uniform_index(rng, prompts.size())];
      const int i0 = static_cast<int>(uniform_index(rng, I));
      int i1 = -1;
      if (pairwise) {
        i1 = static_cast<int>(uniform_index(rng, I - 1));
        if (i1 >= i0) ++i1;
      }
      int& c = counts[{i0, i1, j}];
      if (c >= spec.human_cell_multiplicity) continue;
      ++c;
      ++drawn;
    }
    for (const auto& [key, c] : counts) {
      const auto [i0, i1, j] = key;
      out.push_back({pairwise ? Subject::pair(i0, i1) : Subject::single(i0), j, 0, c});
    }
  }
  return out;
}

Dataset sample_design(const FactorParams& params, const std::vector<DesignEntry>& design,
                      std::uint64_t seed) {
  params.validate();
  Dataset ds;
  ds.dims = params.dims();
  ds.raters = params.raters;
  std::size_t total = 0;
  for (const DesignEntry& d : design) {
    validate_observation({d.subject, d.prompt, d.rater, 0}, ds.dims, ds.raters);
    if (d.count < 0) throw InputError("design counts must be nonnegative");
    total += static_cast<std::size_t>(d.count);
  }
  ds.observations.reserve(total);
  std::vector<Eigen::VectorXd> cut(params.num_raters());
  for (int k = 0; k < params.num_raters(); ++k) cut[k] = params.cutoffs(k);
  Rng rng = make_rng(seed, kLabelStream);
  for (const DesignEntry& d : design) {
    const double delta = effective_advantage(params, d.subject, d.prompt, d.rater);
    const Eigen::VectorXd pmf = ordinal_pmf(delta, cut[d.rater]);
    for (int n = 0; n < d.count; ++n) {
      ds.observations.push_back({d.subject, d.prompt, d.rater, draw_label(pmf, rng)});
    }
  }
  return ds;
}

Dataset sample_observations(const FactorParams& params, const ScenarioSpec& spec) {
  return sample_observations(params, spec, spec.seed);
}

Dataset sample_observations(const FactorParams& params, const ScenarioSpec& spec,
                            std::uint64_t seed) {
  if (params.dims() != spec.dims || params.rank() < 1) {
    throw InputError("parameters do not match the scenario dims");
  }
  return sample_design(params, build_design(spec, seed), seed);
}

// ---------------------------------------------------------------------------

CoverageReport coverage_experiment(const ScenarioSpec& spec, const CoverageOptions& options) {
  if (options.replications < 100) throw InputError("coverage needs at least 100 replications");
  if (options.levels.empty()) throw InputError("no coverage levels given");
  for (double l : options.levels) {
    if (!(l > 0.0 && l < 1.0)) throw InputError("coverage levels must lie in (0, 1)");
  }
  const FactorParams truth = generate_ground_truth(spec);
  std::vector<CoverageQuery> queries = options.queries;
  if (queries.empty()) {
    for (int i = 0; i < spec.dims.models; ++i) {
      for (int j = 0; j < spec.dims.prompts; ++j) queries.push_back({i, j});
    }
  }
  Eigen::VectorXd target(static_cast<Eigen::Index>(queries.size()));
  for (std::size_t q = 0; q < queries.size(); ++q) {
    target(static_cast<Eigen::Index>(q)) = capability(truth, queries[q].model, queries[q].prompt, 0);
  }

  const std::size_t L = options.levels.size();
  CoverageReport rep;
  rep.replications = options.replications;
  rep.queries = static_cast<int>(queries.size());
  rep.details.resize(options.replications);
  parallel_for(rep.details.size(), [&](std::size_t r) {
    ReplicationRecord& rec = rep.details[r];
    rec.seed = derive_seed(options.seed, kReplicationStream, r);
    try {
      const Dataset data = sample_observations(truth, spec, rec.seed);
      const std::vector<Observation> human = data.human();
      if (human.empty()) throw ContractError("scenario has no human labels");
      FactorParams frozen = truth;
      if (!options.oracle_features) {
        const std::vector<Observation> auto_obs = data.autorater();
        FitConfig cfg = options.fit;
        cfg.rank = spec.rank;
        frozen = multi_restart(auto_obs, data.dims, data.raters, cfg).best.params;
      }
      const Stage2Result s2 = fit_stage2(human, frozen, options.fit.stage2);
      const FactorParams fitted = apply_stage2(frozen, s2);
      Eigen::MatrixXd V(static_cast<Eigen::Index>(queries.size()), fitted.rank());
      for (std::size_t q = 0; q < queries.size(); ++q) {
        V.row(static_cast<Eigen::Index>(q)) =
            feature_vector(fitted, queries[q].model, queries[q].prompt).transpose();
      }
      const Eigen::VectorXd point = V * fitted.gamma.row(0).transpose();
      for (std::size_t l = 0; l < L; ++l) {
        const double level = options.levels[l];
        const double z = gaussian_two_sided_quantile(level);
        const double c = simultaneous_constant(V, s2.covariance, level, options.mc_draws,
                                               derive_seed(rec.seed, kMcStream, l));
        int hits = 0;
        bool joint = true;
        for (Eigen::Index q = 0; q < V.rows(); ++q) {
          const Eigen::VectorXd v = V.row(q).transpose();
          const IntervalEstimate pw =
              scaled_ci(point(q), v, s2.covariance, z, level, IntervalMode::Pointwise);
          const IntervalEstimate sm =
              scaled_ci(point(q), v, s2.covariance, c, level, IntervalMode::Simultaneous);
          auto covers = [&](const IntervalEstimate& ci) {
            return ci.degenerate || (ci.lower <= target(q) && target(q) <= ci.upper);
          };
          if (covers(pw)) ++hits;
          if (!covers(sm)) joint = false;
        }
        rec.pointwise_hits.push_back(hits);
        rec.joint_hit.push_back(joint);
        rec.critical_values.push_back(c);
      }
    } catch (const Error& e) {
      rec.failed = true;
      rec.error = e.what();
    }
  });

  for (std::size_t l = 0; l < L; ++l) {
    CoverageLevel cl;
    cl.level = options.levels[l];
    double hits = 0.0, joint = 0.0, csum = 0.0;
    int ok = 0;
    for (const ReplicationRecord& rec : rep.details) {
      if (rec.failed) continue;
      ++ok;
      hits += rec.pointwise_hits[l];
      joint += rec.joint_hit[l] ? 1.0 : 0.0;
      csum += rec.critical_values[l];
    }
    if (ok > 0) {
      const double npw = static_cast<double>(ok) * static_cast<double>(queries.size());
      cl.pointwise = hits / npw;
      cl.pointwise_se = std::sqrt(cl.pointwise * (1.0 - cl.pointwise) / npw);
      cl.simultaneous = joint / ok;
      cl.simultaneous_se = std::sqrt(cl.simultaneous * (1.0 - cl.simultaneous) / ok);
      cl.mean_critical_value = csum / ok;
    }
    rep.levels.push_back(cl);
  }
  for (const ReplicationRecord& rec : rep.details) rep.failures += rec.failed ? 1 : 0;
  return rep;
}

// ---------------------------------------------------------------------------

double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("correlation needs two equal-length series");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("tau needs two equal-length series");
  double concordant = 0.0, discordant = 0.0, tx = 0.0, ty = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        tx += 1.0;
      } else if (dy == 0.0) {
        ty += 1.0;
      } else if ((dx > 0.0) == (dy > 0.0)) {
        concordant += 1.0;
      } else {
        discordant += 1.0;
      }
    }
  }
  const double denom = std::sqrt((concordant + discordant + tx) * (concordant + discordant + ty));
  return denom == 0.0 ? 0.0 : (concordant - discordant) / denom;
}

RecoveryReport recovery_experiment(const ScenarioSpec& spec, const FitConfig& config) {
  const FactorParams truth = generate_ground_truth(spec);
  const Dataset data = sample_observations(truth, spec);
  RecoveryReport rep;
  rep.pairwise = spec.raters[0].templ == Template::Pairwise;
  FactorParams fitted;
  if (data.dims.raters == 1) {
    const std::vector<Observation> human = data.human();
    if (human.empty()) throw ContractError("no human observations: nothing to fit");
    rep.baseline = true;
    fitted = fit_baseline(human, data.dims, data.raters, BaselineKind::PromptSpecific, config,
                          spec.seed)
                 .params;
  } else {
    FitConfig cfg = config;
    cfg.rank = spec.rank;
    fitted = fit_two_stage(data, cfg).params;
  }

  const int I = spec.dims.models;
  std::vector<double> t_all, e_all;
  double tau_sum = 0.0;
  for (int j = 0; j < spec.dims.prompts; ++j) {
    std::vector<double> t(I), e(I);
    for (int i = 0; i < I; ++i) {
      t[i] = capability(truth, i, j, 0);
      e[i] = capability(fitted, i, j, 0);
    }
    if (rep.pairwise) {
      for (int i0 = 0; i0 < I; ++i0) {
        for (int i1 = i0 + 1; i1 < I; ++i1) {
          t_all.push_back(t[i1] - t[i0]);
          e_all.push_back(e[i1] - e[i0]);
        }
      }
    } else {
      t_all.insert(t_all.end(), t.begin(), t.end());
      e_all.insert(e_all.end(), e.begin(), e.end());
    }
    if (I >= 2) tau_sum += kendall_tau_b(t, e);
  }
  rep.points = t_all.size();
  rep.pearson = rep.points >= 2 ? pearson_correlation(t_all, e_all) : 0.0;
  rep.kendall_tau = tau_sum / spec.dims.prompts;
  return rep;
}

}  // namespace captensor
