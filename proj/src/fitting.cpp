#include "adam_trainer.hpp"

#include "captensor/errors.hpp"
#include "captensor/fitting.hpp"
#include "captensor/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace captensor {

void FitConfig::validate() const {
  if (rank < 1) throw InputError("rank must be >= 1");
  if (adam.batch_size < 1) throw InputError("batch size must be >= 1");
  if (adam.epochs < 0) throw InputError("epochs must be >= 0");
  if (adam.learning_rates.empty()) throw InputError("at least one learning rate is required");
  for (double lr : adam.learning_rates) {
    if (!(lr > 0.0)) throw InputError("learning rates must be positive");
  }
  if (restarts.empty()) throw InputError("at least one restart seed is required");
  if (projection_eps < 0.0) throw InputError("projection eps must be >= 0");
  if (!(stage3.validation_fraction > 0.0 && stage3.validation_fraction <= 0.5)) {
    throw InputError("validation fraction must lie in (0, 0.5]");
  }
  if (stage3.patience < 0) throw InputError("patience must be >= 0");
  if (!(adam.final_lr_fraction > 0.0 && adam.final_lr_fraction <= 1.0)) {
    throw InputError("final_lr_fraction must lie in (0, 1]");
  }
}

FactorParams initialize_params(const Dims& dims, const std::vector<RaterSpec>& raters, int rank,
                               double init_scale, std::uint64_t seed) {
  FactorParams p = FactorParams::zeros(dims, rank, raters);
  Rng rng = make_rng(seed, 0x1417);
  auto fill = [&](Eigen::MatrixXd& m) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = init_scale * standard_normal(rng);
    }
  };
  fill(p.theta);
  fill(p.a);
  fill(p.gamma);
  return p;
}

// ---------------------------------------------------------------------------
// Restarts

namespace {

MultiRestartResult select_best(std::vector<Stage1Result>& runs, std::vector<RestartRecord> table) {
  MultiRestartResult out;
  std::size_t best = runs.size();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (table[i].diverged) continue;
    if (best == runs.size() || table[i].final_nll < table[best].final_nll) best = i;
  }
  if (best == runs.size()) {
    std::string msg = "all stage-1 restarts diverged";
    if (!table.empty()) msg += " (first: " + table.front().error + ")";
    throw FitError(msg);
  }
  out.best = std::move(runs[best]);
  out.selected = best;
  out.table = std::move(table);
  return out;
}

}  // namespace

MultiRestartResult multi_restart(ObservationSpan autorater_data, const Dims& dims,
                                 const std::vector<RaterSpec>& raters, const FitConfig& config) {
  config.validate();
  const std::size_t n_lr = config.adam.learning_rates.size();
  const std::size_t n = config.restarts.size() * n_lr;
  std::vector<Stage1Result> runs(n);
  std::vector<RestartRecord> table(n);
  parallel_for(n, [&](std::size_t idx) {
    const std::uint64_t seed = config.restarts[idx / n_lr];
    const double lr = config.adam.learning_rates[idx % n_lr];
    RestartRecord& rec = table[idx];
    rec.seed = seed;
    rec.learning_rate = lr;
    try {
      const FactorParams init = initialize_params(dims, raters, config.rank, config.init_scale, seed);
      runs[idx] = fit_stage1(init, autorater_data, config, seed, lr);
      rec.final_nll = runs[idx].final_nll();
    } catch (const FitError& e) {
      rec.diverged = true;
      rec.error = e.what();
      rec.final_nll = std::numeric_limits<double>::infinity();
    }
  });
  return select_best(runs, std::move(table));
}

MultiRestartResult multi_restart(const std::vector<FactorParams>& inits,
                                 ObservationSpan autorater_data, const FitConfig& config) {
  config.validate();
  if (inits.empty()) throw InputError("no initial points given");
  const std::size_t n_lr = config.adam.learning_rates.size();
  const std::size_t n = inits.size() * n_lr;
  std::vector<Stage1Result> runs(n);
  std::vector<RestartRecord> table(n);
  parallel_for(n, [&](std::size_t idx) {
    const std::size_t slot = idx / n_lr;
    const std::uint64_t seed = slot < config.restarts.size() ? config.restarts[slot] : slot;
    const double lr = config.adam.learning_rates[idx % n_lr];
    RestartRecord& rec = table[idx];
    rec.seed = seed;
    rec.learning_rate = lr;
    try {
      runs[idx] = fit_stage1(inits[slot], autorater_data, config, seed, lr);
      rec.final_nll = runs[idx].final_nll();
    } catch (const FitError& e) {
      rec.diverged = true;
      rec.error = e.what();
      rec.final_nll = std::numeric_limits<double>::infinity();
    }
  });
  return select_best(runs, std::move(table));
}

// ---------------------------------------------------------------------------
// Fine-tuning

ValidationSplit split_validation(ObservationSpan data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InputError("validation fraction must be in (0,1)");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, 0x5A11);
  shuffle_indices(idx, rng);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::vector<bool> is_val(data.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[idx[i]] = true;
  ValidationSplit out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (is_val[i] ? out.validation : out.train).push_back(data[i]);
  }
  return out;
}

FinetuneResult fit_stage3_finetune(const FactorParams& params, ObservationSpan human_train,
                                   ObservationSpan human_val, const FitConfig& config,
                                   std::uint64_t seed) {
  config.validate();
  if (human_val.empty()) throw InputError("fine-tuning needs a nonempty validation slice");
  if (human_train.empty()) throw InputError("fine-tuning needs human training observations");
  for (const auto* slice : {&human_train, &human_val}) {
    for (const Observation& o : *slice) {
      if (o.rater != 0) throw InputError("fine-tuning data must be human-rated");
      validate_observation(o, params.dims(), params.raters);
    }
  }

  detail::TrainerOptions opt;
  opt.mask = ParamMask::all(params.num_raters());
  opt.adam = config.adam;
  opt.adam.final_lr_fraction = 1.0;
  opt.learning_rate = config.stage3.learning_rate;
  opt.total_epochs = config.stage3.max_epochs;
  opt.normalize_columns = false;
  opt.projection_eps = config.projection_eps;
  opt.probability_floor = config.probability_floor;
  opt.seed = seed;
  detail::AdamTrainer trainer(params, human_train, opt);

  FinetuneResult out;
  out.params = params;
  double best = nll(params, human_val, config.probability_floor).value;
  out.validation_nll.push_back(best);
  int bad = 0;
  for (int e = 1; e <= config.stage3.max_epochs; ++e) {
    trainer.run_epoch();
    const double v = nll(trainer.params(), human_val, config.probability_floor).value;
    if (!std::isfinite(v)) throw FitError("fine-tuning diverged at epoch " + std::to_string(e));
    out.validation_nll.push_back(v);
    if (v < best) {
      best = v;
      bad = 0;
      out.best_epoch = e;
      out.params = trainer.params();
      out.params.fine_tuned = true;
    } else if (++bad > config.stage3.patience) {
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical form

CanonicalResult canonicalize(const FactorParams& params) {
  CanonicalResult out;
  FactorParams p = params;
  const int R = p.rank();
  for (int r = 0; r < R; ++r) {
    const double nt = p.theta.col(r).norm();
    const double na = p.a.col(r).norm();
    if (nt > 0.0) {
      p.theta.col(r) /= nt;
      p.gamma.col(r) *= nt;
    }
    if (na > 0.0) {
      p.a.col(r) /= na;
      p.gamma.col(r) *= na;
    }
    if (p.num_models() > 0 && p.theta(p.num_models() - 1, r) < 0.0) {
      p.theta.col(r) *= -1.0;
      p.gamma.col(r) *= -1.0;
    }
    if (p.num_prompts() > 0 && p.a(p.num_prompts() - 1, r) < 0.0) {
      p.a.col(r) *= -1.0;
      p.gamma.col(r) *= -1.0;
    }
  }
  std::vector<int> order(R);
  std::iota(order.begin(), order.end(), 0);
  Eigen::VectorXd norms(R);
  for (int r = 0; r < R; ++r) norms(r) = p.gamma.col(r).norm();
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return norms(x) > norms(y); });
  for (int r = 0; r + 1 < R; ++r) {
    if (std::abs(norms(order[r]) - norms(order[r + 1])) <= 1e-9) out.tied_norms = true;
  }
  out.params = p;
  for (int r = 0; r < R; ++r) {
    out.params.theta.col(r) = p.theta.col(order[r]);
    out.params.a.col(r) = p.a.col(order[r]);
    out.params.gamma.col(r) = p.gamma.col(order[r]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baselines

Stage1Result fit_baseline(ObservationSpan human_data, const Dims& dims,
                          const std::vector<RaterSpec>& raters, BaselineKind kind,
                          const FitConfig& config, std::uint64_t seed) {
  config.validate();
  if (human_data.empty()) throw InputError("baseline fit needs human observations");
  for (const Observation& o : human_data) {
    if (o.rater != 0) throw InputError("baselines are fit on human data only");
    validate_observation(o, dims, raters);
  }
  const int rank = kind == BaselineKind::Constant ? 1 : config.rank;
  FactorParams init = initialize_params(dims, raters, rank, config.init_scale, seed);
  init.gamma.setOnes();
  if (kind == BaselineKind::Constant) init.a.setOnes();

  detail::TrainerOptions opt;
  opt.mask = ParamMask::none(dims.raters);
  opt.mask.theta = true;
  opt.mask.a = kind == BaselineKind::PromptSpecific;
  opt.mask.cutoffs[0] = true;
  opt.adam = config.adam;
  opt.learning_rate = config.adam.learning_rates.at(0);
  opt.total_epochs = config.adam.epochs;
  // Gamma is fixed, so the scale has to live in theta and A.
  opt.normalize_columns = false;
  opt.projection_eps = config.projection_eps;
  opt.l2 = kind == BaselineKind::PromptSpecific ? config.baseline_l2 : 0.0;
  opt.probability_floor = config.probability_floor;
  opt.seed = seed;

  detail::AdamTrainer trainer(init, human_data, opt);
  Stage1Result out;
  out.seed = seed;
  out.learning_rate = opt.learning_rate;
  out.epoch_nll = detail::train(trainer, config.adam.epochs, "baseline fit");
  out.params = trainer.params();
  return out;
}

// ---------------------------------------------------------------------------

TwoStageResult fit_two_stage(const Dataset& data, const FitConfig& config) {
  data.validate();
  const auto autorater = data.autorater();
  const auto human = data.human();
  if (human.empty()) throw ContractError("no human observations: stage 2 cannot run");
  TwoStageResult out;
  out.stage1 = multi_restart(autorater, data.dims, data.raters, config);
  out.stage2 = fit_stage2(human, out.stage1.best.params, config.stage2);
  out.params = apply_stage2(out.stage1.best.params, out.stage2);
  return out;
}

}  // namespace captensor
