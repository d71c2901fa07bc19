#include "adam_trainer.hpp"

#include "captensor/errors.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>
#include <numbers>

namespace captensor::detail {

namespace {

template <typename Visit>
void for_each_block(const ParamMask& mask, int raters, Visit&& visit) {
  if (mask.theta) visit(0, -1);
  if (mask.a) visit(1, -1);
  for (int k = 0; k < raters; ++k) {
    if (mask.gamma_row(k)) visit(2, k);
  }
  for (int k = 0; k < raters; ++k) {
    if (mask.cutoff(k)) visit(3, k);
  }
}

template <typename P>
Eigen::Index packed_size(const P& p, const ParamMask& mask) {
  Eigen::Index n = 0;
  for_each_block(mask, static_cast<int>(p.gamma.rows()), [&](int block, int k) {
    switch (block) {
      case 0: n += p.theta.size(); break;
      case 1: n += p.a.size(); break;
      case 2: n += p.gamma.cols(); break;
      case 3: n += 1 + p.gaps[k].size(); break;
    }
  });
  return n;
}

template <typename P>
Eigen::VectorXd pack_impl(const P& p, const ParamMask& mask) {
  Eigen::VectorXd out(packed_size(p, mask));
  Eigen::Index o = 0;
  auto put = [&](const auto& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i) out(o++) = x.data()[i];
  };
  for_each_block(mask, static_cast<int>(p.gamma.rows()), [&](int block, int k) {
    switch (block) {
      case 0: put(p.theta); break;
      case 1: put(p.a); break;
      case 2:
        for (Eigen::Index r = 0; r < p.gamma.cols(); ++r) out(o++) = p.gamma(k, r);
        break;
      case 3:
        out(o++) = p.base_cutoff(k);
        put(p.gaps[k]);
        break;
    }
  });
  return out;
}

}  // namespace

Eigen::VectorXd pack(const FactorParams& params, const ParamMask& mask) {
  return pack_impl(params, mask);
}

Eigen::VectorXd pack(const ParamGradient& grad, const ParamMask& mask) {
  return pack_impl(grad, mask);
}

void unpack(const Eigen::VectorXd& flat, const ParamMask& mask, FactorParams& p) {
  Eigen::Index o = 0;
  auto get = [&](auto& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = flat(o++);
  };
  for_each_block(mask, p.num_raters(), [&](int block, int k) {
    switch (block) {
      case 0: get(p.theta); break;
      case 1: get(p.a); break;
      case 2:
        for (Eigen::Index r = 0; r < p.gamma.cols(); ++r) p.gamma(k, r) = flat(o++);
        break;
      case 3:
        p.base_cutoff(k) = flat(o++);
        get(p.gaps[k]);
        break;
    }
  });
}

Adam::Adam(Eigen::Index size, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::VectorXd& x, const Eigen::VectorXd& g, double lr) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * g;
  v_ = beta2_ * v_ + (1.0 - beta2_) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x(i) -= lr * (m_(i) / c1) / (std::sqrt(v_(i) / c2) + eps_);
  }
}

void clamp_gaps(FactorParams& params, const ParamMask& mask, double eps) {
  for (int k = 0; k < params.num_raters(); ++k) {
    if (!mask.cutoff(k)) continue;
    // eps = 0 still has to leave strictly positive gaps.
    const double floor = eps > 0.0 ? eps : 1e-12;
    params.gaps[k] = params.gaps[k].cwiseMax(floor);
  }
}

void normalize_columns(Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.cols(); ++r) {
    const double n = m.col(r).norm();
    if (n > 0.0) m.col(r) /= n;
  }
}

AdamTrainer::AdamTrainer(FactorParams init, ObservationSpan data, TrainerOptions options)
    : params_(std::move(init)),
      opt_(std::move(options)),
      adam_(pack(params_, opt_.mask).size(), opt_.adam.beta1, opt_.adam.beta2, opt_.adam.eps),
      grad_(ParamGradient::zeros_like(params_)) {
  flat_ = pack(params_, opt_.mask);
  const long n = static_cast<long>(data.size());
  const long b = std::max(1, opt_.adam.batch_size);
  total_steps_ = std::max(1L, static_cast<long>(opt_.total_epochs) * ((n + b - 1) / b));
  full_batch_ = n <= b;
  if (full_batch_) {
    aggregate(data);
  } else {
    data_.assign(data.begin(), data.end());
    work_ = data_;
  }
}

void AdamTrainer::aggregate(ObservationSpan data) {
  // Distinct observations in (rater, prompt, first, second, label) order.
  const std::uint64_t I = static_cast<std::uint64_t>(params_.num_models());
  const std::uint64_t J = static_cast<std::uint64_t>(params_.num_prompts());
  const std::uint64_t K = static_cast<std::uint64_t>(params_.num_raters());
  std::uint64_t C = 1;
  for (const RaterSpec& r : params_.raters) C = std::max<std::uint64_t>(C, r.num_categories);
  const std::uint64_t cells = K * J * I * (I + 1) * C;
  if (cells <= (std::uint64_t{1} << 22) && cells <= 4 * data.size() + 1024) {
    auto index = [&](const Observation& o) {
      const std::uint64_t second = static_cast<std::uint64_t>(o.subject.second + 1);
      return (((static_cast<std::uint64_t>(o.rater) * J + o.prompt) * I + o.subject.first) *
                  (I + 1) + second) * C + o.label;
    };
    std::vector<double> count(cells, 0.0);
    std::vector<std::uint32_t> first_seen(cells, 0);
    for (std::size_t t = 0; t < data.size(); ++t) {
      const std::uint64_t c = index(data[t]);
      if (count[c] == 0.0) first_seen[c] = static_cast<std::uint32_t>(t);
      count[c] += 1.0;
    }
    for (std::uint64_t c = 0; c < cells; ++c) {
      if (count[c] == 0.0) continue;
      distinct_.push_back(data[first_seen[c]]);
      multiplicity_.push_back(count[c]);
    }
    return;
  }
  auto key = [](const Observation& o) {
    return std::tuple(o.rater, o.prompt, o.subject.first, o.subject.second, o.label);
  };
  std::vector<Observation> sorted(data.begin(), data.end());
  std::sort(sorted.begin(), sorted.end(),
            [&](const Observation& x, const Observation& y) { return key(x) < key(y); });
  for (const Observation& o : sorted) {
    if (!distinct_.empty() && distinct_.back() == o) {
      multiplicity_.back() += 1.0;
    } else {
      distinct_.push_back(o);
      multiplicity_.push_back(1.0);
    }
  }
}

double AdamTrainer::current_lr() const {
  const double f = opt_.adam.final_lr_fraction;
  if (f >= 1.0) return opt_.learning_rate;
  const double progress = std::min(1.0, static_cast<double>(step_) / total_steps_);
  return opt_.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

void AdamTrainer::run_epoch() {
  ++epoch_;
  if (full_batch_) {
    take_step(distinct_, multiplicity_.data(), 1.0);
    return;
  }
  std::vector<std::size_t> perm(data_.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng = make_rng(opt_.seed, 0x5348, static_cast<std::uint64_t>(epoch_));
  shuffle_indices(perm, rng);
  for (std::size_t i = 0; i < perm.size(); ++i) work_[i] = data_[perm[i]];

  const std::size_t batch = static_cast<std::size_t>(std::max(1, opt_.adam.batch_size));
  const double n_total = static_cast<double>(std::max<std::size_t>(1, data_.size()));
  for (std::size_t start = 0; start < work_.size(); start += batch) {
    const std::size_t len = std::min(batch, work_.size() - start);
    take_step(ObservationSpan(work_).subspan(start, len), nullptr,
              static_cast<double>(len) / n_total);
  }
}

void AdamTrainer::take_step(ObservationSpan batch, const double* weights, double share) {
  grad_.set_zero();
  last_value_ =
      detail::accumulate_weighted(params_, batch, weights, opt_.mask, grad_, opt_.probability_floor);
  if (opt_.l2 > 0.0) {
    last_value_ += opt_.l2 * (params_.theta.squaredNorm() + params_.a.squaredNorm());
    // Penalty spread over batches so one epoch sees it once in total.
    const double w = 2.0 * opt_.l2 * share;
    if (opt_.mask.theta) grad_.theta += w * params_.theta;
    if (opt_.mask.a) grad_.a += w * params_.a;
  }
  adam_.step(flat_, pack(grad_, opt_.mask), current_lr());
  ++step_;
  unpack(flat_, opt_.mask, params_);
  clamp_gaps(params_, opt_.mask, opt_.projection_eps);
  if (opt_.normalize_columns) {
    if (opt_.mask.theta) normalize_columns(params_.theta);
    if (opt_.mask.a) normalize_columns(params_.a);
  }
  flat_ = pack(params_, opt_.mask);
  if (!flat_.allFinite()) {
    throw FitError("parameters became non-finite in epoch " + std::to_string(epoch_));
  }
}

std::vector<double> train(AdamTrainer& trainer, int epochs, const std::string& what) {
  std::vector<double> trace;
  auto record = [&](double value, int epoch) {
    if (!std::isfinite(value)) {
      throw FitError(what + " diverged: training NLL is not finite at epoch " +
                     std::to_string(epoch));
    }
    trace.push_back(value);
  };
  for (int e = 1; e <= epochs; ++e) {
    trainer.run_epoch();
    if (!trainer.full_batch()) {
      record(trainer.objective(), e);
    } else if (e > 1) {
      record(trainer.value_before_last_step(), e - 1);
    }
  }
  if (epochs == 0 || trainer.full_batch()) record(trainer.objective(), epochs);
  return trace;
}

double AdamTrainer::objective() const {
  ParamGradient unused = ParamGradient::zeros_like(params_);
  const ParamMask none = ParamMask::none(params_.num_raters());
  double value = full_batch_
                     ? detail::accumulate_weighted(params_, distinct_, multiplicity_.data(), none,
                                                   unused, opt_.probability_floor)
                     : accumulate_nll_gradient(params_, data_, none, unused, opt_.probability_floor);
  if (opt_.l2 > 0.0) {
    value += opt_.l2 * (params_.theta.squaredNorm() + params_.a.squaredNorm());
  }
  return value;
}

}  // namespace captensor::detail

namespace captensor {

Stage1Result fit_stage1(const FactorParams& init, ObservationSpan autorater_data,
                        const FitConfig& config, std::uint64_t seed, double learning_rate) {
  config.validate();
  if (autorater_data.empty()) throw InputError("stage 1 needs autorater observations");
  for (const Observation& o : autorater_data) {
    if (o.rater == 0) throw InputError("stage 1 data must not contain human observations");
    validate_observation(o, init.dims(), init.raters);
  }
  detail::TrainerOptions opt;
  opt.mask = ParamMask::autorater(init.num_raters());
  opt.adam = config.adam;
  opt.learning_rate = learning_rate;
  opt.total_epochs = config.adam.epochs;
  opt.normalize_columns = true;
  opt.projection_eps = config.projection_eps;
  opt.probability_floor = config.probability_floor;
  opt.seed = seed;

  detail::AdamTrainer trainer(init, autorater_data, opt);
  Stage1Result out;
  out.seed = seed;
  out.learning_rate = learning_rate;
  out.epoch_nll = detail::train(trainer, config.adam.epochs, "stage 1");
  out.params = trainer.params();
  return out;
}

Stage1Result fit_stage1(ObservationSpan autorater_data, const Dims& dims,
                        const std::vector<RaterSpec>& raters, const FitConfig& config,
                        std::uint64_t seed) {
  const FactorParams init = initialize_params(dims, raters, config.rank, config.init_scale, seed);
  return fit_stage1(init, autorater_data, config, seed, config.adam.learning_rates.at(0));
}

}  // namespace captensor
