#include "captensor/core_model.hpp"

#include "captensor/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace captensor {

// ---------------------------------------------------------------------------
// Domain types

const char* to_string(Template t) {
  return t == Template::Pointwise ? "pointwise" : "pairwise";
}

Template template_from_string(const std::string& s) {
  if (s == "pointwise") return Template::Pointwise;
  if (s == "pairwise") return Template::Pairwise;
  throw InputError("unknown rater template '" + s + "'");
}

const char* to_string(IntervalMode mode) {
  switch (mode) {
    case IntervalMode::None: return "none";
    case IntervalMode::Pointwise: return "pointwise";
    case IntervalMode::Simultaneous: return "simultaneous";
  }
  return "?";
}

void RaterSpec::validate() const {
  if (rater_id < 0) throw InputError("rater id must be nonnegative");
  if (num_categories < 2) {
    throw InputError("rater " + std::to_string(rater_id) + " needs at least 2 categories");
  }
}

void validate_observation(const Observation& obs, const Dims& dims,
                          const std::vector<RaterSpec>& raters) {
  auto fail = [&](const std::string& what) { throw InputError(what); };
  if (obs.rater < 0 || obs.rater >= dims.raters) {
    fail("rater " + std::to_string(obs.rater) + " out of range");
  }
  if (obs.prompt < 0 || obs.prompt >= dims.prompts) {
    fail("prompt " + std::to_string(obs.prompt) + " out of range");
  }
  const RaterSpec& spec = raters.at(obs.rater);
  auto check_model = [&](int m) {
    if (m < 0 || m >= dims.models) fail("model " + std::to_string(m) + " out of range");
  };
  check_model(obs.subject.first);
  if (obs.subject.is_pair()) {
    check_model(obs.subject.second);
    if (obs.subject.first == obs.subject.second) fail("pair subject compares a model with itself");
    if (spec.templ != Template::Pairwise) fail("pair subject for pointwise rater");
  } else if (spec.templ != Template::Pointwise) {
    fail("single subject for pairwise rater");
  }
  if (obs.label < 0 || obs.label >= spec.num_categories) {
    fail("label " + std::to_string(obs.label) + " outside [0, " +
         std::to_string(spec.num_categories) + ")");
  }
}

void Dataset::validate() const {
  if (static_cast<int>(raters.size()) != dims.raters) {
    throw InputError("rater spec count does not match dims");
  }
  for (int k = 0; k < dims.raters; ++k) {
    raters[k].validate();
    if (raters[k].rater_id != k) throw InputError("rater specs must be ordered by id");
  }
  for (std::size_t n = 0; n < observations.size(); ++n) {
    try {
      validate_observation(observations[n], dims, raters);
    } catch (const InputError& e) {
      throw InputError("observation " + std::to_string(n) + ": " + e.what());
    }
  }
}

std::vector<Observation> Dataset::human() const {
  std::vector<Observation> out;
  std::copy_if(observations.begin(), observations.end(), std::back_inserter(out),
               [](const Observation& o) { return o.rater == 0; });
  return out;
}

std::vector<Observation> Dataset::autorater() const {
  std::vector<Observation> out;
  std::copy_if(observations.begin(), observations.end(), std::back_inserter(out),
               [](const Observation& o) { return o.rater > 0; });
  return out;
}

std::size_t Dataset::human_count() const {
  return static_cast<std::size_t>(std::count_if(
      observations.begin(), observations.end(), [](const Observation& o) { return o.rater == 0; }));
}

FactorParams FactorParams::zeros(const Dims& dims, int rank, const std::vector<RaterSpec>& raters) {
  if (rank < 1) throw InputError("rank must be at least 1");
  if (static_cast<int>(raters.size()) != dims.raters) {
    throw InputError("rater spec count does not match dims");
  }
  FactorParams p;
  p.theta = Eigen::MatrixXd::Zero(dims.models, rank);
  p.a = Eigen::MatrixXd::Zero(dims.prompts, rank);
  p.gamma = Eigen::MatrixXd::Zero(dims.raters, rank);
  p.raters = raters;
  p.base_cutoff = Eigen::VectorXd::Zero(dims.raters);
  for (const auto& r : raters) {
    r.validate();
    p.gaps.push_back(Eigen::VectorXd::Ones(r.num_categories - 2));
  }
  return p;
}

Eigen::VectorXd FactorParams::cutoffs(int rater) const {
  return cutoffs_from_gaps(base_cutoff(rater), gaps.at(rater));
}

void FactorParams::set_cutoffs(int rater, const Eigen::VectorXd& c) {
  if (c.size() != raters.at(rater).num_categories - 1) {
    throw InputError("cutoff vector has wrong length");
  }
  base_cutoff(rater) = c(0);
  Eigen::VectorXd g(c.size() - 1);
  for (Eigen::Index l = 0; l + 1 < c.size(); ++l) {
    g(l) = c(l + 1) - c(l);
    if (!(g(l) > 0.0)) throw InputError("cutoffs must be strictly increasing");
  }
  gaps.at(rater) = g;
}

void FactorParams::validate() const {
  const int r = rank();
  if (r < 1) throw InputError("rank must be at least 1");
  if (a.cols() != r || gamma.cols() != r) throw InputError("factor matrices disagree on rank");
  if (static_cast<int>(raters.size()) != num_raters() || base_cutoff.size() != num_raters() ||
      static_cast<int>(gaps.size()) != num_raters()) {
    throw InputError("per-rater cutoff storage does not match rater count");
  }
  for (int k = 0; k < num_raters(); ++k) {
    raters[k].validate();
    if (gaps[k].size() != raters[k].num_categories - 2) {
      throw InputError("rater " + std::to_string(k) + " gap vector has wrong length");
    }
    if (gaps[k].size() > 0 && !(gaps[k].minCoeff() > 0.0)) {
      throw InputError("rater " + std::to_string(k) + " has a nonpositive gap");
    }
  }
}

void CovarianceEstimate::validate() const {
  if (m < 1) throw InputError("covariance needs m >= 1");
  if (sigma_hat.rows() != sigma_hat.cols()) throw InputError("covariance must be square");
  if ((sigma_hat - sigma_hat.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
    throw NumericalError("covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_hat, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-8) {
    throw NumericalError("covariance is not positive semi-definite");
  }
}

// ---------------------------------------------------------------------------
// Likelihood

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

namespace {

void check_index(int value, int bound, const char* what) {
  if (value < 0 || value >= bound) {
    throw InputError(std::string(what) + " index " + std::to_string(value) + " out of range");
  }
}

}  // namespace

double capability(const FactorParams& params, int model, int prompt, int rater) {
  check_index(model, params.num_models(), "model");
  check_index(prompt, params.num_prompts(), "prompt");
  check_index(rater, params.num_raters(), "rater");
  double s = 0.0;
  for (int r = 0; r < params.rank(); ++r) {
    s += params.theta(model, r) * params.a(prompt, r) * params.gamma(rater, r);
  }
  return s;
}

double effective_advantage(const FactorParams& params, const Subject& subject, int prompt,
                           int rater) {
  check_index(rater, params.num_raters(), "rater");
  const bool pairwise = params.raters[rater].templ == Template::Pairwise;
  if (pairwise != subject.is_pair()) {
    throw InputError("subject does not match the template of rater " + std::to_string(rater));
  }
  if (!pairwise) return capability(params, subject.first, prompt, rater);
  return capability(params, subject.second, prompt, rater) -
         capability(params, subject.first, prompt, rater);
}

Eigen::VectorXd cutoffs_from_gaps(double base, const Eigen::VectorXd& gaps) {
  Eigen::VectorXd c(gaps.size() + 1);
  c(0) = base;
  for (Eigen::Index l = 0; l < gaps.size(); ++l) {
    if (!(gaps(l) > 0.0)) throw InputError("cutoff gaps must be strictly positive");
    c(l + 1) = c(l) + gaps(l);
  }
  return c;
}

namespace {

void check_cutoffs(const Eigen::VectorXd& cutoffs) {
  if (cutoffs.size() < 1) throw InputError("at least one cutoff is required");
  for (Eigen::Index l = 0; l + 1 < cutoffs.size(); ++l) {
    if (!(cutoffs(l + 1) > cutoffs(l))) throw InputError("cutoffs must be strictly increasing");
  }
}

// P(lo < latent <= hi) for z = hi - delta, x = lo - delta with x < z.
double interval_probability(double x, double z) {
  return sigmoid(z) * sigmoid(-x) * -std::expm1(x - z);
}

}  // namespace

Eigen::VectorXd ordinal_pmf(double delta, const Eigen::VectorXd& cutoffs) {
  check_cutoffs(cutoffs);
  const Eigen::Index c = cutoffs.size() + 1;
  Eigen::VectorXd p(c);
  p(0) = sigmoid(cutoffs(0) - delta);
  for (Eigen::Index y = 1; y + 1 < c; ++y) {
    p(y) = interval_probability(cutoffs(y - 1) - delta, cutoffs(y) - delta);
  }
  p(c - 1) = sigmoid(delta - cutoffs(c - 2));
  return p;
}

double expected_label(double delta, const Eigen::VectorXd& cutoffs) {
  const Eigen::VectorXd p = ordinal_pmf(delta, cutoffs);
  double e = 0.0;
  for (Eigen::Index y = 1; y < p.size(); ++y) e += static_cast<double>(y) * p(y);
  return e;
}

namespace detail {

LabelTerm label_term(double delta, const double* cutoffs, int num_cutoffs, int label,
                     double probability_floor) {
  LabelTerm t;
  const double log_floor = std::log(probability_floor);
  double log_p = 0.0;
  // d(-log p)/dz for the upper bound z and d(-log p)/dx for the lower bound x.
  double g_hi = 0.0;
  double g_lo = 0.0;
  if (label == 0) {
    const double z = cutoffs[0] - delta;
    log_p = log_sigmoid(z);
    g_hi = -sigmoid(-z);
    t.hi = 0;
  } else if (label == num_cutoffs) {
    const double x = cutoffs[num_cutoffs - 1] - delta;
    log_p = log_sigmoid(-x);
    g_lo = sigmoid(x);
    t.lo = num_cutoffs - 1;
  } else {
    const double x = cutoffs[label - 1] - delta;
    const double z = cutoffs[label] - delta;
    const double w = -std::expm1(x - z);
    log_p = log_sigmoid(z) + log_sigmoid(-x) + std::log(w);
    g_hi = -sigmoid(-z) / (sigmoid(-x) * w);
    g_lo = sigmoid(x) / (sigmoid(z) * w);
    t.lo = label - 1;
    t.hi = label;
  }
  if (log_p < log_floor) {
    t.neg_log_p = -log_floor;
    t.floored = true;
    return t;
  }
  t.neg_log_p = -log_p;
  t.d_hi = g_hi;
  t.d_lo = g_lo;
  t.d_delta = -(g_hi + g_lo);
  return t;
}

}  // namespace detail

NllResult nll(const FactorParams& params, ObservationSpan observations, double probability_floor) {
  NllResult out;
  if (observations.empty()) {
    out.empty_slice = true;
    return out;
  }
  std::vector<Eigen::VectorXd> cut(params.num_raters());
  for (int k = 0; k < params.num_raters(); ++k) cut[k] = params.cutoffs(k);
  double total = 0.0;
  for (const Observation& obs : observations) {
    const double delta = effective_advantage(params, obs.subject, obs.prompt, obs.rater);
    const Eigen::VectorXd& c = cut[obs.rater];
    if (obs.label < 0 || obs.label > c.size()) throw InputError("label out of range");
    total += detail::label_term(delta, c.data(), static_cast<int>(c.size()), obs.label,
                                probability_floor)
                 .neg_log_p;
  }
  out.value = total;
  return out;
}

// ---------------------------------------------------------------------------
// Gradient

ParamMask ParamMask::all(int raters) {
  return {true, true, std::vector<bool>(raters, true), std::vector<bool>(raters, true)};
}

ParamMask ParamMask::none(int raters) {
  return {false, false, std::vector<bool>(raters, false), std::vector<bool>(raters, false)};
}

ParamMask ParamMask::autorater(int raters) {
  ParamMask m = all(raters);
  if (raters > 0) {
    m.gamma_rows[0] = false;
    m.cutoffs[0] = false;
  }
  return m;
}

ParamMask ParamMask::human(int raters) {
  ParamMask m = none(raters);
  if (raters > 0) {
    m.gamma_rows[0] = true;
    m.cutoffs[0] = true;
  }
  return m;
}

ParamGradient ParamGradient::zeros_like(const FactorParams& params) {
  ParamGradient g;
  g.theta = Eigen::MatrixXd::Zero(params.theta.rows(), params.theta.cols());
  g.a = Eigen::MatrixXd::Zero(params.a.rows(), params.a.cols());
  g.gamma = Eigen::MatrixXd::Zero(params.gamma.rows(), params.gamma.cols());
  g.base_cutoff = Eigen::VectorXd::Zero(params.base_cutoff.size());
  for (const auto& gap : params.gaps) g.gaps.push_back(Eigen::VectorXd::Zero(gap.size()));
  return g;
}

void ParamGradient::set_zero() {
  theta.setZero();
  a.setZero();
  gamma.setZero();
  base_cutoff.setZero();
  for (auto& g : gaps) g.setZero();
}

double ParamGradient::max_abs() const {
  double m = 0.0;
  auto upd = [&](const auto& x) {
    if (x.size() > 0) m = std::max(m, x.cwiseAbs().maxCoeff());
  };
  upd(theta);
  upd(a);
  upd(gamma);
  upd(base_cutoff);
  for (const auto& g : gaps) upd(g);
  return m;
}

double accumulate_nll_gradient(const FactorParams& params, ObservationSpan observations,
                               const ParamMask& mask, ParamGradient& grad,
                               double probability_floor) {
  return detail::accumulate_weighted(params, observations, nullptr, mask, grad, probability_floor);
}

double detail::accumulate_weighted(const FactorParams& params, ObservationSpan observations,
                                   const double* weights, const ParamMask& mask,
                                   ParamGradient& grad, double probability_floor) {
  const int rank = params.rank();
  const int raters = params.num_raters();
  std::vector<Eigen::VectorXd> cut(raters);
  for (int k = 0; k < raters; ++k) cut[k] = params.cutoffs(k);

  double total = 0.0;
  Eigen::VectorXd theta_row(rank);
  for (std::size_t n = 0; n < observations.size(); ++n) {
    const Observation& obs = observations[n];
    const double wt = weights ? weights[n] : 1.0;
    const int j = obs.prompt;
    const int k = obs.rater;
    if (obs.subject.is_pair()) {
      theta_row = params.theta.row(obs.subject.second) - params.theta.row(obs.subject.first);
    } else {
      theta_row = params.theta.row(obs.subject.first);
    }
    double delta = 0.0;
    for (int r = 0; r < rank; ++r) delta += theta_row(r) * params.a(j, r) * params.gamma(k, r);

    const Eigen::VectorXd& c = cut[k];
    const auto t = detail::label_term(delta, c.data(), static_cast<int>(c.size()), obs.label,
                                      probability_floor);
    total += wt * t.neg_log_p;
    if (t.floored) continue;

    const double gd = wt * t.d_delta;
    if (mask.theta) {
      for (int r = 0; r < rank; ++r) {
        const double w = gd * params.a(j, r) * params.gamma(k, r);
        if (obs.subject.is_pair()) {
          grad.theta(obs.subject.second, r) += w;
          grad.theta(obs.subject.first, r) -= w;
        } else {
          grad.theta(obs.subject.first, r) += w;
        }
      }
    }
    if (mask.a) {
      for (int r = 0; r < rank; ++r) grad.a(j, r) += gd * theta_row(r) * params.gamma(k, r);
    }
    if (mask.gamma_row(k)) {
      for (int r = 0; r < rank; ++r) grad.gamma(k, r) += gd * theta_row(r) * params.a(j, r);
    }
    if (mask.cutoff(k)) {
      // beta_m = base + sum_{l < m} gaps_l
      Eigen::VectorXd& gg = grad.gaps[k];
      const double d_lo = wt * t.d_lo;
      const double d_hi = wt * t.d_hi;
      if (t.lo >= 0) {
        grad.base_cutoff(k) += d_lo;
        for (int l = 0; l < t.lo; ++l) gg(l) += d_lo;
      }
      if (t.hi >= 0) {
        grad.base_cutoff(k) += d_hi;
        for (int l = 0; l < t.hi; ++l) gg(l) += d_hi;
      }
    }
  }
  return total;
}

ParamGradient nll_gradient(const FactorParams& params, ObservationSpan observations,
                           const ParamMask& mask, double probability_floor) {
  for (const Observation& obs : observations) {
    validate_observation(obs, params.dims(), params.raters);
  }
  ParamGradient g = ParamGradient::zeros_like(params);
  accumulate_nll_gradient(params, observations, mask, g, probability_floor);
  return g;
}

}  // namespace captensor
