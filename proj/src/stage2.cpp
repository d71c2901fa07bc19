#include "captensor/errors.hpp"
#include "captensor/fitting.hpp"

#include <cmath>
#include <sstream>

namespace captensor {

namespace {

// Summed human NLL over (gamma0, cutoffs) with the features held fixed.
class OrdinalRegression {
 public:
  OrdinalRegression(Eigen::MatrixXd features, std::vector<int> labels, int num_categories)
      : x_(std::move(features)), y_(std::move(labels)), categories_(num_categories) {}

  int rank() const { return static_cast<int>(x_.cols()); }
  int dim() const { return rank() + categories_ - 1; }
  std::size_t size() const { return y_.size(); }

  static bool ordered(const Eigen::VectorXd& theta, int rank) {
    for (Eigen::Index l = rank; l + 1 < theta.size(); ++l) {
      if (!(theta(l + 1) > theta(l))) return false;
    }
    return true;
  }

  // Sum of J J^T over the score directions of every observation.
  Eigen::MatrixXd design_gram() const {
    const int R = rank();
    const int nc = categories_ - 1;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(dim(), dim());
    Eigen::VectorXd j(dim());
    for (std::size_t n = 0; n < y_.size(); ++n) {
      const int y = y_[n];
      for (int side : {y - 1, y}) {
        if (side < 0 || side >= nc) continue;
        j.setZero();
        j.head(R) = -x_.row(static_cast<Eigen::Index>(n)).transpose();
        j(R + side) = 1.0;
        g.noalias() += j * j.transpose();
      }
    }
    return g;
  }

  // Returns the NLL; fills gradient/Hessian when non-null.
  double evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) const {
    const int R = rank();
    const int P = dim();
    const double* beta = theta.data() + R;
    const int nc = categories_ - 1;
    if (grad) grad->setZero(P);
    if (hess) hess->setZero(P, P);
    double f = 0.0;
    Eigen::VectorXd jz(P), jx(P);
    for (std::size_t n = 0; n < y_.size(); ++n) {
      const double eta = x_.row(static_cast<Eigen::Index>(n)).dot(theta.head(R));
      const int y = y_[n];
      double lz = 0.0, lx = 0.0, lzz = 0.0, lxx = 0.0, lzx = 0.0;
      bool has_z = false, has_x = false;
      if (y == 0) {
        const double z = beta[0] - eta;
        f -= log_sigmoid(z);
        lz = -sigmoid(-z);
        lzz = sigmoid(z) * sigmoid(-z);
        has_z = true;
      } else if (y == nc) {
        const double x = beta[nc - 1] - eta;
        f -= log_sigmoid(-x);
        lx = sigmoid(x);
        lxx = sigmoid(x) * sigmoid(-x);
        has_x = true;
      } else {
        const double x = beta[y - 1] - eta;
        const double z = beta[y] - eta;
        const double w = -std::expm1(x - z);
        f -= log_sigmoid(z) + log_sigmoid(-x) + std::log(w);
        const double az = sigmoid(-z) / (sigmoid(-x) * w);  // f(z) / p
        const double ax = sigmoid(x) / (sigmoid(z) * w);    // f(x) / p
        lz = -az;
        lx = ax;
        lzz = -az * (1.0 - 2.0 * sigmoid(z)) + az * az;
        lxx = ax * (1.0 - 2.0 * sigmoid(x)) + ax * ax;
        lzx = -az * ax;
        has_z = has_x = true;
      }
      if (!grad && !hess) continue;
      const auto xr = x_.row(static_cast<Eigen::Index>(n)).transpose();
      if (has_z) {
        jz.setZero();
        jz.head(R) = -xr;
        jz(R + (y == 0 ? 0 : y)) = 1.0;
      }
      if (has_x) {
        jx.setZero();
        jx.head(R) = -xr;
        jx(R + y - 1) = 1.0;
      }
      if (grad) {
        if (has_z) *grad += lz * jz;
        if (has_x) *grad += lx * jx;
      }
      if (hess) {
        if (has_z) hess->noalias() += lzz * jz * jz.transpose();
        if (has_x) hess->noalias() += lxx * jx * jx.transpose();
        if (has_z && has_x) {
          hess->noalias() += lzx * (jz * jx.transpose() + jx * jz.transpose());
        }
      }
    }
    return f;
  }

 private:
  Eigen::MatrixXd x_;
  std::vector<int> y_;
  int categories_;
};

Eigen::RowVectorXd feature_row(const FactorParams& p, const Observation& o) {
  if (o.subject.is_pair()) {
    return p.theta.row(o.subject.second).cwiseProduct(p.a.row(o.prompt)) -
           p.theta.row(o.subject.first).cwiseProduct(p.a.row(o.prompt));
  }
  return p.theta.row(o.subject.first).cwiseProduct(p.a.row(o.prompt));
}

}  // namespace

Stage2Result fit_stage2(ObservationSpan human_data, const FactorParams& frozen,
                        const Stage2Settings& settings, const std::optional<Stage2Start>& start) {
  if (frozen.num_raters() < 1) throw InputError("parameters have no human rater");
  if (human_data.empty()) {
    throw ContractError("stage 2 needs at least one human observation");
  }
  const RaterSpec& human = frozen.human();
  const int R = frozen.rank();
  const int C = human.num_categories;
  const auto m = static_cast<Eigen::Index>(human_data.size());

  Eigen::MatrixXd features(m, R);
  std::vector<int> labels(static_cast<std::size_t>(m));
  std::vector<long> counts(C, 0);
  for (Eigen::Index n = 0; n < m; ++n) {
    const Observation& o = human_data[static_cast<std::size_t>(n)];
    if (o.rater != 0) throw InputError("stage 2 data must contain only human observations");
    validate_observation(o, frozen.dims(), frozen.raters);
    features.row(n) = feature_row(frozen, o);
    labels[static_cast<std::size_t>(n)] = o.label;
    ++counts[o.label];
  }
  int observed = 0;
  for (long c : counts) observed += c > 0 ? 1 : 0;
  if (observed < 2) {
    throw FitError("only one human label category observed; no cutoff is identifiable");
  }
  for (int c = 0; c < C; ++c) {
    if (counts[c] == 0) {
      throw FitError("human label category " + std::to_string(c) +
                     " never observed; its cutoffs run to the boundary");
    }
  }

  OrdinalRegression model(features, labels, C);
  const int P = model.dim();
  Eigen::VectorXd theta(P);
  if (start) {
    if (start->gamma0.size() != R || start->cutoffs.size() != C - 1) {
      throw InputError("stage 2 start has wrong dimensions");
    }
    theta << start->gamma0, start->cutoffs;
    if (!OrdinalRegression::ordered(theta, R)) throw InputError("start cutoffs must be increasing");
  } else {
    theta.setZero();
    long cum = 0;
    for (int c = 0; c + 1 < C; ++c) {
      cum += counts[c];
      const double q = static_cast<double>(cum) / static_cast<double>(m);
      theta(R + c) = std::log(q / (1.0 - q));
    }
  }

  Stage2Result out;
  out.too_few_observations = m < P;
  Eigen::VectorXd g(P);
  Eigen::MatrixXd H(P, P);
  double f = model.evaluate(theta, &g, &H);
  const double scale = static_cast<double>(m);
  int it = 0;
  for (; it < settings.max_iterations; ++it) {
    if (g.cwiseAbs().maxCoeff() / scale < settings.gradient_tolerance) {
      out.converged = true;
      break;
    }
    // Damped Newton direction; damping only when H is not numerically PD.
    Eigen::VectorXd d;
    double mu = 0.0;
    const double diag = std::max(1e-12, H.diagonal().cwiseAbs().maxCoeff());
    for (int tries = 0; tries < 30; ++tries) {
      Eigen::MatrixXd Hd = H;
      Hd.diagonal().array() += mu;
      Eigen::LLT<Eigen::MatrixXd> llt(Hd);
      if (llt.info() == Eigen::Success) {
        d = -llt.solve(g);
        if (d.allFinite() && d.dot(g) < 0.0) break;
      }
      d.resize(0);
      mu = mu == 0.0 ? 1e-10 * diag : mu * 10.0;
    }
    if (d.size() == 0) break;

    // Newton decrement below rounding level of f: take the full step and stop.
    if (-g.dot(d) <= 1e-13 * std::max(1.0, std::abs(f))) {
      const Eigen::VectorXd next = theta + d;
      if (OrdinalRegression::ordered(next, R)) {
        theta = next;
        f = model.evaluate(theta, &g, &H);
      }
      out.converged = true;
      ++it;
      break;
    }

    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd trial;
    double f_trial = 0.0;
    for (int half = 0; half < 60; ++half, t *= 0.5) {
      trial = theta + t * d;
      if (!OrdinalRegression::ordered(trial, R)) continue;
      f_trial = model.evaluate(trial, nullptr, nullptr);
      if (std::isfinite(f_trial) && f_trial <= f + 1e-4 * t * g.dot(d)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No descent possible at double precision; accept if the gradient is tiny.
      out.converged = g.cwiseAbs().maxCoeff() / scale < 1e-6;
      break;
    }
    theta = trial;
    f = model.evaluate(theta, &g, &H);
    if (theta.cwiseAbs().maxCoeff() > settings.divergence_bound) {
      std::ostringstream msg;
      msg << "stage 2 parameters diverge (|param| > " << settings.divergence_bound
          << "): human labels look separable by the frozen features";
      throw FitError(msg.str());
    }
  }
  out.iterations = it;

  // Information relative to the design's own Gram matrix: collinear features
  // make the Gram singular, separated labels make the ratio collapse.
  const Eigen::MatrixXd G = model.design_gram();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gs(G);
  if (!(gs.eigenvalues()(0) > 1e-12 * gs.eigenvalues()(P - 1))) {
    throw FitError("frozen human features are collinear; gamma0 is not identifiable");
  }
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> rel(H, G);
  if (rel.info() != Eigen::Success || !(rel.eigenvalues()(0) > 1e-8)) {
    throw FitError(
        "human labels are separable by the frozen features: the likelihood has no finite "
        "maximizer");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  Eigen::MatrixXd inv =
      es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  inv = 0.5 * (inv + inv.transpose());
  out.full_inverse_hessian = inv;

  out.gamma0 = theta.head(R);
  out.base_cutoff = theta(R);
  out.gaps.resize(C - 2);
  for (int l = 0; l + 2 < C; ++l) out.gaps(l) = theta(R + l + 1) - theta(R + l);
  out.final_nll = f;
  out.covariance.sigma_hat = scale * inv.topLeftCorner(R, R);
  out.covariance.m = m;
  out.covariance.includes_cutoffs = false;
  out.covariance.reliable = !out.too_few_observations && out.converged;
  return out;
}

FactorParams apply_stage2(const FactorParams& params, const Stage2Result& result) {
  FactorParams p = params;
  p.gamma.row(0) = result.gamma0.transpose();
  p.base_cutoff(0) = result.base_cutoff;
  p.gaps[0] = result.gaps;
  return p;
}

}  // namespace captensor
