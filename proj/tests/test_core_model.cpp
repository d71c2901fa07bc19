#include "oracles.hpp"

#include "captensor/core_model.hpp"
#include "captensor/errors.hpp"
#include "captensor/random.hpp"

#include <doctest.h>

#include <cmath>

using namespace captensor;

namespace {

FactorParams random_params(const Dims& dims, int rank, const std::vector<RaterSpec>& raters,
                           std::uint64_t seed, double scale = 1.0) {
  FactorParams p = FactorParams::zeros(dims, rank, raters);
  Rng rng = make_rng(seed, 1);
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta.data()[i] = scale * standard_normal(rng);
  for (Eigen::Index i = 0; i < p.a.size(); ++i) p.a.data()[i] = scale * standard_normal(rng);
  for (Eigen::Index i = 0; i < p.gamma.size(); ++i) p.gamma.data()[i] = scale * standard_normal(rng);
  for (int k = 0; k < p.num_raters(); ++k) {
    p.base_cutoff(k) = standard_normal(rng);
    for (Eigen::Index g = 0; g < p.gaps[k].size(); ++g) p.gaps[k](g) = 0.3 + uniform01(rng);
  }
  return p;
}

std::vector<Observation> random_observations(const FactorParams& p, int n, std::uint64_t seed) {
  Rng rng = make_rng(seed, 2);
  std::vector<Observation> out;
  for (int t = 0; t < n; ++t) {
    Observation o;
    o.rater = static_cast<int>(uniform_index(rng, p.num_raters()));
    o.prompt = static_cast<int>(uniform_index(rng, p.num_prompts()));
    const int i0 = static_cast<int>(uniform_index(rng, p.num_models()));
    if (p.raters[o.rater].templ == Template::Pairwise) {
      int i1 = static_cast<int>(uniform_index(rng, p.num_models() - 1));
      if (i1 >= i0) ++i1;
      o.subject = Subject::pair(i0, i1);
    } else {
      o.subject = Subject::single(i0);
    }
    o.label = static_cast<int>(uniform_index(rng, p.raters[o.rater].num_categories));
    out.push_back(o);
  }
  return out;
}

const std::vector<RaterSpec> kMixed = {
    {0, Template::Pointwise, 4}, {1, Template::Pairwise, 3}, {2, Template::Pointwise, 2}};

}  // namespace

TEST_CASE("capability examples") {
  FactorParams p = FactorParams::zeros({1, 1, 1}, 1, {{0, Template::Pointwise, 2}});
  p.theta.setOnes();
  p.a.setOnes();
  p.gamma.setOnes();
  CHECK(capability(p, 0, 0, 0) == 1.0);

  FactorParams q = FactorParams::zeros({2, 1, 1}, 2, {{0, Template::Pointwise, 2}});
  q.theta.row(0) << 1, 2;
  q.a.row(0) << 3, 4;
  q.gamma.row(0) << 5, 6;
  CHECK(capability(q, 0, 0, 0) == 63.0);
  CHECK(capability(q, 1, 0, 0) == 0.0);
  CHECK(effective_advantage(q, Subject::single(0), 0, 0) == 63.0);
  CHECK_THROWS_AS(capability(q, 2, 0, 0), InputError);
  CHECK_THROWS_AS(capability(q, 0, 1, 0), InputError);
  CHECK_THROWS_AS(capability(q, 0, 0, -1), InputError);
}

TEST_CASE("capability is trilinear and matches the loop oracle") {
  FactorParams p = random_params({5, 6, 3}, 3, kMixed, 11);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 6; ++j) {
      for (int k = 0; k < 3; ++k) CHECK(capability(p, i, j, k) == doctest::Approx(oracle::psi(p, i, j, k)).epsilon(1e-14));
    }
  }
  FactorParams s = p;
  s.theta.row(2) *= 4.0;
  CHECK(capability(s, 2, 1, 0) == 4.0 * capability(p, 2, 1, 0));
}

TEST_CASE("effective advantage for pairs") {
  FactorParams p = FactorParams::zeros({3, 1, 2}, 1, {{0, Template::Pointwise, 2}, {1, Template::Pairwise, 2}});
  p.theta(0, 0) = 0.5;
  p.theta(1, 0) = 2.0;
  p.theta(2, 0) = 2.0;
  p.a.setOnes();
  p.gamma.setOnes();
  CHECK(effective_advantage(p, Subject::pair(0, 1), 0, 1) == 1.5);
  CHECK(effective_advantage(p, Subject::pair(1, 2), 0, 1) == 0.0);
  CHECK_THROWS_AS(effective_advantage(p, Subject::pair(0, 1), 0, 0), InputError);
  CHECK_THROWS_AS(effective_advantage(p, Subject::single(0), 0, 1), InputError);
}

TEST_CASE("cutoffs from gaps") {
  CHECK(cutoffs_from_gaps(0.0, Eigen::VectorXd(0)).size() == 1);
  Eigen::VectorXd g(2);
  g << 1, 1;
  const Eigen::VectorXd c = cutoffs_from_gaps(0.0, g);
  CHECK(c(0) == 0.0);
  CHECK(c(1) == 1.0);
  CHECK(c(2) == 2.0);
  g << 0.25, 0.75;
  const Eigen::VectorXd d = cutoffs_from_gaps(-0.5, g);
  CHECK(d(0) == -0.5);
  CHECK(d(1) == -0.25);
  CHECK(d(2) == 0.5);
  g << 0.25, 0.0;
  CHECK_THROWS_AS(cutoffs_from_gaps(0.0, g), InputError);
  g << -1.0, 1.0;
  CHECK_THROWS_AS(cutoffs_from_gaps(0.0, g), InputError);
}

TEST_CASE("ordinal pmf examples") {
  Eigen::VectorXd c1(1);
  c1 << 0.0;
  const Eigen::VectorXd p = ordinal_pmf(0.0, c1);
  CHECK(p(0) == 0.5);
  CHECK(p(1) == 0.5);

  Eigen::VectorXd c2(2);
  c2 << 0.0, 1.0;
  const Eigen::VectorXd q = ordinal_pmf(0.0, c2);
  CHECK(q(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(q(1) == doctest::Approx(0.2310586).epsilon(1e-7));
  CHECK(q(2) == doctest::Approx(0.2689414).epsilon(1e-7));

  Eigen::VectorXd bad(2);
  bad << 1.0, 1.0;
  CHECK_THROWS_AS(ordinal_pmf(0.0, bad), InputError);
  bad << 1.0, 0.0;
  CHECK_THROWS_AS(ordinal_pmf(0.0, bad), InputError);
}

TEST_CASE("ordinal pmf matches the definition and is symmetric") {
  Rng rng = make_rng(5, 0);
  for (int t = 0; t < 2000; ++t) {
    const int C = 2 + static_cast<int>(uniform_index(rng, 11));
    std::vector<double> cut;
    double b = -3.0 + 6.0 * uniform01(rng);
    for (int m = 0; m + 1 < C; ++m) {
      cut.push_back(b);
      b += 0.05 + 2.0 * uniform01(rng);
    }
    const double delta = -30.0 + 60.0 * uniform01(rng);
    const Eigen::VectorXd c = Eigen::Map<Eigen::VectorXd>(cut.data(), static_cast<Eigen::Index>(cut.size()));
    const Eigen::VectorXd p = ordinal_pmf(delta, c);
    const auto ref = oracle::pmf(delta, cut);
    double sum = 0.0;
    for (int y = 0; y < C; ++y) {
      CHECK(p(y) >= 0.0);
      CHECK(std::abs(p(y) - static_cast<double>(ref[y])) <= 1e-15 + 1e-12 * static_cast<double>(ref[y]));
      sum += p(y);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  // cutoffs symmetric about zero
  Eigen::VectorXd c(3);
  c << -1.3, 0.0, 1.3;
  for (double d : {0.1, 0.7, 2.5, 11.0}) {
    const Eigen::VectorXd a = ordinal_pmf(d, c);
    const Eigen::VectorXd b = ordinal_pmf(-d, c);
    for (int y = 0; y < 4; ++y) CHECK(a(y) == doctest::Approx(b(3 - y)).epsilon(1e-13));
  }
}

TEST_CASE("binary reduction and cdf monotonicity") {
  Eigen::VectorXd c(1);
  c << 0.0;
  for (double d = -30.0; d <= 30.0; d += 0.37) {
    CHECK(ordinal_pmf(d, c)(1) == sigmoid(d));
  }
  Eigen::VectorXd c4(3);
  c4 << -1.0, 0.2, 0.9;
  for (int y = 0; y < 3; ++y) {
    double prev = 2.0;
    for (double d = -20.0; d <= 20.0; d += 0.25) {
      const Eigen::VectorXd p = ordinal_pmf(d, c4);
      double cdf = 0.0;
      for (int z = 0; z <= y; ++z) cdf += p(z);
      CHECK(cdf < prev);
      prev = cdf;
    }
  }
}

TEST_CASE("expected label") {
  Eigen::VectorXd c1(1);
  c1 << 0.0;
  CHECK(expected_label(0.0, c1) == 0.5);
  Eigen::VectorXd c2(2);
  c2 << 0.0, 1.0;
  CHECK(std::abs(expected_label(100.0, c2) - 2.0) < 1e-10);
  CHECK(expected_label(0.0, c2) == doctest::Approx(0.7689414).epsilon(1e-7));
}

TEST_CASE("nll examples and oracle") {
  const std::vector<RaterSpec> bin = {{0, Template::Pointwise, 2}};
  FactorParams p = FactorParams::zeros({1, 1, 1}, 1, bin);
  std::vector<Observation> one = {{Subject::single(0), 0, 0, 1}};
  CHECK(nll(p, one).value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  std::vector<Observation> two = {one[0], one[0]};
  CHECK(nll(p, two).value == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-15));
  const NllResult empty = nll(p, {});
  CHECK(empty.value == 0.0);
  CHECK(empty.empty_slice);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FactorParams q = random_params({4, 5, 3}, 2, kMixed, seed);
    const auto obs = random_observations(q, 60, seed);
    CHECK(nll(q, obs).value == doctest::Approx(oracle::nll(q, obs)).epsilon(1e-12));
  }
}

TEST_CASE("nll floor keeps extreme cases finite") {
  const std::vector<RaterSpec> bin = {{0, Template::Pointwise, 2}};
  FactorParams p = FactorParams::zeros({1, 1, 1}, 1, bin);
  p.theta.setConstant(1e3);
  p.a.setOnes();
  p.gamma.setOnes();
  std::vector<Observation> obs = {{Subject::single(0), 0, 0, 0}};
  const double v = nll(p, obs).value;
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(-std::log(1e-12)));
  const ParamGradient g = nll_gradient(p, obs, ParamMask::all(1));
  CHECK(g.max_abs() == 0.0);
}

TEST_CASE("analytic gradient matches central differences") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const FactorParams p = random_params({3, 4, 3}, 2, kMixed, 100 + seed, 0.8);
    const auto obs = random_observations(p, 50, seed);
    const ParamGradient g = nll_gradient(p, obs, ParamMask::all(3));
    const auto fd = oracle::central_difference(p, [&](const FactorParams& q) { return oracle::nll(q, obs); }, 1e-5);
    std::vector<double> an;
    for (Eigen::Index i = 0; i < g.theta.size(); ++i) an.push_back(g.theta.data()[i]);
    for (Eigen::Index i = 0; i < g.a.size(); ++i) an.push_back(g.a.data()[i]);
    for (Eigen::Index i = 0; i < g.gamma.size(); ++i) an.push_back(g.gamma.data()[i]);
    for (int k = 0; k < 3; ++k) {
      an.push_back(g.base_cutoff(k));
      for (Eigen::Index l = 0; l < g.gaps[k].size(); ++l) an.push_back(g.gaps[k](l));
    }
    REQUIRE(an.size() == fd.size());
    double worst = 0.0, scale = 0.0;
    for (std::size_t n = 0; n < fd.size(); ++n) {
      worst = std::max(worst, std::abs(an[n] - fd[n]));
      scale = std::max(scale, std::abs(fd[n]));
    }
    CHECK(worst / scale < 1e-5);
  }
}

TEST_CASE("gradient masking and stationary point") {
  const FactorParams p = random_params({3, 4, 3}, 2, kMixed, 7);
  const auto obs = random_observations(p, 40, 7);
  const ParamGradient g = nll_gradient(p, obs, ParamMask::autorater(3));
  CHECK(g.gamma.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.base_cutoff(0) == 0.0);
  CHECK(g.gaps[0].cwiseAbs().maxCoeff() == 0.0);
  const ParamGradient h = nll_gradient(p, obs, ParamMask::human(3));
  CHECK(h.theta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(h.a.cwiseAbs().maxCoeff() == 0.0);
  CHECK(h.gamma.row(1).cwiseAbs().maxCoeff() == 0.0);

  // middle category of symmetric cutoffs at delta = 0 is the mode: d/d delta = 0
  const std::vector<RaterSpec> three = {{0, Template::Pointwise, 3}};
  FactorParams q = FactorParams::zeros({1, 1, 1}, 1, three);
  Eigen::VectorXd c(2);
  c << -1.0, 1.0;
  q.set_cutoffs(0, c);
  q.a.setOnes();
  q.gamma.setOnes();
  std::vector<Observation> mid = {{Subject::single(0), 0, 0, 1}};
  const ParamGradient m = nll_gradient(q, mid, ParamMask::all(1));
  CHECK(std::abs(m.theta(0, 0)) < 1e-15);
}

TEST_CASE("observation and parameter validation") {
  Dataset d;
  d.dims = {3, 2, 2};
  d.raters = {{0, Template::Pointwise, 3}, {1, Template::Pairwise, 2}};
  d.observations = {{Subject::single(0), 1, 0, 2}, {Subject::pair(0, 2), 0, 1, 1}};
  CHECK_NOTHROW(d.validate());
  CHECK(d.human().size() == 1);
  CHECK(d.autorater().size() == 1);
  d.observations.push_back({Subject::single(0), 0, 0, 3});
  CHECK_THROWS_AS(d.validate(), InputError);
  d.observations.back() = {Subject::pair(1, 1), 0, 1, 0};
  CHECK_THROWS_AS(d.validate(), InputError);
  d.observations.back() = {Subject::single(1), 0, 1, 0};
  CHECK_THROWS_AS(d.validate(), InputError);
  d.observations.back() = {Subject::single(3), 0, 0, 0};
  CHECK_THROWS_AS(d.validate(), InputError);

  CHECK_THROWS_AS((RaterSpec{0, Template::Pointwise, 1}.validate()), InputError);

  FactorParams p = FactorParams::zeros({3, 2, 2}, 2, d.raters);
  CHECK_NOTHROW(p.validate());
  Eigen::VectorXd c(2);
  c << -0.3, 0.4;
  p.set_cutoffs(0, c);
  CHECK(p.cutoffs(0)(1) == doctest::Approx(0.4).epsilon(1e-15));
  c << 0.4, -0.3;
  CHECK_THROWS_AS(p.set_cutoffs(0, c), InputError);
  p.gaps[0](0) = -1.0;
  CHECK_THROWS(p.validate());
}
