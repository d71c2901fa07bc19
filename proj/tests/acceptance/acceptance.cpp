// Acceptance harness. One PASS/FAIL line per criterion, also appended to
// acceptance_results.txt; exit status 1 if any selected criterion fails.
// Criteria can be selected by number on the command line.

#include "oracles.hpp"

#include "captensor/core_model.hpp"
#include "captensor/fitting.hpp"
#include "captensor/inference.hpp"
#include "captensor/io.hpp"
#include "captensor/prediction.hpp"
#include "captensor/random.hpp"
#include "captensor/synthetic.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

using namespace captensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

FactorParams random_params(const Dims& dims, int rank, const std::vector<RaterSpec>& raters, Rng& rng,
                           double scale) {
  FactorParams p = FactorParams::zeros(dims, rank, raters);
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta.data()[i] = scale * standard_normal(rng);
  for (Eigen::Index i = 0; i < p.a.size(); ++i) p.a.data()[i] = scale * standard_normal(rng);
  for (Eigen::Index i = 0; i < p.gamma.size(); ++i) p.gamma.data()[i] = scale * standard_normal(rng);
  for (int k = 0; k < p.num_raters(); ++k) {
    p.base_cutoff(k) = standard_normal(rng);
    for (Eigen::Index g = 0; g < p.gaps[k].size(); ++g) p.gaps[k](g) = 0.3 + uniform01(rng);
  }
  return p;
}

std::vector<Observation> random_observations(const FactorParams& p, int n, Rng& rng) {
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

double median(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

// ---------------------------------------------------------------------------

Outcome likelihood_correctness() {
  Rng rng = make_rng(101, 0);
  double worst_sum = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const int C = 2 + static_cast<int>(uniform_index(rng, 11));
    Eigen::VectorXd cut(C - 1);
    double b = -4.0 + 8.0 * uniform01(rng);
    for (int m = 0; m + 1 < C; ++m) {
      cut(m) = b;
      b += 0.01 + 2.0 * uniform01(rng);
    }
    const double delta = -30.0 + 60.0 * uniform01(rng);
    worst_sum = std::max(worst_sum, std::abs(ordinal_pmf(delta, cut).sum() - 1.0));
  }
  Eigen::VectorXd zero(1);
  zero << 0.0;
  int binary_mismatch = 0;
  for (int t = 0; t < 10000; ++t) {
    const double delta = -30.0 + 60.0 * uniform01(rng);
    const Eigen::VectorXd p = ordinal_pmf(delta, zero);
    if (p(1) != sigmoid(delta) || p(0) != sigmoid(-delta)) ++binary_mismatch;
  }
  return {worst_sum <= 1e-12 && binary_mismatch == 0,
          "max |sum - 1| " + fmt("%.2e", worst_sum) + ", binary mismatches " + std::to_string(binary_mismatch)};
}

Outcome gradient_fidelity() {
  const std::vector<std::vector<RaterSpec>> designs = {
      {{0, Template::Pointwise, 4}, {1, Template::Pairwise, 3}, {2, Template::Pointwise, 2}},
      {{0, Template::Pairwise, 5}, {1, Template::Pointwise, 6}},
      {{0, Template::Pairwise, 2}, {1, Template::Pairwise, 4}, {2, Template::Pointwise, 3}}};
  Rng rng = make_rng(202, 0);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto& raters = designs[t % designs.size()];
    const Dims dims{3 + t % 3, 4 + t % 4, static_cast<int>(raters.size())};
    const FactorParams p = random_params(dims, 1 + t % 3, raters, rng, 0.8);
    const auto obs = random_observations(p, 60, rng);
    const ParamGradient g = nll_gradient(p, obs, ParamMask::all(dims.raters));
    const auto fd = oracle::central_difference(p, [&](const FactorParams& q) { return oracle::nll(q, obs); }, 1e-5);
    std::vector<double> an;
    for (Eigen::Index i = 0; i < g.theta.size(); ++i) an.push_back(g.theta.data()[i]);
    for (Eigen::Index i = 0; i < g.a.size(); ++i) an.push_back(g.a.data()[i]);
    for (Eigen::Index i = 0; i < g.gamma.size(); ++i) an.push_back(g.gamma.data()[i]);
    for (int k = 0; k < dims.raters; ++k) {
      an.push_back(g.base_cutoff(k));
      for (Eigen::Index l = 0; l < g.gaps[k].size(); ++l) an.push_back(g.gaps[k](l));
    }
    if (an.size() != fd.size()) return {false, "parameter count mismatch"};
    double err = 0.0, scale = 0.0;
    for (std::size_t n = 0; n < fd.size(); ++n) {
      err = std::max(err, std::abs(an[n] - fd[n]));
      scale = std::max(scale, std::abs(fd[n]));
    }
    worst = std::max(worst, err / scale);
  }
  return {worst < 1e-5, "max relative error " + fmt("%.2e", worst) + " over 20 instances"};
}

Outcome bradley_terry_reduction() {
  const int I = 6, J = 3;
  FactorParams truth = FactorParams::zeros({I, J, 1}, 1, {{0, Template::Pairwise, 2}});
  for (int i = 0; i < I; ++i) truth.theta(i, 0) = 0.4 * i - 1.0;
  truth.a.setOnes();
  truth.gamma.setOnes();
  std::vector<DesignEntry> design;
  for (int j = 0; j < J; ++j) {
    for (int a = 0; a < I; ++a) {
      for (int b = 0; b < I; ++b) {
        if (a != b) design.push_back({Subject::pair(a, b), j, 0, 60});
      }
    }
  }
  Dataset d = sample_design(truth, design, 11);
  // mirrored copies, so the fitted intercept is zero and BT applies exactly
  const std::size_t n = d.observations.size();
  for (std::size_t t = 0; t < n; ++t) {
    Observation o = d.observations[t];
    std::swap(o.subject.first, o.subject.second);
    o.label = 1 - o.label;
    d.observations.push_back(o);
  }
  FitConfig config;
  config.adam.epochs = 3000;
  config.adam.batch_size = 1 << 30;
  config.adam.learning_rates = {0.05};
  config.adam.final_lr_fraction = 0.001;
  const Stage1Result fit = fit_baseline(d.observations, d.dims, d.raters, BaselineKind::Constant, config, 0);

  // wins(a, b): records in which a beat b; label 1 means the second model won
  Eigen::MatrixXd wins = Eigen::MatrixXd::Zero(I, I);
  for (const Observation& o : d.observations) {
    const int winner = o.label == 1 ? o.subject.second : o.subject.first;
    const int loser = o.label == 1 ? o.subject.first : o.subject.second;
    wins(winner, loser) += 1.0;
  }
  const auto s = oracle::bradley_terry(wins);
  double worst = 0.0;
  for (int a = 0; a < I; ++a) {
    for (int b = 0; b < I; ++b) {
      if (a == b) continue;
      const double model = ordinal_pmf(effective_advantage(fit.params, Subject::pair(a, b), 0, 0),
                                       fit.params.cutoffs(0))(1);
      worst = std::max(worst, std::abs(model - s[b] / (s[a] + s[b])));
    }
  }
  return {worst <= 1e-4, "max |P_model - P_BT| " + fmt("%.2e", worst)};
}

Outcome stage2_convexity() {
  double nll_gap = 0.0, param_gap = 0.0;
  for (int t = 0; t < 20; ++t) {
    ScenarioSpec spec;
    spec.dims = {5 + t % 3, 20, 3};
    spec.rank = 2 + t % 2;
    spec.raters = {{0, t % 2 ? Template::Pairwise : Template::Pointwise, 3 + t % 3},
                   {1, Template::Pointwise, 5},
                   {2, Template::Pairwise, 3}};
    spec.labels_per_cell = 2;
    spec.human_label_budget = 800;
    spec.human_cell_multiplicity = 20;
    spec.seed = 4000 + t;
    const FactorParams truth = generate_ground_truth(spec);
    const Dataset d = sample_observations(truth, spec);
    const auto human = d.human();
    Rng rng = make_rng(spec.seed, 1);
    auto start = [&] {
      Stage2Start s;
      s.gamma0 = Eigen::VectorXd(spec.rank);
      for (int r = 0; r < spec.rank; ++r) s.gamma0(r) = 2.0 * standard_normal(rng);
      const int C = spec.raters[0].num_categories;
      s.cutoffs = Eigen::VectorXd(C - 1);
      double b = -2.0 * uniform01(rng) - 0.5;
      for (int m = 0; m + 1 < C; ++m) {
        s.cutoffs(m) = b;
        b += 0.2 + 1.5 * uniform01(rng);
      }
      return s;
    };
    const Stage2Result a = fit_stage2(human, truth, {}, start());
    const Stage2Result b = fit_stage2(human, truth, {}, start());
    nll_gap = std::max(nll_gap, std::abs(a.final_nll - b.final_nll));
    param_gap = std::max(param_gap, (a.gamma0 - b.gamma0).cwiseAbs().maxCoeff());
    param_gap = std::max(param_gap, (a.cutoffs() - b.cutoffs()).cwiseAbs().maxCoeff());
  }
  return {nll_gap <= 1e-8 && param_gap <= 1e-6,
          "max NLL gap " + fmt("%.2e", nll_gap) + ", max parameter gap " + fmt("%.2e", param_gap)};
}

Outcome gauge_invariance() {
  Rng rng = make_rng(505, 0);
  double worst = 0.0;
  int rank_changes = 0;
  const std::vector<RaterSpec> raters = {{0, Template::Pointwise, 4}, {1, Template::Pairwise, 3}, {2, Template::Pointwise, 5}};
  for (int t = 0; t < 20; ++t) {
    const Dims dims{4 + t % 4, 6 + t % 5, 3};
    const FactorParams p = random_params(dims, 2 + t % 3, raters, rng, 1.0);
    const auto obs = random_observations(p, 300, rng);
    const CanonicalResult c = canonicalize(p);
    worst = std::max(worst, std::abs(nll(c.params, obs).value - nll(p, obs).value));
    CovarianceEstimate cov;
    cov.sigma_hat = Eigen::MatrixXd::Identity(p.rank(), p.rank());
    cov.m = 100;
    IntervalOptions io;
    io.mode = IntervalMode::None;
    for (int j = 0; j < dims.prompts; ++j) {
      const Leaderboard before = leaderboard(p, cov, Scope::single_prompt(j), io);
      const Leaderboard after = leaderboard(c.params, cov, Scope::single_prompt(j), io);
      for (std::size_t e = 0; e < before.entries.size(); ++e) {
        if (before.entries[e].model != after.entries[e].model || before.entries[e].rank != after.entries[e].rank) {
          ++rank_changes;
        }
      }
    }
  }
  return {worst <= 1e-10 && rank_changes == 0,
          "max |NLL change| " + fmt("%.2e", worst) + ", ranking changes " + std::to_string(rank_changes)};
}

Outcome human_slice_recovery() {
  std::vector<double> r, tau;
  for (int s = 0; s < 10; ++s) {
    ScenarioSpec spec;
    spec.dims = {8, 200, 6};
    spec.rank = 3;
    spec.raters = {{0, Template::Pointwise, 5}, {1, Template::Pointwise, 5}, {2, Template::Pointwise, 7},
                   {3, Template::Pointwise, 3}, {4, Template::Pairwise, 3}, {5, Template::Pairwise, 5}};
    spec.labels_per_cell = 30;
    spec.human_label_budget = 2000;
    spec.seed = 1000 + s;
    FitConfig config;
    config.rank = 3;
    config.adam.epochs = 2500;
    config.adam.batch_size = 1 << 30;
    config.adam.learning_rates = {0.05};
    config.adam.final_lr_fraction = 0.01;
    config.restarts = {0, 1};
    const RecoveryReport rep = recovery_experiment(spec, config);
    r.push_back(rep.pearson);
    tau.push_back(rep.kendall_tau);
  }
  const double mr = median(r), mt = median(tau);
  return {mr >= 0.95 && mt >= 0.8,
          "median Pearson " + fmt("%.4f", mr) + ", median Kendall tau " + fmt("%.4f", mt) + " over 10 seeds"};
}

struct CoverageRun {
  CoverageReport report;
  double seconds = 0.0;
};

// Well-specified scenario: stage 1 sees enough autorater data to be effectively exact.
CoverageRun coverage_run(double level, int replications) {
  ScenarioSpec spec;
  spec.dims = {4, 5, 3};
  spec.rank = 2;
  spec.raters = {{0, Template::Pointwise, 2}, {1, Template::Pointwise, 7}, {2, Template::Pointwise, 7}};
  spec.labels_per_cell = 100000;
  spec.human_label_budget = 5000;
  spec.human_cell_multiplicity = 5000;
  spec.seed = 1;
  CoverageOptions opt;
  opt.levels = {level};
  opt.replications = replications;
  opt.fit.rank = 2;
  opt.fit.adam.epochs = 8000;
  opt.fit.adam.batch_size = 1 << 30;
  opt.fit.adam.learning_rates = {0.05};
  opt.fit.adam.final_lr_fraction = 0.001;
  opt.fit.restarts = {0, 1};
  opt.mc_draws = 20000;
  const auto t0 = std::chrono::steady_clock::now();
  CoverageRun out;
  out.report = coverage_experiment(spec, opt);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

Outcome pointwise_coverage() {
  const CoverageRun run = coverage_run(0.90, 500);
  const CoverageLevel& l = run.report.levels[0];
  const bool ok = run.report.failures == 0 && l.pointwise >= 0.86 && l.pointwise <= 0.94;
  return {ok, "coverage at 0.90 " + fmt("%.4f", l.pointwise) + " (se " + fmt("%.4f", l.pointwise_se) + "), " +
                  std::to_string(run.report.replications) + " replications, " +
                  std::to_string(run.report.failures) + " failed"};
}

Outcome simultaneous_coverage() {
  const CoverageRun run = coverage_run(0.95, 300);
  const CoverageLevel& l = run.report.levels[0];

  const int Q = 20;
  CovarianceEstimate cov;
  cov.sigma_hat = Eigen::MatrixXd::Identity(Q, Q);
  cov.m = 1;
  const double c = simultaneous_constant(Eigen::MatrixXd::Identity(Q, Q), cov, 0.95, 100000, 8);
  const double closed = boost::math::quantile(boost::math::normal_distribution<double>(),
                                              0.5 * (1.0 + std::pow(0.95, 1.0 / Q)));
  const bool ok = run.report.failures == 0 && run.report.queries == Q && l.simultaneous >= 0.91 &&
                  std::abs(c - closed) <= 0.02;
  return {ok, "joint coverage at 0.95 over " + std::to_string(run.report.queries) + " queries " +
                  fmt("%.4f", l.simultaneous) + " (" + std::to_string(run.report.replications) +
                  " replications); c " + fmt("%.4f", c) + " vs closed form " + fmt("%.4f", closed)};
}

Outcome reference_composite_check() {
  Rng rng = make_rng(909, 0);
  double worst = 1.0;
  for (int t = 0; t < 50; ++t) {
    Eigen::MatrixXd rows(6 + t % 5, 2 + t % 4);
    for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = standard_normal(rng);
    const CompositeResult c = reference_composite(rows);
    const Eigen::VectorXd ref = oracle::power_iteration(rows.transpose() * rows);
    worst = std::min(worst, std::abs(c.direction.dot(ref)) / (c.direction.norm() * ref.norm()));
  }
  int not_one = 0;
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd u(3 + t % 3);
    for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = standard_normal(rng);
    Eigen::MatrixXd rows(5, u.size());
    for (int j = 0; j < 5; ++j) rows.row(j) = (0.5 + uniform01(rng)) * u.transpose();
    if (reference_composite(rows).cohesion != 1.0) ++not_one;
  }
  return {worst >= 1.0 - 1e-8 && not_one == 0,
          "min cosine " + fmt("%.12f", worst) + ", rank-1 sets with cohesion != 1: " + std::to_string(not_one)};
}

Outcome permutation_calibration() {
  const int J = 24;
  const std::vector<RaterSpec> raters = {{0, Template::Pointwise, 3}, {1, Template::Pointwise, 4}};
  std::vector<int> groups(J);
  for (int j = 0; j < J; ++j) groups[j] = j < J / 2 ? 0 : 1;

  Rng rng = make_rng(1010, 0);
  FactorParams planted = random_params({4, J, 2}, 3, raters, rng, 1.0);
  for (int j = 1; j < J / 2; ++j) planted.a.row(j) = (0.8 + 0.4 * uniform01(rng)) * planted.a.row(0);
  const double p_planted = cohesion_permutation_test(planted, groups, 1000, 1)[0].p_value;

  std::vector<double> null_p;
  for (int t = 0; t < 200; ++t) {
    const FactorParams p = random_params({4, J, 2}, 3, raters, rng, 1.0);
    null_p.push_back(cohesion_permutation_test(p, groups, 500, 100 + t)[0].p_value);
  }
  const double ks = oracle::ks_uniform(null_p);
  return {p_planted <= 0.01 && ks < 0.12,
          "planted p " + fmt("%.4f", p_planted) + ", KS statistic of 200 null p-values " + fmt("%.4f", ks)};
}

Outcome heldout_prediction() {
  ScenarioSpec spec;
  spec.dims = {8, 100, 4};
  spec.rank = 3;
  spec.raters = {{0, Template::Pairwise, 3}, {1, Template::Pointwise, 5}, {2, Template::Pairwise, 3},
                 {3, Template::Pointwise, 7}};
  spec.labels_per_cell = 30;
  spec.human_label_budget = 8000;
  spec.human_cell_multiplicity = 1000;
  spec.a_mean = 0.5;
  spec.seed = 1;
  FitConfig config;
  config.rank = 3;
  config.adam.epochs = 6000;
  config.adam.batch_size = 1 << 30;
  config.adam.learning_rates = {0.05};
  config.adam.final_lr_fraction = 0.01;
  config.restarts = {0, 1};
  const FactorParams truth = generate_ground_truth(spec);
  const Dataset d = sample_observations(truth, spec);
  // stage 1 never sees human labels, so one fit serves every held-out model
  const MultiRestartResult s1 = multi_restart(d.autorater(), d.dims, d.raters, config);
  std::vector<double> predicted, actual;
  int agree = 0;
  for (int i = 0; i < 8; ++i) {
    const HoldoutReport r = holdout_evaluation(d, i, s1.best.params, config);
    if (!r.actual) return {false, "no withheld labels for model " + std::to_string(i)};
    predicted.push_back(r.predicted);
    actual.push_back(*r.actual);
    agree += (r.predicted > 0.0) == (*r.actual > 0.0);
  }
  const double r = oracle::pearson(predicted, actual);
  return {r >= 0.9 && agree >= 7,
          "Pearson " + fmt("%.4f", r) + ", sign agreement " + std::to_string(agree) + "/8"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / ("captensor_accept_" + std::to_string(::getpid()));
  const std::string exe = CAPTENSOR_CLI;
  ScenarioSpec spec;
  spec.dims = {5, 12, 3};
  spec.rank = 2;
  spec.raters = {{0, Template::Pointwise, 4}, {1, Template::Pointwise, 5}, {2, Template::Pairwise, 3}};
  spec.labels_per_cell = 20;
  spec.human_label_budget = 600;
  spec.human_cell_multiplicity = 20;
  spec.seed = 12;
  FitConfig config;
  config.rank = 2;
  config.adam.epochs = 100;
  config.adam.batch_size = 512;
  config.restarts = {0, 1, 2};
  const std::vector<std::string> outputs = {"data.jsonl", "truth.json", "fit.json", "board.csv",
                                            "category.csv", "compare.csv", "predict.json"};
  auto chain = [&]() -> std::vector<std::string> {
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_json_file(scenario_to_json(spec), dir / "scenario.json");
    write_json_file(fit_config_to_json(config), dir / "config.json");
    const std::string d = dir.string() + "/";
    const std::vector<std::string> commands = {
        "simulate --scenario " + d + "scenario.json --seed 77 --out " + d + "data.jsonl --truth " + d + "truth.json",
        "fit --data " + d + "data.jsonl --config " + d + "config.json --seed 5 --out " + d + "fit.json",
        "leaderboard --checkpoint " + d + "fit.json --simultaneous --seed 3 --out " + d + "board.csv",
        "leaderboard --checkpoint " + d + "fit.json --category 0,2,4 --category-name even --out " + d + "category.csv",
        "compare --checkpoint " + d + "fit.json --first 0 --second 3 --simultaneous --seed 3 --out " + d + "compare.csv",
        "predict --checkpoint " + d + "fit.json --model 2 --out " + d + "predict.json"};
    for (const std::string& c : commands) {
      if (std::system((exe + " " + c + " 2>/dev/null").c_str()) != 0) return {"command failed: " + c};
    }
    std::vector<std::string> bytes;
    for (const std::string& f : outputs) bytes.push_back(slurp(dir / f));
    return bytes;
  };
  const auto first = chain();
  const auto second = chain();
  fs::remove_all(dir);
  if (first.size() != outputs.size()) return {false, first.front()};
  if (second.size() != outputs.size()) return {false, second.front()};
  int differing = 0;
  std::size_t total = 0;
  for (std::size_t n = 0; n < outputs.size(); ++n) {
    total += first[n].size();
    if (first[n].empty() || first[n] != second[n]) ++differing;
  }
  return {differing == 0, std::to_string(outputs.size()) + " outputs (" + std::to_string(total) +
                              " bytes), differing or empty: " + std::to_string(differing)};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "likelihood correctness", 1.0, likelihood_correctness},
      {2, "gradient fidelity", 10.0, gradient_fidelity},
      {3, "Bradley-Terry reduction", 30.0, bradley_terry_reduction},
      {4, "stage-2 convexity", 30.0, stage2_convexity},
      {5, "gauge invariance", 10.0, gauge_invariance},
      {6, "human-slice recovery", 600.0, human_slice_recovery},
      {7, "pointwise CI coverage", 1200.0, pointwise_coverage},
      {8, "simultaneous coverage", 1200.0, simultaneous_coverage},
      {9, "reference composite", 1.0, reference_composite_check},
      {10, "permutation test calibration", 300.0, permutation_calibration},
      {11, "held-out prediction", 900.0, heldout_prediction},
      {12, "end-to-end determinism", 120.0, cli_determinism},
  };
  std::set<int> selected;
  for (int a = 1; a < argc; ++a) selected.insert(std::atoi(argv[a]));

  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = sec < c.limit_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    char line[1024];
    std::snprintf(line, sizeof line, "criterion %2d %-30s %s  %s; %.2f s (limit %.0f s)%s\n", c.id, c.name,
                  pass ? "PASS" : "FAIL", o.detail.c_str(), sec, c.limit_seconds, in_time ? "" : " OVER TIME");
    std::fputs(line, stdout);
    std::fflush(stdout);
    std::ofstream("acceptance_results.txt", std::ios::app) << line;
  }
  return failed == 0 ? 0 : 1;
}
