#include "captensor/cli.hpp"

#include "captensor/errors.hpp"
#include "captensor/fitting.hpp"
#include "captensor/inference.hpp"
#include "captensor/io.hpp"
#include "captensor/prediction.hpp"
#include "captensor/random.hpp"
#include "captensor/synthetic.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace captensor {

using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> rank;
  double level = 0.95;
  bool simultaneous = false;
  bool no_ci = false;
  int mc_draws = kDefaultMcDraws;
  std::string out;

  std::string data;
  std::string checkpoint;
  std::string scenario;
  std::string truth_out;
  std::string baseline;
  std::vector<int> prompts;
  std::vector<int> category;
  std::string category_name = "category";
  std::vector<int> opponents;
  std::vector<int> groups;
  int model = -1;
  int first = -1;
  int second = -1;
  int permutations = 1000;
  int replications = 500;
  std::vector<double> levels;
  bool oracle_features = false;
};

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string hex64(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json metadata(const std::string& command, std::uint64_t seed, const json& config) {
  return {{"command", command},
          {"seed", seed},
          {"config_hash", hex64(config_hash(config))},
          {"version", kVersion},
          {"config", config}};
}

// Output goes to --out when given, otherwise stdout.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw InputError("cannot write " + path);
    }
  }
  std::ostream& os() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

void write_json(const json& j, const std::string& path) {
  Sink s(path);
  s.os() << j.dump(2) << '\n';
}

FitConfig load_fit_config(const Options& o) {
  FitConfig cfg;
  if (!o.config.empty()) cfg = fit_config_from_json(read_json_file(o.config));
  if (o.rank) cfg.rank = *o.rank;
  if (o.seed) {
    for (std::size_t i = 0; i < cfg.restarts.size(); ++i) cfg.restarts[i] = derive_seed(*o.seed, 0x5EED, i);
  }
  cfg.validate();
  return cfg;
}

ScenarioSpec load_scenario(const Options& o) {
  const std::string& path = !o.scenario.empty() ? o.scenario : o.config;
  if (path.empty()) throw InputError("a scenario file is required (--scenario)");
  ScenarioSpec s = scenario_from_json(read_json_file(path));
  if (o.rank) s.rank = *o.rank;
  if (o.seed) s.seed = *o.seed;
  s.validate();
  return s;
}

IntervalOptions interval_options(const Options& o) {
  IntervalOptions io;
  io.level = o.level;
  io.mode = o.no_ci ? IntervalMode::None
                    : (o.simultaneous ? IntervalMode::Simultaneous : IntervalMode::Pointwise);
  io.mc_draws = o.mc_draws;
  io.seed = o.seed.value_or(0);
  return io;
}

json interval_json(const IntervalOptions& io) {
  return {{"level", io.level}, {"mode", to_string(io.mode)}, {"mc_draws", io.mc_draws}, {"seed", io.seed}};
}

const CovarianceEstimate& require_cov(const Checkpoint& c, const IntervalOptions& io,
                                      const CovarianceEstimate& placeholder) {
  if (c.covariance) return *c.covariance;
  if (io.mode == IntervalMode::None) return placeholder;
  throw ContractError("checkpoint has no covariance estimate (stage 2 was not run)");
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Options& o) {
  const ScenarioSpec spec = load_scenario(o);
  const FactorParams truth = generate_ground_truth(spec);
  const Dataset data = sample_observations(truth, spec);
  Sink s(o.out);
  export_observations(make_observation_file(data), s.os());
  if (!o.truth_out.empty()) {
    Checkpoint c;
    c.params = truth;
    c.provenance = {{"metadata", metadata("simulate", spec.seed, scenario_to_json(spec))},
                    {"ground_truth", true}};
    save_checkpoint(c, o.truth_out);
  }
  return kExitOk;
}

int cmd_fit(const Options& o) {
  const FitConfig cfg = load_fit_config(o);
  const ObservationFile file = ingest(o.data);
  const Dataset& data = file.data;
  data.validate();
  Checkpoint c;
  json prov;
  prov["metadata"] = metadata("fit", o.seed.value_or(0), fit_config_to_json(cfg));
  prov["data"] = o.data;
  prov["label_remaps"] = file.remaps;
  if (!o.baseline.empty()) {
    BaselineKind kind;
    if (o.baseline == "constant") {
      kind = BaselineKind::Constant;
    } else if (o.baseline == "prompt-specific") {
      kind = BaselineKind::PromptSpecific;
    } else {
      throw InputError("unknown baseline '" + o.baseline + "'");
    }
    const Stage1Result r = fit_baseline(data.human(), data.dims, data.raters, kind, cfg,
                                        cfg.restarts.front());
    c.params = r.params;
    prov["stages"] = {"baseline:" + o.baseline};
    prov["epoch_nll"] = r.epoch_nll;
  } else {
    const std::vector<Observation> autorater = data.autorater();
    const MultiRestartResult s1 = multi_restart(autorater, data.dims, data.raters, cfg);
    c.params = s1.best.params;
    prov["stages"] = {"stage1"};
    prov["restarts"] = restart_table_to_json(s1);
    const std::vector<Observation> human = data.human();
    if (!human.empty()) {
      const Stage2Result s2 = fit_stage2(human, c.params, cfg.stage2);
      c.params = apply_stage2(c.params, s2);
      c.covariance = s2.covariance;
      prov["stages"].push_back("stage2");
      prov["stage2"] = {{"converged", s2.converged},
                        {"iterations", s2.iterations},
                        {"final_nll", s2.final_nll},
                        {"too_few_observations", s2.too_few_observations}};
    } else {
      std::cerr << "warning: no human observations; stage 2 skipped\n";
    }
  }
  c.provenance = prov;
  if (o.out.empty()) {
    std::cout << checkpoint_to_json(c).dump(2) << '\n';
  } else {
    save_checkpoint(c, o.out);
  }
  return kExitOk;
}

int cmd_finetune(const Options& o) {
  const FitConfig cfg = load_fit_config(o);
  Checkpoint c = load_checkpoint(o.checkpoint);
  const ObservationFile file = ingest(o.data);
  const std::vector<Observation> human = file.data.human();
  const std::uint64_t seed = o.seed.value_or(0);
  const ValidationSplit split = split_validation(human, cfg.stage3.validation_fraction, seed);
  const FinetuneResult r = fit_stage3_finetune(c.params, split.train, split.validation, cfg, seed);
  c.params = r.params;
  json& prov = c.provenance;
  if (!prov.contains("stages")) prov["stages"] = json::array();
  prov["stages"].push_back("stage3");
  prov["finetune"] = {{"metadata", metadata("finetune", seed, fit_config_to_json(cfg))},
                      {"best_epoch", r.best_epoch},
                      {"validation_nll", r.validation_nll}};
  if (o.out.empty()) {
    std::cout << checkpoint_to_json(c).dump(2) << '\n';
  } else {
    save_checkpoint(c, o.out);
  }
  return kExitOk;
}

int cmd_leaderboard(const Options& o) {
  const Checkpoint c = load_checkpoint(o.checkpoint);
  const IntervalOptions io = interval_options(o);
  std::vector<Scope> scopes;
  for (int j : o.prompts) scopes.push_back(Scope::single_prompt(j));
  if (!o.category.empty()) scopes.push_back(Scope::category(o.category, o.category_name));
  if (scopes.empty()) {
    for (int j = 0; j < c.params.num_prompts(); ++j) scopes.push_back(Scope::single_prompt(j));
  }
  const CovarianceEstimate placeholder;
  const LeaderboardSet set = leaderboards(c.params, require_cov(c, io, placeholder), scopes, io);

  json cfg = interval_json(io);
  cfg["checkpoint"] = o.checkpoint;
  cfg["prompts"] = o.prompts;
  cfg["category"] = o.category;
  Sink s(o.out);
  std::ostream& os = s.os();
  os << "# " << metadata("leaderboard", io.seed, cfg).dump() << '\n';
  if (set.cross_prompt_caveat) {
    os << "# caveat: pairwise human scale; compare values within a prompt only\n";
  }
  os << "scope,model,rank,point,lower,upper,standard_error,critical_value,level,mode,degenerate\n";
  for (const Leaderboard& b : set.boards) {
    const std::string scope = b.scope.kind == Scope::Kind::Prompt
                                  ? "prompt:" + std::to_string(b.scope.prompt)
                                  : "category:" + b.scope.name;
    for (const LeaderboardEntry& e : b.entries) {
      const IntervalEstimate& ci = e.interval;
      os << scope << ',' << e.model << ',' << e.rank << ',' << fmt(ci.point) << ',' << fmt(ci.lower)
         << ',' << fmt(ci.upper) << ',' << fmt(ci.standard_error) << ','
         << fmt(ci.calibration_constant) << ',' << fmt(ci.level) << ',' << to_string(ci.mode) << ','
         << (ci.degenerate ? 1 : 0) << '\n';
    }
  }
  return kExitOk;
}

int cmd_compare(const Options& o) {
  const Checkpoint c = load_checkpoint(o.checkpoint);
  const IntervalOptions io = interval_options(o);
  std::vector<int> prompts = o.prompts;
  if (prompts.empty()) {
    for (int j = 0; j < c.params.num_prompts(); ++j) prompts.push_back(j);
  }
  const CovarianceEstimate placeholder;
  const Comparison cmp =
      compare_models(c.params, require_cov(c, io, placeholder), o.first, o.second, prompts, io);
  json cfg = interval_json(io);
  cfg["checkpoint"] = o.checkpoint;
  cfg["first"] = o.first;
  cfg["second"] = o.second;
  cfg["prompts"] = prompts;
  Sink s(o.out);
  std::ostream& os = s.os();
  os << "# " << metadata("compare", io.seed, cfg).dump() << '\n';
  os << "# second_better=" << fmt(cmp.fraction_second_better)
     << " indistinguishable=" << fmt(cmp.fraction_indistinguishable)
     << " first_better=" << fmt(cmp.fraction_first_better) << '\n';
  os << "prompt,difference,lower,upper,standard_error,critical_value,verdict\n";
  for (const ComparisonRow& r : cmp.rows) {
    os << r.prompt << ',' << fmt(r.interval.point) << ',' << fmt(r.interval.lower) << ','
       << fmt(r.interval.upper) << ',' << fmt(r.interval.standard_error) << ','
       << fmt(r.interval.calibration_constant) << ',' << to_string(r.verdict) << '\n';
  }
  return kExitOk;
}

int cmd_composite(const Options& o) {
  const Checkpoint c = load_checkpoint(o.checkpoint);
  std::vector<int> prompts = !o.category.empty() ? o.category : o.prompts;
  if (prompts.empty()) {
    for (int j = 0; j < c.params.num_prompts(); ++j) prompts.push_back(j);
  }
  const CompositeResult r = reference_composite(c.params, prompts);
  json cfg = {{"checkpoint", o.checkpoint}, {"prompts", prompts}};
  json out = composite_to_json(r);
  out["metadata"] = metadata("composite", 0, cfg);
  write_json(out, o.out);
  return kExitOk;
}

int cmd_permtest(const Options& o) {
  const Checkpoint c = load_checkpoint(o.checkpoint);
  const std::uint64_t seed = o.seed.value_or(0);
  const std::vector<GroupTest> tests =
      cohesion_permutation_test(c.params, o.groups, o.permutations, seed);
  json cfg = {{"checkpoint", o.checkpoint}, {"groups", o.groups}, {"permutations", o.permutations}};
  Sink s(o.out);
  std::ostream& os = s.os();
  os << "# " << metadata("permtest", seed, cfg).dump() << '\n';
  os << "group,size,cohesion,p_value,skipped\n";
  for (const GroupTest& t : tests) {
    os << t.group << ',' << t.size << ',' << fmt(t.cohesion) << ',' << fmt(t.p_value) << ','
       << (t.skipped ? 1 : 0) << '\n';
  }
  return kExitOk;
}

int cmd_predict(const Options& o) {
  const Checkpoint c = load_checkpoint(o.checkpoint);
  if (o.model < 0 || o.model >= c.params.num_models()) throw InputError("--model out of range");
  std::vector<int> prompts = o.prompts;
  std::vector<int> opponents = o.opponents;
  const bool pairwise = c.params.human().templ == Template::Pairwise;
  if (!pairwise && !opponents.empty()) {
    throw ContractError("--opponents needs a pairwise human rater");
  }
  if (prompts.empty()) {
    for (int j = 0; j < c.params.num_prompts(); ++j) {
      if (!pairwise) {
        prompts.push_back(j);
        continue;
      }
      if (!opponents.empty()) break;
      for (int i = 0; i < c.params.num_models(); ++i) {
        if (i == o.model) continue;
        prompts.push_back(j);
      }
    }
  }
  if (pairwise && opponents.empty()) {
    for (std::size_t n = 0; n < prompts.size(); ++n) {
      opponents.push_back(static_cast<int>(n % (c.params.num_models() - 1)));
      if (opponents.back() >= o.model) ++opponents.back();
    }
  }
  const CovarianceEstimate* cov = c.covariance ? &*c.covariance : nullptr;
  const MetricEstimate est =
      pairwise ? predict_win_rate_difference(c.params, cov, o.model, prompts, opponents)
               : predict_average_score(c.params, cov, o.model, prompts);
  json cfg = {{"checkpoint", o.checkpoint}, {"model", o.model}, {"prompts", prompts}};
  if (pairwise) cfg["opponents"] = opponents;
  json out = {{"model", o.model},
              {"metric", pairwise ? "win_rate_difference" : "average_score"},
              {"value", est.value},
              {"standard_error", est.standard_error ? json(*est.standard_error) : json(nullptr)},
              {"metadata", metadata("predict", 0, cfg)}};
  write_json(out, o.out);
  return kExitOk;
}

int cmd_holdout(const Options& o) {
  const FitConfig cfg = load_fit_config(o);
  const ObservationFile file = ingest(o.data);
  const HoldoutReport r = holdout_evaluation(file.data, o.model, cfg);
  json j = holdout_report_to_json(r);
  json meta_cfg = fit_config_to_json(cfg);
  meta_cfg["data"] = o.data;
  j["metadata"] = metadata("holdout", o.seed.value_or(0), meta_cfg);
  write_json(j, o.out);
  return kExitOk;
}

int cmd_coverage(const Options& o) {
  const ScenarioSpec spec = load_scenario(o);
  CoverageOptions co;
  co.levels = o.levels.empty() ? std::vector<double>{o.level} : o.levels;
  co.replications = o.replications;
  co.mc_draws = o.mc_draws;
  co.oracle_features = o.oracle_features;
  co.seed = o.seed.value_or(spec.seed);
  Options fo = o;
  fo.config.clear();
  co.fit = load_fit_config(fo);
  const CoverageReport r = coverage_experiment(spec, co);
  json j = coverage_report_to_json(r);
  json cfg = {{"scenario", scenario_to_json(spec)},
              {"fit", fit_config_to_json(co.fit)},
              {"levels", co.levels},
              {"replications", co.replications},
              {"mc_draws", co.mc_draws},
              {"oracle_features", co.oracle_features}};
  j["metadata"] = metadata("coverage", co.seed, cfg);
  write_json(j, o.out);
  return kExitOk;
}

int cmd_recover(const Options& o) {
  const ScenarioSpec spec = load_scenario(o);
  Options fo = o;
  fo.config.clear();
  const FitConfig cfg = load_fit_config(fo);
  const RecoveryReport r = recovery_experiment(spec, cfg);
  json j = recovery_report_to_json(r);
  j["metadata"] = metadata("recover", spec.seed,
                           {{"scenario", scenario_to_json(spec)}, {"fit", fit_config_to_json(cfg)}});
  write_json(j, o.out);
  return kExitOk;
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "JSON config file");
  sub->add_option("--seed", o.seed, "Root seed");
  sub->add_option("--rank", o.rank, "CP rank override")->check(CLI::PositiveNumber);
  sub->add_option("--out", o.out, "Output file (default stdout)");
}

void add_intervals(CLI::App* sub, Options& o) {
  sub->add_option("--level", o.level, "Confidence level")->check(CLI::Range(0.0, 1.0));
  sub->add_flag("--simultaneous", o.simultaneous, "Simultaneous intervals over all queries");
  sub->add_flag("--no-ci", o.no_ci, "Point estimates only");
  sub->add_option("--mc-draws", o.mc_draws, "Monte Carlo draws for the simultaneous constant")
      ->check(CLI::Range(1000, 100000000));
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Low-rank capability tensor: fitting, leaderboards and prediction"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;

  auto* simulate = app.add_subcommand("simulate", "Sample a synthetic dataset from a scenario");
  add_common(simulate, o);
  simulate->add_option("--scenario", o.scenario, "Scenario JSON");
  simulate->add_option("--truth", o.truth_out, "Write the generating parameters here");

  auto* fit = app.add_subcommand("fit", "Stage 1 on autorater data, stage 2 on human data");
  add_common(fit, o);
  fit->add_option("--data", o.data, "Observation file")->required();
  fit->add_option("--baseline", o.baseline, "Fit a human-only baseline: constant | prompt-specific");

  auto* finetune = app.add_subcommand("finetune", "Fine-tune all parameters on human data");
  add_common(finetune, o);
  finetune->add_option("--data", o.data, "Observation file")->required();
  finetune->add_option("--checkpoint", o.checkpoint, "Checkpoint to start from")->required();

  auto* lb = app.add_subcommand("leaderboard", "Per-prompt or per-category leaderboards");
  add_common(lb, o);
  add_intervals(lb, o);
  lb->add_option("--checkpoint", o.checkpoint, "Fitted checkpoint")->required();
  lb->add_option("--prompt", o.prompts, "Prompt scope (repeatable)")->delimiter(',');
  lb->add_option("--category", o.category, "Prompts forming a category scope")->delimiter(',');
  lb->add_option("--category-name", o.category_name, "Label of the category scope");

  auto* cmp = app.add_subcommand("compare", "Per-prompt comparison of two models");
  add_common(cmp, o);
  add_intervals(cmp, o);
  cmp->add_option("--checkpoint", o.checkpoint, "Fitted checkpoint")->required();
  cmp->add_option("--first", o.first, "First model")->required();
  cmp->add_option("--second", o.second, "Second model")->required();
  cmp->add_option("--prompts", o.prompts, "Prompts (default all)")->delimiter(',');

  auto* comp = app.add_subcommand("composite", "Reference composite of a prompt set");
  add_common(comp, o);
  comp->add_option("--checkpoint", o.checkpoint, "Fitted checkpoint")->required();
  comp->add_option("--prompts", o.prompts, "Prompts (default all)")->delimiter(',');

  auto* perm = app.add_subcommand("permtest", "Cohesion permutation test of prompt groups");
  add_common(perm, o);
  perm->add_option("--checkpoint", o.checkpoint, "Fitted checkpoint")->required();
  perm->add_option("--groups", o.groups, "Group of every prompt, -1 to exclude")
      ->delimiter(',')
      ->required();
  perm->add_option("--permutations", o.permutations, "Number of permutations")
      ->check(CLI::Range(100, 100000000));

  auto* pred = app.add_subcommand("predict", "Predict a model's human metric");
  add_common(pred, o);
  pred->add_option("--checkpoint", o.checkpoint, "Fitted checkpoint")->required();
  pred->add_option("--model", o.model, "Model")->required();
  pred->add_option("--prompts", o.prompts, "Prompts (default all)")->delimiter(',');
  pred->add_option("--opponents", o.opponents, "Opponent per prompt entry (pairwise)")->delimiter(',');

  auto* hold = app.add_subcommand("holdout", "Leave-one-out prediction of a model's human metric");
  add_common(hold, o);
  hold->add_option("--data", o.data, "Observation file")->required();
  hold->add_option("--model", o.model, "Held-out model")->required();

  auto* cov = app.add_subcommand("coverage", "Interval coverage simulation");
  add_common(cov, o);
  cov->add_option("--scenario", o.scenario, "Scenario JSON");
  cov->add_option("--level", o.levels, "Confidence level (repeatable)")->delimiter(',');
  cov->add_option("--replications", o.replications, "Replications")->check(CLI::Range(100, 1000000));
  cov->add_option("--mc-draws", o.mc_draws, "Monte Carlo draws for c")->check(CLI::Range(1000, 100000000));
  cov->add_flag("--oracle-features", o.oracle_features, "Freeze the true theta and A");

  auto* rec = app.add_subcommand("recover", "Human-slice recovery experiment");
  add_common(rec, o);
  rec->add_option("--scenario", o.scenario, "Scenario JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*simulate) return cmd_simulate(o);
    if (*fit) return cmd_fit(o);
    if (*finetune) return cmd_finetune(o);
    if (*lb) return cmd_leaderboard(o);
    if (*cmp) return cmd_compare(o);
    if (*comp) return cmd_composite(o);
    if (*perm) return cmd_permtest(o);
    if (*pred) return cmd_predict(o);
    if (*hold) return cmd_holdout(o);
    if (*cov) return cmd_coverage(o);
    if (*rec) return cmd_recover(o);
  } catch (const ContractError& e) {
    std::cerr << "contract error: " << e.what() << '\n';
    return kExitContract;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const FitError& e) {
    std::cerr << "fit error: " << e.what() << '\n';
    return kExitFit;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitUsage;
}

}  // namespace captensor
