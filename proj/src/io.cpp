#include "captensor/io.hpp"

#include "captensor/errors.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace captensor {

using nlohmann::json;

namespace {

std::string at_line(std::size_t line, const std::string& msg) {
  return "line " + std::to_string(line) + ": " + msg;
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw InputError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw InputError("unknown key '" + key + "' in " + where);
  }
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols,
                                 const std::string& name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw InputError("checkpoint field '" + name + "' has the wrong number of rows");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw InputError("checkpoint field '" + name + "' has a ragged row");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

json dims_to_json(const Dims& d) {
  return {{"models", d.models}, {"prompts", d.prompts}, {"raters", d.raters}};
}

Dims dims_from_json(const json& j) {
  reject_unknown(j, {"models", "prompts", "raters"}, "dims");
  Dims d;
  d.models = j.at("models").get<int>();
  d.prompts = j.at("prompts").get<int>();
  d.raters = j.at("raters").get<int>();
  if (d.models < 1 || d.prompts < 1 || d.raters < 1) throw InputError("dims must be positive");
  return d;
}

int resolve_index(const json& v, const std::vector<std::string>& names, const char* what) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == s) return static_cast<int>(i);
    }
    throw InputError(std::string("unknown ") + what + " name '" + s + "'");
  }
  throw InputError(std::string(what) + " must be an integer id or a name");
}

}  // namespace

// ---------------------------------------------------------------------------
// Observation files

json rater_to_json(const RaterSpec& r) {
  return {{"id", r.rater_id}, {"template", to_string(r.templ)}, {"categories", r.num_categories}};
}

RaterSpec rater_from_json(const json& j) {
  RaterSpec r;
  r.rater_id = j.at("id").get<int>();
  r.templ = template_from_string(j.at("template").get<std::string>());
  r.num_categories = j.at("categories").get<int>();
  r.validate();
  return r;
}

ObservationFile ingest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return ingest(in, path.string());
}

ObservationFile ingest(std::istream& in, const std::string& source) {
  ObservationFile out;
  std::string text;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw InputError(source + ": " + at_line(line_no, std::string("malformed JSON (") + e.what() + ")"));
    }
    try {
      if (!have_header) {
        reject_unknown(j, {"dims", "raters", "names"}, "header");
        out.data.dims = dims_from_json(j.at("dims"));
        const json& raters = j.at("raters");
        if (!raters.is_array() || static_cast<int>(raters.size()) != out.data.dims.raters) {
          throw InputError("header lists " + std::to_string(raters.size()) +
                           " raters but dims.raters is " + std::to_string(out.data.dims.raters));
        }
        for (std::size_t k = 0; k < raters.size(); ++k) {
          const json& r = raters[k];
          reject_unknown(r, {"id", "template", "categories", "label_offset", "label_names"},
                         "rater spec");
          RaterSpec spec = rater_from_json(r);
          if (spec.rater_id != static_cast<int>(k)) throw InputError("rater ids must be 0..K in order");
          LabelEncoding enc;
          enc.offset = r.value("label_offset", 0);
          if (r.contains("label_names")) {
            for (const auto& [name, value] : r.at("label_names").items()) {
              const int v = value.get<int>();
              if (v < 0 || v >= spec.num_categories) {
                throw InputError("label name '" + name + "' maps outside the category range");
              }
              enc.names[name] = v;
            }
          }
          if (enc.offset != 0) {
            out.remaps.push_back("rater " + std::to_string(k) + ": labels shifted by " +
                                 std::to_string(-enc.offset));
          }
          for (const auto& [name, v] : enc.names) {
            out.remaps.push_back("rater " + std::to_string(k) + ": '" + name + "' -> " +
                                 std::to_string(v));
          }
          out.data.raters.push_back(spec);
          out.encodings.push_back(enc);
        }
        if (j.contains("names")) {
          const json& n = j.at("names");
          reject_unknown(n, {"models", "prompts", "raters"}, "names");
          auto take = [&](const char* key, int expected, std::vector<std::string>& dst) {
            if (!n.contains(key)) return;
            dst = n.at(key).get<std::vector<std::string>>();
            if (static_cast<int>(dst.size()) != expected) {
              throw InputError(std::string("names.") + key + " does not match dims");
            }
          };
          take("models", out.data.dims.models, out.names.models);
          take("prompts", out.data.dims.prompts, out.names.prompts);
          take("raters", out.data.dims.raters, out.names.raters);
        }
        have_header = true;
        continue;
      }
      reject_unknown(j, {"subject", "prompt", "rater", "label"}, "record");
      Observation o;
      const json& s = j.at("subject");
      if (s.is_array()) {
        if (s.empty() || s.size() > 2) throw InputError("subject must list one or two models");
        o.subject.first = resolve_index(s[0], out.names.models, "model");
        if (s.size() == 2) o.subject.second = resolve_index(s[1], out.names.models, "model");
      } else {
        o.subject.first = resolve_index(s, out.names.models, "model");
      }
      o.prompt = resolve_index(j.at("prompt"), out.names.prompts, "prompt");
      o.rater = resolve_index(j.at("rater"), out.names.raters, "rater");
      if (o.rater < 0 || o.rater >= out.data.dims.raters) {
        throw InputError("rater " + std::to_string(o.rater) + " out of range");
      }
      const LabelEncoding& enc = out.encodings[o.rater];
      const json& lab = j.at("label");
      if (lab.is_string()) {
        const auto it = enc.names.find(lab.get<std::string>());
        if (it == enc.names.end()) throw InputError("unknown label name '" + lab.get<std::string>() + "'");
        o.label = it->second;
      } else if (lab.is_number_integer()) {
        o.label = lab.get<int>() - enc.offset;
      } else {
        throw InputError("label must be an integer or a label name");
      }
      validate_observation(o, out.data.dims, out.data.raters);
      out.data.observations.push_back(o);
    } catch (const json::exception& e) {
      throw InputError(source + ": " + at_line(line_no, e.what()));
    } catch (const InputError& e) {
      throw InputError(source + ": " + at_line(line_no, e.what()));
    }
  }
  if (!have_header) throw InputError(source + ": missing header line");
  return out;
}

ObservationFile make_observation_file(const Dataset& data) {
  ObservationFile f;
  f.data = data;
  f.encodings.resize(data.raters.size());
  return f;
}

void export_observations(const ObservationFile& file, std::ostream& out) {
  const Dataset& d = file.data;
  json header;
  header["dims"] = dims_to_json(d.dims);
  json raters = json::array();
  for (std::size_t k = 0; k < d.raters.size(); ++k) {
    json r = rater_to_json(d.raters[k]);
    if (k < file.encodings.size()) {
      const LabelEncoding& enc = file.encodings[k];
      if (enc.offset != 0) r["label_offset"] = enc.offset;
      if (!enc.names.empty()) r["label_names"] = enc.names;
    }
    raters.push_back(r);
  }
  header["raters"] = raters;
  json names = json::object();
  if (!file.names.models.empty()) names["models"] = file.names.models;
  if (!file.names.prompts.empty()) names["prompts"] = file.names.prompts;
  if (!file.names.raters.empty()) names["raters"] = file.names.raters;
  if (!names.empty()) header["names"] = names;
  out << header.dump() << '\n';
  // Names are written back wherever the header defines them.
  auto id = [](int i, const std::vector<std::string>& names) {
    return names.empty() ? json(i) : json(names[static_cast<std::size_t>(i)]);
  };
  for (const Observation& o : d.observations) {
    json rec;
    rec["subject"] = o.subject.is_pair()
                         ? json::array({id(o.subject.first, file.names.models),
                                        id(o.subject.second, file.names.models)})
                         : id(o.subject.first, file.names.models);
    rec["prompt"] = id(o.prompt, file.names.prompts);
    rec["rater"] = id(o.rater, file.names.raters);
    json label = o.label;
    if (static_cast<std::size_t>(o.rater) < file.encodings.size()) {
      const LabelEncoding& enc = file.encodings[o.rater];
      label = o.label + enc.offset;
      for (const auto& [name, v] : enc.names) {
        if (v == o.label) {
          label = name;
          break;
        }
      }
    }
    rec["label"] = label;
    out << rec.dump() << '\n';
  }
}

void export_observations(const ObservationFile& file, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  export_observations(file, out);
}

// ---------------------------------------------------------------------------
// Checkpoints

json checkpoint_to_json(const Checkpoint& ckpt) {
  const FactorParams& p = ckpt.params;
  json j;
  j["format"] = "captensor-checkpoint";
  j["version"] = 1;
  j["dims"] = dims_to_json(p.dims());
  j["rank"] = p.rank();
  json raters = json::array();
  for (const RaterSpec& r : p.raters) raters.push_back(rater_to_json(r));
  j["raters"] = raters;
  j["theta"] = matrix_to_json(p.theta);
  j["a"] = matrix_to_json(p.a);
  j["gamma"] = matrix_to_json(p.gamma);
  j["base_cutoff"] = vector_to_json(p.base_cutoff);
  json gaps = json::array();
  for (const Eigen::VectorXd& g : p.gaps) gaps.push_back(vector_to_json(g));
  j["gaps"] = gaps;
  j["fine_tuned"] = p.fine_tuned;
  if (ckpt.covariance) {
    const CovarianceEstimate& c = *ckpt.covariance;
    j["covariance"] = {{"sigma_hat", matrix_to_json(c.sigma_hat)},
                       {"m", c.m},
                       {"includes_cutoffs", c.includes_cutoffs},
                       {"reliable", c.reliable}};
  }
  j["provenance"] = ckpt.provenance;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.value("format", std::string()) != "captensor-checkpoint") {
      throw InputError("not a checkpoint document");
    }
    Checkpoint c;
    const Dims dims = dims_from_json(j.at("dims"));
    const int rank = j.at("rank").get<int>();
    std::vector<RaterSpec> raters;
    for (const json& r : j.at("raters")) raters.push_back(rater_from_json(r));
    FactorParams& p = c.params;
    p = FactorParams::zeros(dims, rank, raters);
    p.theta = matrix_from_json(j.at("theta"), dims.models, rank, "theta");
    p.a = matrix_from_json(j.at("a"), dims.prompts, rank, "a");
    p.gamma = matrix_from_json(j.at("gamma"), dims.raters, rank, "gamma");
    p.base_cutoff = vector_from_json(j.at("base_cutoff"));
    const json& gaps = j.at("gaps");
    if (gaps.size() != raters.size()) throw InputError("checkpoint gaps do not match raters");
    for (std::size_t k = 0; k < raters.size(); ++k) p.gaps[k] = vector_from_json(gaps[k]);
    p.fine_tuned = j.at("fine_tuned").get<bool>();
    p.validate();
    if (j.contains("covariance")) {
      const json& cj = j.at("covariance");
      CovarianceEstimate cov;
      cov.sigma_hat = matrix_from_json(cj.at("sigma_hat"), rank, rank, "sigma_hat");
      cov.m = cj.at("m").get<std::int64_t>();
      cov.includes_cutoffs = cj.at("includes_cutoffs").get<bool>();
      cov.reliable = cj.at("reliable").get<bool>();
      cov.validate();
      c.covariance = cov;
    }
    if (j.contains("provenance")) c.provenance = j.at("provenance");
    return c;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_json_file(checkpoint_to_json(ckpt), path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// Configs

json fit_config_to_json(const FitConfig& c) {
  return {
      {"rank", c.rank},
      {"adam",
       {{"learning_rates", c.adam.learning_rates},
        {"beta1", c.adam.beta1},
        {"beta2", c.adam.beta2},
        {"eps", c.adam.eps},
        {"batch_size", c.adam.batch_size},
        {"epochs", c.adam.epochs},
        {"final_lr_fraction", c.adam.final_lr_fraction}}},
      {"projection_eps", c.projection_eps},
      {"restarts", c.restarts},
      {"stage2",
       {{"max_iterations", c.stage2.max_iterations},
        {"gradient_tolerance", c.stage2.gradient_tolerance},
        {"divergence_bound", c.stage2.divergence_bound}}},
      {"stage3",
       {{"learning_rate", c.stage3.learning_rate},
        {"max_epochs", c.stage3.max_epochs},
        {"validation_fraction", c.stage3.validation_fraction},
        {"patience", c.stage3.patience}}},
      {"init_scale", c.init_scale},
      {"baseline_l2", c.baseline_l2},
      {"probability_floor", c.probability_floor},
  };
}

FitConfig fit_config_from_json(const json& j) {
  FitConfig c;
  try {
    reject_unknown(j, {"rank", "adam", "projection_eps", "restarts", "stage2", "stage3", "init_scale",
                       "baseline_l2", "probability_floor"},
                   "config");
    c.rank = j.value("rank", c.rank);
    if (j.contains("adam")) {
      const json& a = j.at("adam");
      reject_unknown(a, {"learning_rates", "beta1", "beta2", "eps", "batch_size", "epochs",
                         "final_lr_fraction"},
                     "config.adam");
      c.adam.learning_rates = a.value("learning_rates", c.adam.learning_rates);
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.eps = a.value("eps", c.adam.eps);
      c.adam.batch_size = a.value("batch_size", c.adam.batch_size);
      c.adam.epochs = a.value("epochs", c.adam.epochs);
      c.adam.final_lr_fraction = a.value("final_lr_fraction", c.adam.final_lr_fraction);
    }
    c.projection_eps = j.value("projection_eps", c.projection_eps);
    c.restarts = j.value("restarts", c.restarts);
    if (j.contains("stage2")) {
      const json& s = j.at("stage2");
      reject_unknown(s, {"max_iterations", "gradient_tolerance", "divergence_bound"}, "config.stage2");
      c.stage2.max_iterations = s.value("max_iterations", c.stage2.max_iterations);
      c.stage2.gradient_tolerance = s.value("gradient_tolerance", c.stage2.gradient_tolerance);
      c.stage2.divergence_bound = s.value("divergence_bound", c.stage2.divergence_bound);
    }
    if (j.contains("stage3")) {
      const json& s = j.at("stage3");
      reject_unknown(s, {"learning_rate", "max_epochs", "validation_fraction", "patience"},
                     "config.stage3");
      c.stage3.learning_rate = s.value("learning_rate", c.stage3.learning_rate);
      c.stage3.max_epochs = s.value("max_epochs", c.stage3.max_epochs);
      c.stage3.validation_fraction = s.value("validation_fraction", c.stage3.validation_fraction);
      c.stage3.patience = s.value("patience", c.stage3.patience);
    }
    c.init_scale = j.value("init_scale", c.init_scale);
    c.baseline_l2 = j.value("baseline_l2", c.baseline_l2);
    c.probability_floor = j.value("probability_floor", c.probability_floor);
  } catch (const json::exception& e) {
    throw InputError(std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

json scenario_to_json(const ScenarioSpec& s) {
  json raters = json::array();
  for (const RaterSpec& r : s.raters) raters.push_back(rater_to_json(r));
  json design = json::array();
  for (const DesignEntry& d : s.design) {
    design.push_back({{"subject", d.subject.is_pair()
                                      ? json::array({d.subject.first, d.subject.second})
                                      : json(d.subject.first)},
                      {"prompt", d.prompt},
                      {"rater", d.rater},
                      {"count", d.count}});
  }
  return {{"dims", dims_to_json(s.dims)},
          {"rank", s.rank},
          {"raters", raters},
          {"labels_per_cell", s.labels_per_cell},
          {"human_label_budget", s.human_label_budget},
          {"human_cell_multiplicity", s.human_cell_multiplicity},
          {"human_prompts", s.human_prompts},
          {"design", design},
          {"theta_scale", s.theta_scale},
          {"a_scale", s.a_scale},
          {"a_mean", s.a_mean},
          {"gamma_scale", s.gamma_scale},
          {"human_gamma_scale", s.human_gamma_scale},
          {"cutoff_spacing", s.cutoff_spacing},
          {"min_gap", s.min_gap},
          {"cutoff_shift", s.cutoff_shift},
          {"seed", s.seed}};
}

ScenarioSpec scenario_from_json(const json& j) {
  ScenarioSpec s;
  try {
    reject_unknown(j, {"dims", "rank", "raters", "labels_per_cell", "human_label_budget",
                       "human_cell_multiplicity", "human_prompts", "design", "theta_scale",
                       "a_scale", "a_mean", "gamma_scale", "human_gamma_scale", "cutoff_spacing",
                       "min_gap", "cutoff_shift", "seed"},
                   "scenario");
    s.dims = dims_from_json(j.at("dims"));
    s.rank = j.value("rank", s.rank);
    for (const json& r : j.at("raters")) s.raters.push_back(rater_from_json(r));
    s.labels_per_cell = j.value("labels_per_cell", s.labels_per_cell);
    s.human_label_budget = j.value("human_label_budget", s.human_label_budget);
    s.human_cell_multiplicity = j.value("human_cell_multiplicity", s.human_cell_multiplicity);
    s.human_prompts = j.value("human_prompts", s.human_prompts);
    if (j.contains("design")) {
      for (const json& d : j.at("design")) {
        DesignEntry e;
        const json& sub = d.at("subject");
        if (sub.is_array()) {
          e.subject.first = sub.at(0).get<int>();
          if (sub.size() > 1) e.subject.second = sub.at(1).get<int>();
        } else {
          e.subject.first = sub.get<int>();
        }
        e.prompt = d.at("prompt").get<int>();
        e.rater = d.at("rater").get<int>();
        e.count = d.value("count", 1);
        s.design.push_back(e);
      }
    }
    s.theta_scale = j.value("theta_scale", s.theta_scale);
    s.a_scale = j.value("a_scale", s.a_scale);
    s.a_mean = j.value("a_mean", s.a_mean);
    s.gamma_scale = j.value("gamma_scale", s.gamma_scale);
    s.human_gamma_scale = j.value("human_gamma_scale", s.human_gamma_scale);
    s.cutoff_spacing = j.value("cutoff_spacing", s.cutoff_spacing);
    s.min_gap = j.value("min_gap", s.min_gap);
    s.cutoff_shift = j.value("cutoff_shift", s.cutoff_shift);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw InputError(std::string("bad scenario: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Reports

json restart_table_to_json(const MultiRestartResult& result) {
  json rows = json::array();
  for (const RestartRecord& r : result.table) {
    json row = {{"seed", r.seed},
                {"learning_rate", r.learning_rate},
                {"diverged", r.diverged}};
    row["final_nll"] = r.diverged ? json(nullptr) : json(r.final_nll);
    if (r.diverged) row["error"] = r.error;
    rows.push_back(row);
  }
  return {{"selected", result.selected}, {"runs", rows}, {"epoch_nll", result.best.epoch_nll}};
}

json coverage_report_to_json(const CoverageReport& report) {
  json levels = json::array();
  for (const CoverageLevel& l : report.levels) {
    levels.push_back({{"level", l.level},
                      {"pointwise", l.pointwise},
                      {"pointwise_se", l.pointwise_se},
                      {"simultaneous", l.simultaneous},
                      {"simultaneous_se", l.simultaneous_se},
                      {"mean_critical_value", l.mean_critical_value}});
  }
  json details = json::array();
  for (const ReplicationRecord& r : report.details) {
    json d = {{"seed", r.seed}, {"failed", r.failed}};
    if (r.failed) {
      d["error"] = r.error;
    } else {
      d["pointwise_hits"] = r.pointwise_hits;
      d["joint_hit"] = r.joint_hit;
      d["critical_values"] = r.critical_values;
    }
    details.push_back(d);
  }
  return {{"replications", report.replications},
          {"failures", report.failures},
          {"queries", report.queries},
          {"levels", levels},
          {"details", details}};
}

json recovery_report_to_json(const RecoveryReport& r) {
  return {{"pearson", r.pearson},
          {"kendall_tau", r.kendall_tau},
          {"points", r.points},
          {"pairwise", r.pairwise},
          {"baseline", r.baseline}};
}

json holdout_report_to_json(const HoldoutReport& r) {
  json j = {{"model", r.model},
            {"metric", r.metric == HoldoutMetric::AverageScore ? "average_score"
                                                               : "win_rate_difference"},
            {"predicted", r.predicted},
            {"standard_error_predicted", r.standard_error_predicted},
            {"withheld_labels", r.withheld_labels}};
  if (r.actual) {
    j["actual"] = *r.actual;
    j["standard_error_actual"] = r.standard_error_actual;
  } else {
    j["actual"] = nullptr;
  }
  return j;
}

json composite_to_json(const CompositeResult& c) {
  return {{"direction", vector_to_json(c.direction)},
          {"cohesion", c.cohesion},
          {"eigenvalues", vector_to_json(c.eigenvalues)},
          {"tied", c.tied}};
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::uint64_t config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace captensor
