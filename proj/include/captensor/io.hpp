#pragma once

#include "captensor/fitting.hpp"
#include "captensor/inference.hpp"
#include "captensor/prediction.hpp"
#include "captensor/synthetic.hpp"
#include "captensor/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace captensor {

// How a rater's labels appear in the file. Stored label = dense label + offset,
// or a name from `names` when the file uses strings (e.g. "tie").
struct LabelEncoding {
  int offset = 0;
  std::map<std::string, int> names;
};

struct NameMaps {
  std::vector<std::string> models;
  std::vector<std::string> prompts;
  std::vector<std::string> raters;
};

struct ObservationFile {
  Dataset data;
  std::vector<LabelEncoding> encodings;  // one per rater
  NameMaps names;
  // Remapping directives that were applied, e.g. "rater 0: labels shifted by -1".
  std::vector<std::string> remaps;
};

// JSON lines: a header object {"dims", "raters", optional "names"} followed by one
// record per line {"subject", "prompt", "rater", "label"}. Errors name the line.
ObservationFile ingest(const std::filesystem::path& path);
ObservationFile ingest(std::istream& in, const std::string& source = "<stream>");

// Canonical form: sorted keys, one record per line, labels in the file's own scale.
void export_observations(const ObservationFile& file, std::ostream& out);
void export_observations(const ObservationFile& file, const std::filesystem::path& path);
ObservationFile make_observation_file(const Dataset& data);

struct Checkpoint {
  FactorParams params;
  std::optional<CovarianceEstimate> covariance;
  nlohmann::json provenance = nlohmann::json::object();
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json fit_config_to_json(const FitConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
FitConfig fit_config_from_json(const nlohmann::json& j);

nlohmann::json scenario_to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_from_json(const nlohmann::json& j);

nlohmann::json rater_to_json(const RaterSpec& r);
RaterSpec rater_from_json(const nlohmann::json& j);

nlohmann::json restart_table_to_json(const MultiRestartResult& result);
nlohmann::json coverage_report_to_json(const CoverageReport& report);
nlohmann::json recovery_report_to_json(const RecoveryReport& report);
nlohmann::json holdout_report_to_json(const HoldoutReport& report);
nlohmann::json composite_to_json(const CompositeResult& composite);

nlohmann::json read_json_file(const std::filesystem::path& path);
// Pretty-printed with a trailing newline; doubles keep full precision.
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

// FNV-1a 64 of the canonical JSON dump.
std::uint64_t config_hash(const nlohmann::json& j);

}  // namespace captensor
