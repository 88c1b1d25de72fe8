#pragma once

// Command-line front end: gen-data, train, eval, attribute, baseline.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "urlt/model.hpp"
#include "urlt/training.hpp"

namespace urlt {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Fixed output file names under --out.
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kTrainLogFile = "train_log.tsv";
inline constexpr const char* kMetricsFile = "metrics.tsv";
inline constexpr const char* kCurvesFile = "curves.tsv";
inline constexpr const char* kAttributionsFile = "attributions.tsv";
inline constexpr const char* kConfigEchoFile = "config_echo.json";

struct RunConfig {
  std::string preset = "desk";  // "desk" or "paper"
  ModelConfig model;
  RegimeConfig training;
  std::string train_path;
  std::string validation_path;
  std::string corpus_path;  // finetune-corpus only
  std::string out_dir;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  void validate() const;
};

// Built-in defaults for a preset and regime, as JSON.
nlohmann::json default_config_json(const std::string& preset, Regime regime);

// Resolves layers of overrides (lowest precedence first) on top of the
// preset defaults. Unknown keys and ill-typed values raise ConfigError.
RunConfig resolve_config(const std::vector<nlohmann::json>& layers);

nlohmann::json read_json_file(const std::filesystem::path& path);

// Runs the command line; never throws. Diagnostics go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace urlt
