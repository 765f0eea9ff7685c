#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "capgnn/train.hpp"

namespace capgnn::cli {

inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitIo = 4,
};

/// Everything `train` needs; fully determines a sweep.
struct RunConfig {
  train::TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::filesystem::path dataset_dir;
  std::filesystem::path out_dir = "runs";
  bool row_normalize_features = false;
  bool resplit = false;        // draw a fresh stratified 60/20/20 split per seed
  bool record_timing = false;  // fill wall_ms in metrics CSVs (breaks byte-identity)
};

struct KeyDoc {
  const char* key;
  const char* help;
};

/// Every recognized configuration key, in the order they are rendered.
const std::vector<KeyDoc>& config_keys();

/// Applies one `key = value` setting; throws ConfigError("key: ...") on bad input.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses the flat `key = value` format. '#' starts a comment; blank lines are ignored.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& content,
                                                                   const std::string& source);

/// Reads a config file (or the "config" object of a manifest.json), then
/// applies overrides in order and validates the result.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

/// Checks cross-field constraints on top of train::validate.
void validate(const RunConfig& cfg);

/// Resolved key/value pairs with every default materialized.
std::vector<std::pair<std::string, std::string>> resolved_settings(const RunConfig& cfg);
std::string render_config(const RunConfig& cfg);

/// "1,2,5..8" → {1,2,5,6,7,8}.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);
std::vector<double> parse_real_list(const std::string& text);
std::vector<std::size_t> parse_count_list(const std::string& text);

/// FNV-1a over the dataset files in a fixed order.
std::string dataset_fingerprint(const std::filesystem::path& dir);

/// CAPGNN_THREADS, default 1.
std::size_t thread_budget();

/// Full command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace capgnn::cli
