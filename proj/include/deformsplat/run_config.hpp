#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "deformsplat/optimization.hpp"

namespace deformsplat {

/// Everything a `train` run needs. Camera overrides of 0 keep the dataset's
/// intrinsics.
struct RunConfig {
  std::string dataset;
  std::string output = "run";
  std::uint64_t seed = 0;
  int threads = 0;
  FitConfig fit;
  double camera_fx = 0.0;
  double camera_fy = 0.0;
  double camera_cx = 0.0;
  double camera_cy = 0.0;
  bool fill_depth_from_disparity = true;
  bool export_ply = true;
  bool export_renders = false;
  int log_every = 1;

  void validate() const;
};

/// One documented config key. `set` parses JSON, `parse` parses a flag value.
struct ConfigKey {
  std::string name;
  std::string type;
  std::string doc;
  std::function<nlohmann::json(const RunConfig &)> get;
  std::function<void(RunConfig &, const nlohmann::json &)> set;
};

/// The single list every reader, writer and help text is built from.
const std::vector<ConfigKey> &config_keys();

/// Flattened dotted keys; unknown keys and type mismatches raise ConfigError.
void apply_config_json(RunConfig &config, const nlohmann::json &j);
RunConfig load_run_config(const std::string &path);
/// Nested JSON of every key.
nlohmann::json to_json(const RunConfig &config);
/// Parses a command-line value for `key` ("true"/"false", numbers, r,g,b).
void apply_config_flag(RunConfig &config, const ConfigKey &key, const std::string &value);

/// Human-readable table of every key, default and description.
std::string config_help();

} // namespace deformsplat
