#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fpml/episodes.hpp"
#include "fpml/evaluation.hpp"
#include "fpml/training.hpp"

namespace fpml {

// A dotted key's value and where it came from ("run.yaml:12:5", "preset desk",
// "--set"). Used to anchor error messages.
struct ConfigValue {
  std::string value;
  std::string origin;
};
using FlatConfig = std::map<std::string, ConfigValue>;

std::vector<std::string> preset_names();
// Every preset defines every key; unknown names raise ConfigError.
FlatConfig preset_defaults(const std::string& name);

// Preset defaults (preset from `preset_override`, else the file's `preset`
// key, else "desk"), overlaid by the file, overlaid by `key=value` overrides.
// Unknown keys and YAML syntax errors raise ConfigError with their location.
FlatConfig load_flat_config(const std::optional<std::filesystem::path>& file,
                            const std::string& preset_override,
                            const std::vector<std::string>& overrides);

// Empty path selects the synthetic generator.
struct DataSpec {
  std::filesystem::path path;
  Split split = Split::train;
  SyntheticSpec synthetic;
};

struct RunConfig {
  std::string preset;
  std::string run_name;
  std::filesystem::path output_dir;
  TrainConfig train;
  DataSpec source;
  DataSpec target;
  EvalConfig eval;
  bool transductive = false;
  FlatConfig flat;

  std::filesystem::path run_dir() const { return output_dir / run_name; }
  // Sorted `key=value` lines; the config hash is FNV-1a over this text.
  std::string canonical() const;
  std::uint64_t hash() const;
};

// Typed conversion plus validation (including that dataset paths exist).
RunConfig resolve_config(const FlatConfig& flat);

Dataset load_data(const DataSpec& spec, std::uint64_t seed, const std::string& role);

}  // namespace fpml
