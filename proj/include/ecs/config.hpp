#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ecs/evolution.hpp"
#include "ecs/fitness.hpp"
#include "ecs/train.hpp"

namespace ecs {

/// Environment variable naming the default data directory.
inline constexpr const char* kDataDirEnv = "ECS_DATA_DIR";

struct DataConfig {
  std::string source = "mnist";  // mnist | synthetic
  std::string dir;
  std::size_t holdout = 5000;     // tail of the training file used for E
  std::size_t train_limit = 0;    // 0 keeps every training image
  std::size_t test_limit = 0;     // 0 keeps every test image
  int synthetic_per_class = 60;   // synthetic source only
};

struct BaselineConfig {
  double weight_tau = 0.01;
  double filter_tau = -1.0;  // < 0: pick tau so the filter mask keeps the
                             // ECS winner's per-layer counts when available
  int control_epochs = 3;
  int control_seeds = 3;
};

struct RunConfig {
  DataConfig data;
  TrainConfig train;
  GAConfig ga;
  FitnessConfig fitness;
  std::string fitness_mode = "network";  // network | surrogate
  std::uint64_t surrogate_seed = 0;
  std::size_t finetune_subset = 10000;
  FinalTuneConfig final;
  BaselineConfig baseline;
  std::string preset = "full";
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out = "ecs-out";
  std::string checkpoint;  // input network
  std::string individual;  // input individual
  std::string compact;     // input compact network (report)

  /// Throws Error(config) naming the offending key.
  void validate() const;
};

/// "section.key" = value pairs in file order.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Flat-sectioned key=value text with '#' or ';' comments. Unknown sections
/// and keys are rejected with their name.
ConfigEntries parse_config_text(const std::string& text);
ConfigEntries parse_config_file(const std::string& path);

/// Defaults, then the preset (from overrides or file), then the file
/// entries, then the overrides; validated.
RunConfig resolve_config(const ConfigEntries& file,
                         const ConfigEntries& overrides = {});

/// Throws Error(config) for an unknown key or a malformed value.
void set_config_value(RunConfig& config, const std::string& key,
                      const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

/// Every key in file syntax; parse + resolve of this text reproduces
/// `config`.
std::string serialize_config(const RunConfig& config);

std::vector<std::string> config_keys();
void apply_preset(RunConfig& config, const std::string& name);

}  // namespace ecs
