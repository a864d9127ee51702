#pragma once

#include <string>
#include <vector>

#include "mappo/algo.hpp"

namespace mappo {

/// Invalid config input; maps to exit code 2 in the CLI.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One settable field: every key maps to exactly one TrainConfig field.
/// Environment parameters use the open-ended "env.<name>" key family.
struct ConfigKey {
  std::string section;
  std::string key;
  std::string (*get)(const TrainConfig&);
  void (*set)(TrainConfig&, const std::string&);
};

const std::vector<ConfigKey>& config_schema();

/// key=value with [section] headers and # comments. Unknown keys are errors.
TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config_file(const std::string& path);

/// "key=value" override applied on top of a parsed config.
void apply_override(TrainConfig& cfg, const std::string& assignment);

/// Overrides from MAPPO_-prefixed environment variables
/// (MAPPO_PPO_EPOCHS=15 -> ppo_epochs, MAPPO_ENV_N_AGENTS=4 -> env.n_agents).
void apply_env_overrides(TrainConfig& cfg);

/// Canonical text form; parse(serialize(cfg)) == cfg.
std::string serialize_config(const TrainConfig& cfg);

}  // namespace mappo
