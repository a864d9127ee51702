#include "mappo/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

extern char** environ;

namespace mappo {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "': cannot parse '" + v + "' as a number");
  }
}

long parse_long(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "': cannot parse '" + v + "' as an integer");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "': cannot parse '" + v + "' as a boolean");
}

std::string activation_str(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }
Activation activation_from(const std::string& key, const std::string& v) {
  if (v == "tanh") return Activation::Tanh;
  if (v == "relu") return Activation::Relu;
  throw ConfigError("config: key '" + key + "': expected tanh or relu, got '" + v + "'");
}

std::string vloss_str(ValueLossKind k) {
  return k == ValueLossKind::Huber ? "huber" : "squared";
}
ValueLossKind vloss_from(const std::string& key, const std::string& v) {
  if (v == "huber") return ValueLossKind::Huber;
  if (v == "squared") return ValueLossKind::Squared;
  throw ConfigError("config: key '" + key + "': expected huber or squared, got '" + v + "'");
}

std::string share_str(SharePolicy s) {
  switch (s) {
    case SharePolicy::Auto: return "auto";
    case SharePolicy::Shared: return "shared";
    default: return "separate";
  }
}
SharePolicy share_from(const std::string& key, const std::string& v) {
  if (v == "auto") return SharePolicy::Auto;
  if (v == "shared") return SharePolicy::Shared;
  if (v == "separate") return SharePolicy::Separate;
  throw ConfigError("config: key '" + key + "': expected auto, shared or separate, got '" +
                    v + "'");
}

#define DBL_KEY(sec, name, field)                                            \
  ConfigKey{sec, name, [](const TrainConfig& c) { return fmt_double(c.field); }, \
            [](TrainConfig& c, const std::string& v) { c.field = parse_double(name, v); }}
#define INT_KEY(sec, name, field)                                                   \
  ConfigKey{sec, name, [](const TrainConfig& c) { return std::to_string(c.field); }, \
            [](TrainConfig& c, const std::string& v) {                              \
              c.field = static_cast<int>(parse_long(name, v));                      \
            }}
#define LONG_KEY(sec, name, field)                                                  \
  ConfigKey{sec, name, [](const TrainConfig& c) { return std::to_string(c.field); }, \
            [](TrainConfig& c, const std::string& v) { c.field = parse_long(name, v); }}
#define BOOL_KEY(sec, name, field)                                                     \
  ConfigKey{sec, name,                                                                 \
            [](const TrainConfig& c) { return std::string(c.field ? "true" : "false"); }, \
            [](TrainConfig& c, const std::string& v) { c.field = parse_bool(name, v); }}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      ConfigKey{"env", "env_name", [](const TrainConfig& c) { return c.env_name; },
                [](TrainConfig& c, const std::string& v) { c.env_name = v; }},
      INT_KEY("env", "num_envs", num_envs),
      INT_KEY("env", "buffer_length", buffer_length),
      LONG_KEY("env", "total_env_steps", total_env_steps),
      DBL_KEY("ppo", "gamma", gamma),
      DBL_KEY("ppo", "gae_lambda", gae_lambda),
      DBL_KEY("ppo", "clip_epsilon", clip_epsilon),
      INT_KEY("ppo", "ppo_epochs", ppo_epochs),
      INT_KEY("ppo", "num_minibatches", num_minibatches),
      DBL_KEY("ppo", "entropy_coef", entropy_coef),
      DBL_KEY("ppo", "lr", lr),
      DBL_KEY("ppo", "critic_lr", critic_lr),
      DBL_KEY("ppo", "optimizer_eps", optimizer_eps),
      DBL_KEY("ppo", "weight_decay", weight_decay),
      DBL_KEY("ppo", "max_grad_norm", max_grad_norm),
      INT_KEY("ppo", "chunk_length", chunk_length),
      ConfigKey{"ppo", "value_loss",
                [](const TrainConfig& c) { return vloss_str(c.value_loss); },
                [](TrainConfig& c, const std::string& v) {
                  c.value_loss = vloss_from("value_loss", v);
                }},
      DBL_KEY("ppo", "huber_delta", huber_delta),
      BOOL_KEY("ppo", "use_value_norm", use_value_norm),
      BOOL_KEY("ppo", "use_reward_norm", use_reward_norm),
      BOOL_KEY("ppo", "use_feature_norm", use_feature_norm),
      ConfigKey{"ppo", "death_mode",
                [](const TrainConfig& c) { return to_string(c.death_mode); },
                [](TrainConfig& c, const std::string& v) {
                  c.death_mode = death_mode_from_string(v);
                }},
      ConfigKey{"ppo", "state_mode",
                [](const TrainConfig& c) { return to_string(c.state_mode); },
                [](TrainConfig& c, const std::string& v) {
                  c.state_mode = state_mode_from_string(v);
                }},
      BOOL_KEY("ppo", "include_agent_id", include_agent_id),
      ConfigKey{"ppo", "share_policy",
                [](const TrainConfig& c) { return share_str(c.share_policy); },
                [](TrainConfig& c, const std::string& v) {
                  c.share_policy = share_from("share_policy", v);
                }},
      BOOL_KEY("net", "recurrent", recurrent),
      INT_KEY("net", "stacked_frames", stacked_frames),
      INT_KEY("net", "hidden_dim", hidden_dim),
      INT_KEY("net", "num_fc", num_fc),
      INT_KEY("net", "num_fc_after", num_fc_after),
      ConfigKey{"net", "activation",
                [](const TrainConfig& c) { return activation_str(c.activation); },
                [](TrainConfig& c, const std::string& v) {
                  c.activation = activation_from("activation", v);
                }},
      DBL_KEY("net", "gain", gain),
      ConfigKey{"run", "seed",
                [](const TrainConfig& c) { return std::to_string(c.seed); },
                [](TrainConfig& c, const std::string& v) {
                  c.seed = static_cast<std::uint64_t>(parse_long("seed", v));
                }},
      INT_KEY("run", "eval_interval", eval_interval),
      INT_KEY("run", "eval_episodes", eval_episodes),
      BOOL_KEY("run", "eval_greedy", eval_greedy),
      INT_KEY("run", "checkpoint_interval", checkpoint_interval),
      INT_KEY("run", "rollout_threads", rollout_threads),
      BOOL_KEY("run", "record_timing", record_timing),
  };
  return schema;
}

#undef DBL_KEY
#undef INT_KEY
#undef LONG_KEY
#undef BOOL_KEY

namespace {

void set_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key.rfind("env.", 0) == 0) {
    std::string name = key.substr(4);
    if (name.empty()) throw ConfigError("config: empty env parameter name");
    cfg.env_params[name] = value;
    return;
  }
  for (const ConfigKey& ck : config_schema())
    if (ck.key == key) {
      ck.set(cfg, value);
      return;
    }
  throw ConfigError("config: unknown key '" + key + "'");
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("config: line " + std::to_string(lineno) + ": malformed section");
      continue;  // sections are organizational only; keys are globally unique
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + ": expected key=value");
    set_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: override '" + assignment + "' is not key=value");
  set_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void apply_env_overrides(TrainConfig& cfg) {
  for (char** e = environ; *e != nullptr; ++e) {
    std::string entry(*e);
    if (entry.rfind("MAPPO_", 0) != 0) continue;
    size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string name = entry.substr(6, eq - 6);
    std::string value = entry.substr(eq + 1);
    std::string key;
    for (char c : name) key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (key.rfind("env_", 0) == 0) {
      // distinguish env.* params from env-section scalars like env_name
      bool schema_key = false;
      for (const ConfigKey& ck : config_schema())
        if (ck.key == key) schema_key = true;
      if (!schema_key) key = "env." + key.substr(4);
    }
    set_key(cfg, key, value);
  }
}

std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const ConfigKey& ck : config_schema()) {
    if (ck.section != section) {
      if (!section.empty()) os << "\n";
      section = ck.section;
      os << "[" << section << "]\n";
    }
    os << ck.key << " = " << ck.get(cfg) << "\n";
    if (ck.key == "env_name")
      for (const auto& [k, v] : cfg.env_params) os << "env." << k << " = " << v << "\n";
  }
  return os.str();
}

}  // namespace mappo
