#include "mappo/statebuild.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace mappo {

StateMode state_mode_from_string(const std::string& s) {
  if (s == "IND" || s == "ind") return StateMode::IND;
  if (s == "EP" || s == "ep") return StateMode::EP;
  if (s == "CL" || s == "cl") return StateMode::CL;
  if (s == "AS" || s == "as") return StateMode::AS;
  if (s == "FP" || s == "fp") return StateMode::FP;
  throw std::invalid_argument("unknown state mode: " + s);
}

std::string to_string(StateMode m) {
  switch (m) {
    case StateMode::IND: return "IND";
    case StateMode::EP: return "EP";
    case StateMode::CL: return "CL";
    case StateMode::AS: return "AS";
    case StateMode::FP: return "FP";
  }
  return "?";
}

int StateSpec::width() const {
  int base = 0;
  switch (mode) {
    case StateMode::IND: base = obs_dim; break;
    case StateMode::EP: base = env_state_dim; break;
    case StateMode::CL: base = n_agents * obs_dim; break;
    case StateMode::AS: base = env_state_dim + obs_dim; break;
    case StateMode::FP:
      base = env_state_dim + obs_dim - static_cast<int>(fp_overlap_index.size());
      break;
  }
  return base + (include_agent_id ? n_agents : 0);
}

void StateSpec::validate() const {
  if (n_agents < 1) throw std::invalid_argument("StateSpec: n_agents must be >= 1");
  if (obs_dim < 1) throw std::invalid_argument("StateSpec: obs_dim must be >= 1");
  if ((mode == StateMode::EP || mode == StateMode::AS || mode == StateMode::FP) &&
      env_state_dim < 1)
    throw std::invalid_argument(
        "StateSpec: mode " + to_string(mode) +
        " requires an environment global state; use CL for envs without one");
  std::unordered_set<int> seen;
  for (int p : fp_overlap_index) {
    if (p < 0 || p >= env_state_dim)
      throw std::invalid_argument("StateSpec: fp_overlap_index out of range");
    if (!seen.insert(p).second)
      throw std::invalid_argument("StateSpec: duplicate fp_overlap_index entry");
  }
}

namespace {

void append_agent_id(std::vector<double>& v, const StateSpec& spec, int agent) {
  if (!spec.include_agent_id) return;
  for (int a = 0; a < spec.n_agents; ++a) v.push_back(a == agent ? 1.0 : 0.0);
}

}  // namespace

std::vector<double> build_state(const StateSpec& spec,
                                const std::vector<double>& env_state,
                                const std::vector<std::vector<double>>& all_obs,
                                int agent, bool alive) {
  if (agent < 0 || agent >= spec.n_agents)
    throw std::out_of_range("build_state: agent index out of range");
  if (!alive) return dead_state(spec, agent);
  if (static_cast<int>(all_obs.size()) != spec.n_agents)
    throw std::invalid_argument("build_state: wrong number of observations");

  std::vector<double> v;
  v.reserve(static_cast<size_t>(spec.width()));
  auto check_obs = [&](int a) {
    if (static_cast<int>(all_obs[static_cast<size_t>(a)].size()) != spec.obs_dim)
      throw std::invalid_argument("build_state: observation width mismatch");
  };
  auto check_env = [&]() {
    if (static_cast<int>(env_state.size()) != spec.env_state_dim)
      throw std::invalid_argument("build_state: env state width mismatch");
  };

  switch (spec.mode) {
    case StateMode::IND:
      check_obs(agent);
      v = all_obs[static_cast<size_t>(agent)];
      break;
    case StateMode::EP:
      check_env();
      v = env_state;
      break;
    case StateMode::CL:
      for (int a = 0; a < spec.n_agents; ++a) {
        check_obs(a);
        const auto& o = all_obs[static_cast<size_t>(a)];
        v.insert(v.end(), o.begin(), o.end());
      }
      break;
    case StateMode::AS:
      check_env();
      check_obs(agent);
      v = env_state;
      v.insert(v.end(), all_obs[static_cast<size_t>(agent)].begin(),
               all_obs[static_cast<size_t>(agent)].end());
      break;
    case StateMode::FP: {
      check_env();
      check_obs(agent);
      std::vector<char> drop(static_cast<size_t>(spec.env_state_dim), 0);
      for (int p : spec.fp_overlap_index) drop[static_cast<size_t>(p)] = 1;
      for (int i = 0; i < spec.env_state_dim; ++i)
        if (!drop[static_cast<size_t>(i)]) v.push_back(env_state[static_cast<size_t>(i)]);
      v.insert(v.end(), all_obs[static_cast<size_t>(agent)].begin(),
               all_obs[static_cast<size_t>(agent)].end());
      break;
    }
  }
  append_agent_id(v, spec, agent);
  return v;
}

std::vector<double> dead_state(const StateSpec& spec, int agent) {
  if (agent < 0 || agent >= spec.n_agents)
    throw std::out_of_range("dead_state: agent index out of range");
  int base = spec.width() - (spec.include_agent_id ? spec.n_agents : 0);
  std::vector<double> v(static_cast<size_t>(base), 0.0);
  append_agent_id(v, spec, agent);
  return v;
}

}  // namespace mappo
