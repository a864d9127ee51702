#pragma once

#include <string>
#include <vector>

namespace mappo {

/// Which representation the centralized critic consumes.
enum class StateMode { IND, EP, CL, AS, FP };

StateMode state_mode_from_string(const std::string& s);
std::string to_string(StateMode m);

/// Declarative description of the critic input layout.
struct StateSpec {
  StateMode mode = StateMode::CL;
  bool include_agent_id = true;
  int n_agents = 0;
  int obs_dim = 0;        // per-agent local observation width
  int env_state_dim = 0;  // 0 when the env provides no global state
  // EP-feature positions duplicated in the local observation; pruned in FP
  std::vector<int> fp_overlap_index;

  /// Built-state width as a pure function of the spec.
  int width() const;
  void validate() const;
};

/// Assembles the critic input for one agent. obs are the local observations of
/// all agents (IND/AS/FP read only agent's own). Dead agents (alive=false) get
/// the zero state with agent ID.
std::vector<double> build_state(const StateSpec& spec,
                                const std::vector<double>& env_state,
                                const std::vector<std::vector<double>>& all_obs,
                                int agent, bool alive = true);

/// Zero vector of spec width with the one-hot agent ID appended when enabled.
std::vector<double> dead_state(const StateSpec& spec, int agent);

}  // namespace mappo
