#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mappo/rng.hpp"

namespace mappo {

/// Result of one environment step. The reward is shared by all agents; in
/// turn-based games it is the raw per-step reward (turn accumulation happens
/// in the rollout collector).
struct EnvStep {
  std::vector<std::vector<double>> obs;           // per agent
  std::vector<double> state;                      // empty when env has none
  double reward = 0.0;
  bool done = false;
  bool win = false;                               // success flag at termination
  std::vector<std::uint8_t> alive;                // per agent
  std::vector<std::vector<std::uint8_t>> avail;   // per agent action masks
};

struct EnvDescriptor {
  std::string name;
  int n_agents = 0;
  std::vector<int> obs_dims;       // per agent (heterogeneous envs differ)
  int env_state_dim = 0;           // 0 when no native global state
  std::vector<int> n_actions;      // per agent
  int episode_limit = 0;           // in buffer timesteps (rounds if turn-based)
  std::vector<int> fp_overlap_index;
  bool has_deaths = false;
  bool turn_based = false;
  bool heterogeneous = false;

  int obs_dim() const;       // homogeneous accessor; throws if agents differ
  int actions() const;       // ditto
  int max_obs_dim() const;
  int max_actions() const;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvDescriptor& descriptor() const = 0;
  virtual EnvStep reset() = 0;
  /// Joint step; turn-based envs read only the acting agent's entry.
  virtual EnvStep step(const std::vector<long>& actions) = 0;
  /// Acting agent for turn-based envs, -1 otherwise.
  virtual int acting_agent() const { return -1; }
  virtual Rng& rng() = 0;
};

using EnvParams = std::map<std::string, std::string>;

// factories
std::unique_ptr<Env> make_spread_env(int n_agents, std::uint64_t seed);
std::unique_ptr<Env> make_reference_env(std::uint64_t seed);
std::unique_ptr<Env> make_comm_env(std::uint64_t seed);
std::unique_ptr<Env> make_turnchain_env(int n_players, int deck_size, std::uint64_t seed);
std::unique_ptr<Env> make_skirmish_env(int n_allies, int n_enemies, std::uint64_t seed);

/// Registry keyed by name: spread, reference, comm, turnchain, skirmish.
/// Recognized params: n_agents (spread), n_players/deck_size (turnchain),
/// n_allies/n_enemies (skirmish).
std::unique_ptr<Env> make_env(const std::string& name, const EnvParams& params,
                              std::uint64_t seed);
std::vector<std::string> registered_env_names();

/// Scripted baseline policies used as evaluation yardsticks.
namespace scripted {
/// Greedy assignment policy for spread: optimal agent->landmark matching plus
/// 1-step lookahead movement.
std::vector<long> spread_greedy_actions(const Env& env);
/// Focus-fire policy for skirmish: everyone attacks the weakest in-range
/// enemy, otherwise closes distance.
std::vector<long> skirmish_focus_fire_actions(const Env& env);
/// Uniform random actions over the available mask.
std::vector<long> random_actions(const EnvStep& s, Rng& rng);
}  // namespace scripted

}  // namespace mappo
