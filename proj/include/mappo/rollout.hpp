#pragma once

#include <cstdint>
#include <vector>

#include "mappo/rng.hpp"
#include "mappo/statebuild.hpp"
#include "mappo/valuenorm.hpp"

namespace mappo {

enum class DeathMode { Mask, Keep, Drop, MaskNoId };
DeathMode death_mode_from_string(const std::string& s);
std::string to_string(DeathMode m);

/// Time-major storage of one iteration's rollout. Arrays are per agent to
/// allow heterogeneous obs widths; within an agent the layout is [t*E + e]
/// (vectors additionally ordered [t*E*dim]).
struct TrajectoryBatch {
  int T = 0;         // buffer length
  int E = 0;         // number of parallel envs
  int n_agents = 0;
  int hidden_dim = 0;
  std::vector<int> obs_dims;    // per agent: width of the stored actor input
  std::vector<int> state_dims;  // per agent: width of the stored critic input
  std::vector<int> n_actions;   // per agent

  std::vector<std::vector<double>> obs;          // [a][t*E*obs_dim]
  std::vector<std::vector<double>> value_state;  // [a][t*E*state_dim]
  std::vector<std::vector<long>> action;         // [a][t*E]
  std::vector<std::vector<double>> logp;         // [a][t*E]
  std::vector<std::vector<double>> value;        // [a][t*E], normalized space
  std::vector<std::vector<double>> reward;       // [a][t*E], post turn-accumulation
  std::vector<std::vector<std::uint8_t>> alive;  // [a][t*E], loss inclusion mask
  std::vector<std::vector<std::uint8_t>> done;   // [a][t*E], episode end at t
  std::vector<std::vector<std::uint8_t>> terminal;  // done plus drop-mode cuts
  std::vector<std::vector<std::uint8_t>> avail;  // [a][t*E*n_actions]
  std::vector<std::vector<double>> actor_h;      // [a][t*E*H], state entering step t
  std::vector<std::vector<double>> critic_h;     // [a][t*E*H]
  std::vector<std::vector<double>> bootstrap_value;  // [a][E], normalized space

  void allocate();
  long idx(int t, int e) const { return static_cast<long>(t) * E + e; }
};

struct AdvantageSet {
  // same [a][t*E] indexing as the batch
  std::vector<std::vector<double>> advantages;      // whitened
  std::vector<std::vector<double>> returns_raw;     // R-hat before normalization
  std::vector<std::vector<double>> returns_target;  // critic regression targets
};

/// GAE + reward-to-go on denormalized values, then advantage whitening over
/// alive entries. When moments is non-null the values/bootstraps are
/// denormalized through it, it is updated once on the whole batch of raw
/// returns, and the critic targets are re-normalized; otherwise targets are
/// the raw returns.
AdvantageSet compute_gae(const TrajectoryBatch& batch, double gamma, double lambda,
                         RunningMoments* moments, bool whiten_advantages = true);

/// Applies the configured dead-agent treatment in place. spec is used by Mask
/// modes to build the zero-state replacement; gamma by Drop's forward return.
void apply_death_handling(TrajectoryBatch& batch, DeathMode mode, const StateSpec& spec,
                          double gamma);

struct Chunk {
  int agent = 0;
  int env = 0;
  int t0 = 0;
  int len = 0;
};

/// Partition the time axis into ceil(T/L) contiguous chunks per (env, agent).
/// Initial hidden states are read from the stored per-step snapshots.
std::vector<Chunk> split_chunks(const TrajectoryBatch& batch, int chunk_length);

/// One epoch's partition: random permutation split into num_minibatches
/// near-equal groups of chunk indices.
std::vector<std::vector<int>> sample_minibatches(int num_chunks, int num_minibatches,
                                                 Rng& rng);

}  // namespace mappo
