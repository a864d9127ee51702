#include "mappo/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mappo {

DeathMode death_mode_from_string(const std::string& s) {
  if (s == "mask") return DeathMode::Mask;
  if (s == "keep") return DeathMode::Keep;
  if (s == "drop") return DeathMode::Drop;
  if (s == "mask_no_id") return DeathMode::MaskNoId;
  throw std::invalid_argument("unknown death mode: " + s);
}

std::string to_string(DeathMode m) {
  switch (m) {
    case DeathMode::Mask: return "mask";
    case DeathMode::Keep: return "keep";
    case DeathMode::Drop: return "drop";
    case DeathMode::MaskNoId: return "mask_no_id";
  }
  return "?";
}

void TrajectoryBatch::allocate() {
  size_t slots = static_cast<size_t>(T) * E;
  auto sized = [&](int a, int per) { return slots * static_cast<size_t>(per); };
  obs.resize(static_cast<size_t>(n_agents));
  value_state.resize(static_cast<size_t>(n_agents));
  action.resize(static_cast<size_t>(n_agents));
  logp.resize(static_cast<size_t>(n_agents));
  value.resize(static_cast<size_t>(n_agents));
  reward.resize(static_cast<size_t>(n_agents));
  alive.resize(static_cast<size_t>(n_agents));
  done.resize(static_cast<size_t>(n_agents));
  terminal.resize(static_cast<size_t>(n_agents));
  avail.resize(static_cast<size_t>(n_agents));
  actor_h.resize(static_cast<size_t>(n_agents));
  critic_h.resize(static_cast<size_t>(n_agents));
  bootstrap_value.resize(static_cast<size_t>(n_agents));
  for (int a = 0; a < n_agents; ++a) {
    auto ai = static_cast<size_t>(a);
    obs[ai].assign(sized(a, obs_dims[ai]), 0.0);
    value_state[ai].assign(sized(a, state_dims[ai]), 0.0);
    action[ai].assign(slots, 0);
    logp[ai].assign(slots, 0.0);
    value[ai].assign(slots, 0.0);
    reward[ai].assign(slots, 0.0);
    alive[ai].assign(slots, 1);
    done[ai].assign(slots, 0);
    terminal[ai].assign(slots, 0);
    avail[ai].assign(sized(a, n_actions[ai]), 1);
    actor_h[ai].assign(sized(a, hidden_dim), 0.0);
    critic_h[ai].assign(sized(a, hidden_dim), 0.0);
    bootstrap_value[ai].assign(static_cast<size_t>(E), 0.0);
  }
}

AdvantageSet compute_gae(const TrajectoryBatch& b, double gamma, double lambda,
                         RunningMoments* moments, bool whiten_advantages) {
  AdvantageSet out;
  size_t slots = static_cast<size_t>(b.T) * b.E;
  out.advantages.assign(static_cast<size_t>(b.n_agents), std::vector<double>(slots, 0.0));
  out.returns_raw.assign(static_cast<size_t>(b.n_agents), std::vector<double>(slots, 0.0));
  out.returns_target.assign(static_cast<size_t>(b.n_agents), std::vector<double>(slots, 0.0));

  auto denorm = [&](double v) { return moments ? moments->denormalize(v) : v; };

  for (int a = 0; a < b.n_agents; ++a) {
    auto ai = static_cast<size_t>(a);
    for (int e = 0; e < b.E; ++e) {
      double gae = 0.0;
      for (int t = b.T - 1; t >= 0; --t) {
        size_t i = static_cast<size_t>(b.idx(t, e));
        double v = denorm(b.value[ai][i]);
        double next_v;
        if (b.terminal[ai][i]) {
          next_v = 0.0;
        } else if (t == b.T - 1) {
          next_v = denorm(b.bootstrap_value[ai][static_cast<size_t>(e)]);
        } else {
          next_v = denorm(b.value[ai][static_cast<size_t>(b.idx(t + 1, e))]);
        }
        double delta = b.reward[ai][i] + gamma * next_v - v;
        bool cut = b.terminal[ai][i];
        gae = delta + (cut ? 0.0 : gamma * lambda * gae);
        out.advantages[ai][i] = gae;
        out.returns_raw[ai][i] = gae + v;
      }
    }
  }

  if (moments) {
    // one statistics update per iteration, on the whole batch of targets
    std::vector<double> flat;
    flat.reserve(slots * static_cast<size_t>(b.n_agents));
    for (int a = 0; a < b.n_agents; ++a) {
      auto ai = static_cast<size_t>(a);
      for (size_t i = 0; i < slots; ++i)
        if (b.alive[ai][i]) flat.push_back(out.returns_raw[ai][i]);
    }
    if (!flat.empty()) moments->update(flat);
    for (int a = 0; a < b.n_agents; ++a) {
      auto ai = static_cast<size_t>(a);
      for (size_t i = 0; i < slots; ++i)
        out.returns_target[ai][i] = moments->normalize(out.returns_raw[ai][i]);
    }
  } else {
    out.returns_target = out.returns_raw;
  }

  if (whiten_advantages) {
    // statistics over alive entries only
    double sum = 0.0, sumsq = 0.0;
    long count = 0;
    for (int a = 0; a < b.n_agents; ++a) {
      auto ai = static_cast<size_t>(a);
      for (size_t i = 0; i < slots; ++i) {
        if (!b.alive[ai][i]) continue;
        sum += out.advantages[ai][i];
        sumsq += out.advantages[ai][i] * out.advantages[ai][i];
        ++count;
      }
    }
    if (count > 1) {
      double mean = sum / static_cast<double>(count);
      double var = sumsq / static_cast<double>(count) - mean * mean;
      double sd = var > 1e-16 ? std::sqrt(var) : 1.0;
      for (int a = 0; a < b.n_agents; ++a) {
        auto ai = static_cast<size_t>(a);
        for (size_t i = 0; i < slots; ++i)
          out.advantages[ai][i] = (out.advantages[ai][i] - mean) / sd;
      }
    }
  }
  return out;
}

void apply_death_handling(TrajectoryBatch& b, DeathMode mode, const StateSpec& spec,
                          double gamma) {
  if (mode == DeathMode::Keep) return;

  if (mode == DeathMode::Mask || mode == DeathMode::MaskNoId) {
    StateSpec dspec = spec;
    if (mode == DeathMode::MaskNoId) dspec.include_agent_id = false;
    for (int a = 0; a < b.n_agents; ++a) {
      auto ai = static_cast<size_t>(a);
      std::vector<double> dead = dead_state(dspec, a);
      // MaskNoId keeps the stored width; the id block is simply zero
      dead.resize(static_cast<size_t>(b.state_dims[ai]), 0.0);
      int sd = b.state_dims[ai];
      for (int t = 0; t < b.T; ++t)
        for (int e = 0; e < b.E; ++e) {
          size_t i = static_cast<size_t>(b.idx(t, e));
          if (b.alive[ai][i]) continue;
          std::copy(dead.begin(), dead.end(),
                    b.value_state[ai].begin() + static_cast<long>(i) * sd);
        }
    }
    return;
  }

  if (mode != DeathMode::Drop) throw std::invalid_argument("unknown death mode");

  // Drop: per episode segment, fold the post-death rewards into the last
  // alive step and cut the trajectory there.
  for (int a = 0; a < b.n_agents; ++a) {
    auto ai = static_cast<size_t>(a);
    for (int e = 0; e < b.E; ++e) {
      int seg_start = 0;
      while (seg_start < b.T) {
        int seg_end = seg_start;  // inclusive episode end within the buffer
        while (seg_end < b.T - 1 && !b.done[ai][static_cast<size_t>(b.idx(seg_end, e))])
          ++seg_end;
        // first dead step within [seg_start, seg_end]
        int first_dead = -1;
        for (int t = seg_start; t <= seg_end; ++t)
          if (!b.alive[ai][static_cast<size_t>(b.idx(t, e))]) {
            first_dead = t;
            break;
          }
        if (first_dead >= 0) {
          int d = first_dead - 1;  // last alive step
          if (d >= seg_start) {
            double ret = 0.0, disc = 1.0;
            for (int t = d; t <= seg_end; ++t) {
              ret += disc * b.reward[ai][static_cast<size_t>(b.idx(t, e))];
              disc *= gamma;
            }
            size_t di = static_cast<size_t>(b.idx(d, e));
            b.reward[ai][di] = ret;
            b.terminal[ai][di] = 1;
          }
          for (int t = first_dead; t <= seg_end; ++t) {
            size_t i = static_cast<size_t>(b.idx(t, e));
            b.alive[ai][i] = 0;
            b.reward[ai][i] = 0.0;
          }
        }
        seg_start = seg_end + 1;
      }
    }
  }
}

std::vector<Chunk> split_chunks(const TrajectoryBatch& b, int chunk_length) {
  if (chunk_length < 1) throw std::invalid_argument("split_chunks: chunk length must be >= 1");
  std::vector<Chunk> chunks;
  for (int a = 0; a < b.n_agents; ++a)
    for (int e = 0; e < b.E; ++e)
      for (int t0 = 0; t0 < b.T; t0 += chunk_length)
        chunks.push_back({a, e, t0, std::min(chunk_length, b.T - t0)});
  return chunks;
}

std::vector<std::vector<int>> sample_minibatches(int num_chunks, int num_minibatches,
                                                 Rng& rng) {
  if (num_minibatches < 1)
    throw std::invalid_argument("sample_minibatches: need at least one mini-batch");
  if (num_minibatches > num_chunks)
    throw std::invalid_argument("sample_minibatches: more mini-batches than chunks");
  std::vector<int> order(static_cast<size_t>(num_chunks));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<std::vector<int>> groups(static_cast<size_t>(num_minibatches));
  // near-equal sizes, first groups take the remainder
  int base = num_chunks / num_minibatches, rem = num_chunks % num_minibatches;
  int pos = 0;
  for (int gidx = 0; gidx < num_minibatches; ++gidx) {
    int len = base + (gidx < rem ? 1 : 0);
    for (int i = 0; i < len; ++i) groups[static_cast<size_t>(gidx)].push_back(order[static_cast<size_t>(pos++)]);
  }
  return groups;
}

}  // namespace mappo
