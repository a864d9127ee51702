#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "mappo/rollout.hpp"

using namespace mappo;

namespace {

// Minimal batch with one agent, scalar obs/state.
TrajectoryBatch make_batch(int T, int E, int n_agents = 1) {
  TrajectoryBatch b;
  b.T = T;
  b.E = E;
  b.n_agents = n_agents;
  b.hidden_dim = 1;
  b.obs_dims.assign(static_cast<size_t>(n_agents), 1);
  b.state_dims.assign(static_cast<size_t>(n_agents), 1);
  b.n_actions.assign(static_cast<size_t>(n_agents), 2);
  b.allocate();
  return b;
}

void randomize(TrajectoryBatch& b, Rng& rng, double p_terminal) {
  for (int a = 0; a < b.n_agents; ++a) {
    auto ai = static_cast<size_t>(a);
    for (int e = 0; e < b.E; ++e) {
      for (int t = 0; t < b.T; ++t) {
        size_t i = static_cast<size_t>(b.idx(t, e));
        b.reward[ai][i] = rng.normal();
        b.value[ai][i] = rng.normal();
        bool term = rng.uniform() < p_terminal;
        b.done[ai][i] = term;
        b.terminal[ai][i] = term;
      }
      b.bootstrap_value[ai][static_cast<size_t>(e)] = rng.normal();
    }
  }
}

// Direct evaluation of the truncated double sum
//   A_t = sum_l (gamma*lambda)^l delta_{t+l},
// stopping after the first terminal step (its delta uses next value 0).
std::vector<double> gae_oracle(const TrajectoryBatch& b, int a, int e, double gamma,
                               double lambda) {
  auto ai = static_cast<size_t>(a);
  std::vector<double> delta(static_cast<size_t>(b.T));
  for (int t = 0; t < b.T; ++t) {
    size_t i = static_cast<size_t>(b.idx(t, e));
    double next_v;
    if (b.terminal[ai][i])
      next_v = 0.0;
    else if (t == b.T - 1)
      next_v = b.bootstrap_value[ai][static_cast<size_t>(e)];
    else
      next_v = b.value[ai][static_cast<size_t>(b.idx(t + 1, e))];
    delta[static_cast<size_t>(t)] = b.reward[ai][i] + gamma * next_v - b.value[ai][i];
  }
  std::vector<double> adv(static_cast<size_t>(b.T), 0.0);
  for (int t = 0; t < b.T; ++t) {
    double acc = 0.0, w = 1.0;
    for (int l = t; l < b.T; ++l) {
      acc += w * delta[static_cast<size_t>(l)];
      if (b.terminal[ai][static_cast<size_t>(b.idx(l, e))]) break;
      w *= gamma * lambda;
    }
    adv[static_cast<size_t>(t)] = acc;
  }
  return adv;
}

}  // namespace

TEST_CASE("compute_gae matches the explicit truncated double sum") {
  Rng rng(101);
  const double gammas[] = {0.9, 0.99, 1.0};
  const double lambdas[] = {0.0, 0.5, 0.95, 1.0};
  for (double gamma : gammas) {
    for (double lambda : lambdas) {
      for (int rep = 0; rep < 40; ++rep) {
        TrajectoryBatch b = make_batch(17, 2, 2);
        randomize(b, rng, rep % 2 ? 0.15 : 0.0);
        AdvantageSet adv = compute_gae(b, gamma, lambda, nullptr, false);
        for (int a = 0; a < b.n_agents; ++a) {
          for (int e = 0; e < b.E; ++e) {
            std::vector<double> want = gae_oracle(b, a, e, gamma, lambda);
            for (int t = 0; t < b.T; ++t) {
              size_t i = static_cast<size_t>(b.idx(t, e));
              CHECK(adv.advantages[static_cast<size_t>(a)][i] ==
                    doctest::Approx(want[static_cast<size_t>(t)]).epsilon(1e-10));
              CHECK(adv.returns_raw[static_cast<size_t>(a)][i] ==
                    doctest::Approx(want[static_cast<size_t>(t)] +
                                    b.value[static_cast<size_t>(a)][i])
                        .epsilon(1e-10));
            }
          }
        }
      }
    }
  }
}

TEST_CASE("lambda = 0 reduces GAE to the one-step TD error") {
  Rng rng(7);
  TrajectoryBatch b = make_batch(12, 3);
  randomize(b, rng, 0.1);
  AdvantageSet adv = compute_gae(b, 0.97, 0.0, nullptr, false);
  for (int e = 0; e < b.E; ++e) {
    for (int t = 0; t < b.T; ++t) {
      size_t i = static_cast<size_t>(b.idx(t, e));
      double next_v = b.terminal[0][i] ? 0.0
                      : t == b.T - 1   ? b.bootstrap_value[0][static_cast<size_t>(e)]
                                       : b.value[0][static_cast<size_t>(b.idx(t + 1, e))];
      CHECK(adv.advantages[0][i] ==
            doctest::Approx(b.reward[0][i] + 0.97 * next_v - b.value[0][i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("whitened advantages have zero mean and unit variance over alive entries") {
  Rng rng(55);
  TrajectoryBatch b = make_batch(20, 4);
  randomize(b, rng, 0.05);
  for (int t = 10; t < 20; ++t) b.alive[0][static_cast<size_t>(b.idx(t, 2))] = 0;
  AdvantageSet adv = compute_gae(b, 0.99, 0.95, nullptr, true);
  double sum = 0, sumsq = 0;
  long n = 0;
  for (int e = 0; e < b.E; ++e)
    for (int t = 0; t < b.T; ++t) {
      size_t i = static_cast<size_t>(b.idx(t, e));
      if (!b.alive[0][i]) continue;
      sum += adv.advantages[0][i];
      sumsq += adv.advantages[0][i] * adv.advantages[0][i];
      ++n;
    }
  CHECK(sum / static_cast<double>(n) == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(sumsq / static_cast<double>(n) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("value normalization: denormalized GAE, one moments update, normalized targets") {
  Rng rng(77);
  TrajectoryBatch b = make_batch(15, 2);
  randomize(b, rng, 0.1);
  RunningMoments fresh(0.99999);  // identity before the update inside compute_gae
  AdvantageSet with_norm = compute_gae(b, 0.99, 0.95, &fresh, false);
  AdvantageSet plain = compute_gae(b, 0.99, 0.95, nullptr, false);

  // identity denormalization: same advantages and raw returns
  for (size_t i = 0; i < plain.advantages[0].size(); ++i) {
    CHECK(with_norm.advantages[0][i] == plain.advantages[0][i]);
    CHECK(with_norm.returns_raw[0][i] == plain.returns_raw[0][i]);
  }

  // the moments saw exactly one batch: all alive raw returns
  std::vector<double> flat;
  for (size_t i = 0; i < plain.returns_raw[0].size(); ++i)
    if (b.alive[0][i]) flat.push_back(plain.returns_raw[0][i]);
  RunningMoments expect(0.99999);
  expect.update(flat);
  CHECK(fresh.mean() == doctest::Approx(expect.mean()).epsilon(1e-14));
  CHECK(fresh.stddev() == doctest::Approx(expect.stddev()).epsilon(1e-14));
  for (size_t i = 0; i < plain.returns_raw[0].size(); ++i)
    CHECK(with_norm.returns_target[0][i] ==
          doctest::Approx(expect.normalize(plain.returns_raw[0][i])).epsilon(1e-12));

  // once the moments carry statistics, stored values are denormalized first
  TrajectoryBatch b2 = make_batch(6, 1);
  randomize(b2, rng, 0.0);
  TrajectoryBatch b2_denorm = b2;
  for (size_t i = 0; i < b2.value[0].size(); ++i)
    b2_denorm.value[0][i] = fresh.denormalize(b2.value[0][i]);
  b2_denorm.bootstrap_value[0][0] = fresh.denormalize(b2.bootstrap_value[0][0]);
  RunningMoments copy = fresh;
  AdvantageSet normed = compute_gae(b2, 0.9, 0.9, &copy, false);
  AdvantageSet manual = compute_gae(b2_denorm, 0.9, 0.9, nullptr, false);
  for (size_t i = 0; i < normed.advantages[0].size(); ++i)
    CHECK(normed.advantages[0][i] == doctest::Approx(manual.advantages[0][i]).epsilon(1e-12));
}

TEST_CASE("drop mode: gamma=1 conserves per-segment reward mass") {
  Rng rng(31);
  TrajectoryBatch b = make_batch(20, 3);
  randomize(b, rng, 0.12);
  // kill the agent mid-segment in a couple of envs
  for (int t = 6; t < 20; ++t) b.alive[0][static_cast<size_t>(b.idx(t, 0))] = 0;
  for (int t = 13; t < 17; ++t) b.alive[0][static_cast<size_t>(b.idx(t, 1))] = 0;
  std::vector<double> before = b.reward[0];
  auto alive_before = b.alive[0];

  StateSpec spec;
  spec.mode = StateMode::IND;
  spec.include_agent_id = false;
  spec.n_agents = 1;
  spec.obs_dim = 1;
  apply_death_handling(b, DeathMode::Drop, spec, 1.0);

  for (int e = 0; e < b.E; ++e) {
    int seg_start = 0;
    while (seg_start < b.T) {
      int seg_end = seg_start;
      while (seg_end < b.T - 1 && !b.done[0][static_cast<size_t>(b.idx(seg_end, e))]) ++seg_end;
      double mass_before = 0, mass_after = 0;
      bool had_death = false;
      for (int t = seg_start; t <= seg_end; ++t) {
        size_t i = static_cast<size_t>(b.idx(t, e));
        mass_before += before[i];
        mass_after += b.reward[0][i];
        had_death = had_death || !alive_before[i];
      }
      // conservation holds when the death is not at the very first segment step
      bool first_dead = !alive_before[static_cast<size_t>(b.idx(seg_start, e))];
      if (!first_dead)
        CHECK(mass_after == doctest::Approx(mass_before).epsilon(1e-12));
      if (had_death && !first_dead) {
        // trajectory is cut at the last alive step
        int d = seg_start;
        while (d < seg_end && alive_before[static_cast<size_t>(b.idx(d + 1, e))]) ++d;
        CHECK(b.terminal[0][static_cast<size_t>(b.idx(d, e))] == 1);
        for (int t = d + 1; t <= seg_end; ++t) {
          size_t i = static_cast<size_t>(b.idx(t, e));
          CHECK(b.alive[0][i] == 0);
          CHECK(b.reward[0][i] == 0.0);
        }
      }
      seg_start = seg_end + 1;
    }
  }
}

TEST_CASE("drop mode: discounted fold onto the last alive step") {
  TrajectoryBatch b = make_batch(5, 1);
  double r[5] = {1.0, 2.0, 4.0, 8.0, 16.0};
  for (int t = 0; t < 5; ++t) b.reward[0][static_cast<size_t>(t)] = r[t];
  b.alive[0][3] = 0;
  b.alive[0][4] = 0;
  StateSpec spec;
  spec.mode = StateMode::IND;
  spec.include_agent_id = false;
  spec.n_agents = 1;
  spec.obs_dim = 1;
  apply_death_handling(b, DeathMode::Drop, spec, 0.5);
  // last alive step t=2 absorbs 4 + 0.5*8 + 0.25*16 = 12
  CHECK(b.reward[0][2] == doctest::Approx(12.0).epsilon(1e-14));
  CHECK(b.terminal[0][2] == 1);
  CHECK(b.reward[0][3] == 0.0);
  CHECK(b.reward[0][4] == 0.0);
  CHECK(b.reward[0][0] == 1.0);
  CHECK(b.reward[0][1] == 2.0);
}

TEST_CASE("mask modes replace dead critic inputs and are idempotent") {
  TrajectoryBatch b = make_batch(4, 1, 2);
  StateSpec spec;
  spec.mode = StateMode::CL;
  spec.include_agent_id = true;
  spec.n_agents = 2;
  spec.obs_dim = 1;
  // stored critic input width = spec width
  b.state_dims.assign(2, spec.width());
  b.allocate();
  for (int a = 0; a < 2; ++a)
    for (size_t i = 0; i < b.value_state[static_cast<size_t>(a)].size(); ++i)
      b.value_state[static_cast<size_t>(a)][i] = 5.0;
  b.alive[1][2] = 0;

  TrajectoryBatch masked = b;
  apply_death_handling(masked, DeathMode::Mask, spec, 0.99);
  std::vector<double> want = dead_state(spec, 1);
  int sd = spec.width();
  for (int k = 0; k < sd; ++k)
    CHECK(masked.value_state[1][static_cast<size_t>(2 * sd + k)] ==
          want[static_cast<size_t>(k)]);
  // the one-hot agent id survives in Mask mode
  CHECK(want[static_cast<size_t>(sd - 1)] == 1.0);
  // untouched rows stay intact
  CHECK(masked.value_state[1][0] == 5.0);
  CHECK(masked.value_state[0][static_cast<size_t>(2 * sd)] == 5.0);

  TrajectoryBatch twice = masked;
  apply_death_handling(twice, DeathMode::Mask, spec, 0.99);
  CHECK(twice.value_state == masked.value_state);

  TrajectoryBatch noid = b;
  apply_death_handling(noid, DeathMode::MaskNoId, spec, 0.99);
  for (int k = 0; k < sd; ++k)
    CHECK(noid.value_state[1][static_cast<size_t>(2 * sd + k)] == 0.0);
}

TEST_CASE("keep mode leaves the batch untouched") {
  Rng rng(3);
  TrajectoryBatch b = make_batch(6, 2);
  randomize(b, rng, 0.1);
  b.alive[0][4] = 0;
  TrajectoryBatch before = b;
  StateSpec spec;
  spec.mode = StateMode::IND;
  spec.include_agent_id = false;
  spec.n_agents = 1;
  spec.obs_dim = 1;
  apply_death_handling(b, DeathMode::Keep, spec, 0.99);
  CHECK(b.reward == before.reward);
  CHECK(b.alive == before.alive);
  CHECK(b.terminal == before.terminal);
  CHECK(b.value_state == before.value_state);
}

TEST_CASE("split_chunks partitions every (agent, env) time axis") {
  TrajectoryBatch b = make_batch(23, 3, 2);
  std::vector<Chunk> chunks = split_chunks(b, 10);
  CHECK(chunks.size() == 2u * 3u * 3u);  // ceil(23/10) = 3 per pair
  std::set<std::tuple<int, int, int>> covered;
  for (const Chunk& c : chunks) {
    CHECK(c.len >= 1);
    CHECK(c.len <= 10);
    CHECK(c.t0 + c.len <= 23);
    CHECK(c.t0 % 10 == 0);
    for (int t = c.t0; t < c.t0 + c.len; ++t) {
      bool added = covered.insert({c.agent, c.env, t}).second;
      CHECK(added);  // no overlaps
    }
  }
  CHECK(covered.size() == 2u * 3u * 23u);
  CHECK_THROWS(split_chunks(b, 0));
}

TEST_CASE("sample_minibatches: permutation split into near-equal groups") {
  Rng rng(13);
  for (int reps = 0; reps < 10; ++reps) {
    std::vector<std::vector<int>> groups = sample_minibatches(23, 4, rng);
    REQUIRE(groups.size() == 4);
    std::set<int> seen;
    for (const auto& g : groups) {
      CHECK(std::abs(static_cast<int>(g.size()) - 23 / 4) <= 1);
      for (int i : g) {
        CHECK(i >= 0);
        CHECK(i < 23);
        CHECK(seen.insert(i).second);
      }
    }
    CHECK(seen.size() == 23);
  }
  // one big group is the identity partition up to order
  std::vector<std::vector<int>> one = sample_minibatches(5, 1, rng);
  REQUIRE(one.size() == 1);
  CHECK(one[0].size() == 5);
  CHECK_THROWS(sample_minibatches(3, 4, rng));
  CHECK_THROWS(sample_minibatches(3, 0, rng));
}
