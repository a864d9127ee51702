#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>

#include "mappo/rng.hpp"
#include "mappo/statebuild.hpp"

using namespace mappo;

namespace {

std::vector<std::vector<double>> random_obs(const StateSpec& spec, Rng& rng) {
  std::vector<std::vector<double>> obs(static_cast<size_t>(spec.n_agents));
  for (auto& o : obs) {
    o.resize(static_cast<size_t>(spec.obs_dim));
    for (auto& v : o) v = rng.uniform(-2.0, 2.0);
  }
  return obs;
}

std::vector<double> random_env_state(const StateSpec& spec, Rng& rng) {
  std::vector<double> s(static_cast<size_t>(spec.env_state_dim));
  for (auto& v : s) v = rng.uniform(-2.0, 2.0);
  return s;
}

StateSpec random_spec(Rng& rng) {
  StateSpec spec;
  spec.mode = static_cast<StateMode>(rng.randint(0, 4));
  spec.include_agent_id = rng.randint(0, 1) == 1;
  spec.n_agents = static_cast<int>(rng.randint(1, 6));
  spec.obs_dim = static_cast<int>(rng.randint(1, 12));
  spec.env_state_dim = static_cast<int>(rng.randint(1, 15));
  std::set<int> pos;
  long k = rng.randint(0, spec.env_state_dim - 1);
  for (long i = 0; i < k; ++i) pos.insert(static_cast<int>(rng.randint(0, spec.env_state_dim - 1)));
  spec.fp_overlap_index.assign(pos.begin(), pos.end());
  return spec;
}

}  // namespace

TEST_CASE("width is a pure function of the spec, matched by built states") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    StateSpec spec = random_spec(rng);
    spec.validate();
    auto obs = random_obs(spec, rng);
    auto env_state = random_env_state(spec, rng);
    int agent = static_cast<int>(rng.randint(0, spec.n_agents - 1));
    auto v = build_state(spec, env_state, obs, agent);
    CHECK(static_cast<int>(v.size()) == spec.width());
    auto d = dead_state(spec, agent);
    CHECK(static_cast<int>(d.size()) == spec.width());
  }
}

TEST_CASE("mode layouts on a concrete example") {
  StateSpec spec;
  spec.n_agents = 2;
  spec.obs_dim = 3;
  spec.env_state_dim = 4;
  spec.include_agent_id = true;
  std::vector<std::vector<double>> obs = {{1, 2, 3}, {4, 5, 6}};
  std::vector<double> env_state = {10, 11, 12, 13};

  spec.mode = StateMode::IND;
  CHECK(build_state(spec, env_state, obs, 1) == std::vector<double>{4, 5, 6, 0, 1});
  spec.mode = StateMode::EP;
  CHECK(build_state(spec, env_state, obs, 0) == std::vector<double>{10, 11, 12, 13, 1, 0});
  spec.mode = StateMode::CL;
  CHECK(build_state(spec, env_state, obs, 0) ==
        std::vector<double>{1, 2, 3, 4, 5, 6, 1, 0});
  spec.mode = StateMode::AS;
  CHECK(build_state(spec, env_state, obs, 1) ==
        std::vector<double>{10, 11, 12, 13, 4, 5, 6, 0, 1});
  spec.mode = StateMode::FP;
  spec.fp_overlap_index = {1, 3};
  CHECK(build_state(spec, env_state, obs, 1) == std::vector<double>{10, 12, 4, 5, 6, 0, 1});
}

TEST_CASE("FP features are a subset of AS features, order preserved") {
  Rng rng(202);
  for (int trial = 0; trial < 200; ++trial) {
    StateSpec spec = random_spec(rng);
    spec.mode = StateMode::AS;
    spec.include_agent_id = false;
    auto obs = random_obs(spec, rng);
    auto env_state = random_env_state(spec, rng);
    int agent = static_cast<int>(rng.randint(0, spec.n_agents - 1));
    auto as = build_state(spec, env_state, obs, agent);
    spec.mode = StateMode::FP;
    auto fp = build_state(spec, env_state, obs, agent);
    CHECK(fp.size() == as.size() - spec.fp_overlap_index.size());
    // fp must appear inside as as an ordered subsequence
    size_t j = 0;
    for (double v : as)
      if (j < fp.size() && v == fp[j]) ++j;
    CHECK(j == fp.size());
  }
}

TEST_CASE("IND ignores the env state entirely") {
  StateSpec spec;
  spec.mode = StateMode::IND;
  spec.n_agents = 3;
  spec.obs_dim = 2;
  spec.env_state_dim = 5;
  std::vector<std::vector<double>> obs = {{1, 2}, {3, 4}, {5, 6}};
  auto a = build_state(spec, {9, 9, 9, 9, 9}, obs, 2);
  auto b = build_state(spec, {-1, -1, -1, -1, -1}, obs, 2);
  CHECK(a == b);
  // and only reads the agent's own observation
  obs[0] = {100, 100};
  CHECK(build_state(spec, {9, 9, 9, 9, 9}, obs, 2) == a);
}

TEST_CASE("dead agents get the zero state with their one-hot id") {
  StateSpec spec;
  spec.mode = StateMode::CL;
  spec.n_agents = 3;
  spec.obs_dim = 2;
  spec.include_agent_id = true;
  std::vector<std::vector<double>> obs = {{1, 2}, {3, 4}, {5, 6}};
  auto v = build_state(spec, {}, obs, 1, /*alive=*/false);
  CHECK(v == std::vector<double>{0, 0, 0, 0, 0, 0, 0, 1, 0});
  spec.include_agent_id = false;
  CHECK(dead_state(spec, 1) == std::vector<double>(6, 0.0));
}

TEST_CASE("validation rejects inconsistent specs") {
  StateSpec spec;
  spec.mode = StateMode::EP;
  spec.n_agents = 2;
  spec.obs_dim = 3;
  spec.env_state_dim = 0;
  CHECK_THROWS(spec.validate());  // EP needs a native global state
  spec.mode = StateMode::CL;
  spec.validate();
  spec.mode = StateMode::FP;
  spec.env_state_dim = 4;
  spec.fp_overlap_index = {1, 1};
  CHECK_THROWS(spec.validate());  // duplicates
  spec.fp_overlap_index = {7};
  CHECK_THROWS(spec.validate());  // out of range
  spec.fp_overlap_index = {0, 3};
  spec.validate();

  std::vector<std::vector<double>> obs = {{1, 2, 3}, {4, 5, 6}};
  CHECK_THROWS(build_state(spec, {1, 2}, obs, 0));      // env width mismatch
  CHECK_THROWS(build_state(spec, {1, 2, 3, 4}, obs, 5));  // agent out of range
  std::vector<std::vector<double>> bad_obs = {{1}, {2}};
  spec.mode = StateMode::CL;
  CHECK_THROWS(build_state(spec, {}, bad_obs, 0));      // obs width mismatch
}
