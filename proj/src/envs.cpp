#include "mappo/env.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mappo {

int EnvDescriptor::obs_dim() const {
  for (int d : obs_dims)
    if (d != obs_dims[0])
      throw std::logic_error("obs_dim(): heterogeneous env, use obs_dims");
  return obs_dims[0];
}

int EnvDescriptor::actions() const {
  for (int d : n_actions)
    if (d != n_actions[0])
      throw std::logic_error("actions(): heterogeneous env, use n_actions");
  return n_actions[0];
}

int EnvDescriptor::max_obs_dim() const {
  return *std::max_element(obs_dims.begin(), obs_dims.end());
}

int EnvDescriptor::max_actions() const {
  return *std::max_element(n_actions.begin(), n_actions.end());
}

namespace {

// ---------------------------------------------------------------------------
// shared 2D particle physics (MPE-style)
// ---------------------------------------------------------------------------

constexpr double kDt = 0.1;
constexpr double kDamping = 0.5;
constexpr double kForce = 5.0;
constexpr double kAgentRadius = 0.15;
constexpr double kCollisionPenalty = 1.0;
constexpr double kCoverRadius = 0.2;
constexpr double kSpawnSpread = 0.4;  // spread: agent start offset from its matched landmark
constexpr double kLandmarkSeparation = 0.8;

struct Body {
  double px = 0, py = 0, vx = 0, vy = 0;
};

// action: 0 noop, 1 +x, 2 -x, 3 +y, 4 -y
void apply_move(Body& b, long action) {
  double fx = 0, fy = 0;
  switch (action) {
    case 0: break;
    case 1: fx = kForce; break;
    case 2: fx = -kForce; break;
    case 3: fy = kForce; break;
    case 4: fy = -kForce; break;
    default: throw std::invalid_argument("particle env: bad move action");
  }
  b.vx = b.vx * (1.0 - kDamping) + fx * kDt;
  b.vy = b.vy * (1.0 - kDamping) + fy * kDt;
  b.px += b.vx * kDt;
  b.py += b.vy * kDt;
}

double dist(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

std::vector<std::uint8_t> all_avail(int n) {
  return std::vector<std::uint8_t>(static_cast<size_t>(n), 1);
}

// ---------------------------------------------------------------------------
// Spread: n agents cover n landmarks
// ---------------------------------------------------------------------------

class SpreadEnv final : public Env {
 public:
  SpreadEnv(int n_agents, std::uint64_t seed) : n_(n_agents), rng_(seed) {
    if (n_agents < 1) throw std::invalid_argument("spread: n_agents must be >= 1");
    desc_.name = "spread";
    desc_.n_agents = n_;
    desc_.obs_dims.assign(static_cast<size_t>(n_), 4 + 2 * n_ + 2 * (n_ - 1));
    desc_.env_state_dim = 0;
    desc_.n_actions.assign(static_cast<size_t>(n_), 5);
    desc_.episode_limit = 25;
  }

  const EnvDescriptor& descriptor() const override { return desc_; }
  Rng& rng() override { return rng_; }

  EnvStep reset() override {
    t_ = 0;
    agents_.assign(static_cast<size_t>(n_), Body{});
    lx_.resize(static_cast<size_t>(n_));
    ly_.resize(static_cast<size_t>(n_));
    // landmarks at random positions, re-drawn until pairwise well separated
    for (int l = 0; l < n_; ++l) {
      for (int tries = 0; tries < 200; ++tries) {
        lx_[static_cast<size_t>(l)] = rng_.uniform(-1.0, 1.0);
        ly_[static_cast<size_t>(l)] = rng_.uniform(-1.0, 1.0);
        bool ok = true;
        for (int m = 0; m < l; ++m)
          ok = ok && dist(lx_[static_cast<size_t>(l)], ly_[static_cast<size_t>(l)],
                          lx_[static_cast<size_t>(m)], ly_[static_cast<size_t>(m)]) >=
                         kLandmarkSeparation;
        if (ok) break;
      }
    }
    // Each agent starts in the neighbourhood of a distinct (randomly matched)
    // landmark: which landmark belongs to whom still has to be worked out from
    // observations, but a wrong guess is cheap to correct at this scale.
    std::vector<int> perm(static_cast<size_t>(n_));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng_.engine());
    for (int i = 0; i < n_; ++i) {
      Body& a = agents_[static_cast<size_t>(i)];
      int l = perm[static_cast<size_t>(i)];
      a.px = lx_[static_cast<size_t>(l)] + rng_.uniform(-kSpawnSpread, kSpawnSpread);
      a.py = ly_[static_cast<size_t>(l)] + rng_.uniform(-kSpawnSpread, kSpawnSpread);
      a.vx = a.vy = 0;
    }
    return snapshot(0.0, false, false);
  }

  EnvStep step(const std::vector<long>& actions) override {
    for (int i = 0; i < n_; ++i) apply_move(agents_[static_cast<size_t>(i)], actions[static_cast<size_t>(i)]);
    ++t_;
    double r = step_reward();
    bool done = t_ >= desc_.episode_limit;
    bool win = done && covered();
    return snapshot(r, done, win);
  }

  const std::vector<Body>& agents() const { return agents_; }
  const std::vector<double>& landmarks_x() const { return lx_; }
  const std::vector<double>& landmarks_y() const { return ly_; }
  int n_agents() const { return n_; }

  double step_reward() const {
    double r = 0;
    for (int l = 0; l < n_; ++l) {
      double best = 1e18;
      for (const auto& a : agents_)
        best = std::min(best, dist(a.px, a.py, lx_[static_cast<size_t>(l)], ly_[static_cast<size_t>(l)]));
      r -= best;
    }
    for (int i = 0; i < n_; ++i)
      for (int j = i + 1; j < n_; ++j)
        if (dist(agents_[static_cast<size_t>(i)].px, agents_[static_cast<size_t>(i)].py,
                 agents_[static_cast<size_t>(j)].px, agents_[static_cast<size_t>(j)].py) <
            2 * kAgentRadius)
          r -= kCollisionPenalty;
    return r;
  }

 private:
  bool covered() const {
    for (int l = 0; l < n_; ++l) {
      double best = 1e18;
      for (const auto& a : agents_)
        best = std::min(best, dist(a.px, a.py, lx_[static_cast<size_t>(l)], ly_[static_cast<size_t>(l)]));
      if (best > kCoverRadius) return false;
    }
    return true;
  }

  EnvStep snapshot(double r, bool done, bool win) const {
    EnvStep s;
    s.reward = r;
    s.done = done;
    s.win = win;
    s.alive.assign(static_cast<size_t>(n_), 1);
    for (int i = 0; i < n_; ++i) {
      const Body& a = agents_[static_cast<size_t>(i)];
      std::vector<double> o{a.vx, a.vy, a.px, a.py};
      // landmark offsets sorted nearest-first from this agent's point of view,
      // so "head towards the first landmark slot" is a meaningful local policy
      std::vector<std::pair<double, double>> lms;
      for (int l = 0; l < n_; ++l)
        lms.emplace_back(lx_[static_cast<size_t>(l)] - a.px,
                         ly_[static_cast<size_t>(l)] - a.py);
      std::stable_sort(lms.begin(), lms.end(), [](const auto& p, const auto& q) {
        return std::hypot(p.first, p.second) < std::hypot(q.first, q.second);
      });
      for (const auto& [dx, dy] : lms) {
        o.push_back(dx);
        o.push_back(dy);
      }
      for (int j = 0; j < n_; ++j) {
        if (j == i) continue;
        o.push_back(agents_[static_cast<size_t>(j)].px - a.px);
        o.push_back(agents_[static_cast<size_t>(j)].py - a.py);
      }
      s.obs.push_back(std::move(o));
      s.avail.push_back(all_avail(5));
    }
    return s;
  }

  int n_;
  EnvDescriptor desc_;
  Rng rng_;
  int t_ = 0;
  std::vector<Body> agents_;
  std::vector<double> lx_, ly_;
};

// ---------------------------------------------------------------------------
// Reference: 2 agents, 3 landmarks; each knows only the other's goal.
// Action = move (5) x symbol (3), encoded move * 3 + symbol.
// ---------------------------------------------------------------------------

constexpr int kRefLandmarks = 3;
constexpr int kRefSymbols = 3;

class ReferenceEnv final : public Env {
 public:
  explicit ReferenceEnv(std::uint64_t seed) : rng_(seed) {
    desc_.name = "reference";
    desc_.n_agents = 2;
    // vel(2) pos(2) landmarks(6) other's goal(3) heard symbol(3)
    desc_.obs_dims = {16, 16};
    desc_.n_actions = {5 * kRefSymbols, 5 * kRefSymbols};
    desc_.episode_limit = 25;
  }

  const EnvDescriptor& descriptor() const override { return desc_; }
  Rng& rng() override { return rng_; }

  EnvStep reset() override {
    t_ = 0;
    for (auto& a : agents_) {
      a.px = rng_.uniform(-1.0, 1.0);
      a.py = rng_.uniform(-1.0, 1.0);
      a.vx = a.vy = 0;
    }
    for (int l = 0; l < kRefLandmarks; ++l) {
      lx_[l] = rng_.uniform(-1.0, 1.0);
      ly_[l] = rng_.uniform(-1.0, 1.0);
    }
    goal_[0] = static_cast<int>(rng_.randint(0, kRefLandmarks - 1));
    goal_[1] = static_cast<int>(rng_.randint(0, kRefLandmarks - 1));
    heard_[0] = heard_[1] = -1;
    return snapshot(0.0, false, false);
  }

  EnvStep step(const std::vector<long>& actions) override {
    for (int i = 0; i < 2; ++i) {
      long move = actions[static_cast<size_t>(i)] / kRefSymbols;
      long say = actions[static_cast<size_t>(i)] % kRefSymbols;
      apply_move(agents_[i], move);
      heard_[1 - i] = static_cast<int>(say);  // the other agent hears it
    }
    ++t_;
    double r = -(goal_dist(0) + goal_dist(1)) / 2.0;
    bool done = t_ >= desc_.episode_limit;
    bool win = done && goal_dist(0) < kCoverRadius && goal_dist(1) < kCoverRadius;
    return snapshot(r, done, win);
  }

 private:
  double goal_dist(int i) const {
    return dist(agents_[i].px, agents_[i].py, lx_[goal_[i]], ly_[goal_[i]]);
  }

  EnvStep snapshot(double r, bool done, bool win) const {
    EnvStep s;
    s.reward = r;
    s.done = done;
    s.win = win;
    s.alive = {1, 1};
    for (int i = 0; i < 2; ++i) {
      const Body& a = agents_[i];
      std::vector<double> o{a.vx, a.vy, a.px, a.py};
      for (int l = 0; l < kRefLandmarks; ++l) {
        o.push_back(lx_[l] - a.px);
        o.push_back(ly_[l] - a.py);
      }
      for (int l = 0; l < kRefLandmarks; ++l) o.push_back(goal_[1 - i] == l ? 1.0 : 0.0);
      for (int c = 0; c < kRefSymbols; ++c) o.push_back(heard_[i] == c ? 1.0 : 0.0);
      s.obs.push_back(std::move(o));
      s.avail.push_back(all_avail(5 * kRefSymbols));
    }
    return s;
  }

  EnvDescriptor desc_;
  Rng rng_;
  int t_ = 0;
  Body agents_[2];
  double lx_[kRefLandmarks] = {0}, ly_[kRefLandmarks] = {0};
  int goal_[2] = {0, 0};
  int heard_[2] = {-1, -1};
};

// ---------------------------------------------------------------------------
// Comm (speaker-listener): heterogeneous roles, no parameter sharing.
// ---------------------------------------------------------------------------

constexpr int kCommColors = 3;

class CommEnv final : public Env {
 public:
  explicit CommEnv(std::uint64_t seed) : rng_(seed) {
    desc_.name = "comm";
    desc_.n_agents = 2;
    // speaker: goal color one-hot; listener: vel(2) landmarks(6) heard(3)
    desc_.obs_dims = {kCommColors, 2 + 2 * kCommColors + kCommColors};
    desc_.n_actions = {kCommColors, 5};
    desc_.episode_limit = 25;
    desc_.heterogeneous = true;
  }

  const EnvDescriptor& descriptor() const override { return desc_; }
  Rng& rng() override { return rng_; }

  EnvStep reset() override {
    t_ = 0;
    listener_ = Body{};
    listener_.px = rng_.uniform(-1.0, 1.0);
    listener_.py = rng_.uniform(-1.0, 1.0);
    for (int l = 0; l < kCommColors; ++l) {
      lx_[l] = rng_.uniform(-1.0, 1.0);
      ly_[l] = rng_.uniform(-1.0, 1.0);
    }
    goal_ = static_cast<int>(rng_.randint(0, kCommColors - 1));
    heard_ = -1;
    return snapshot(0.0, false, false);
  }

  EnvStep step(const std::vector<long>& actions) override {
    heard_ = static_cast<int>(actions[0]);
    apply_move(listener_, actions[1]);
    ++t_;
    double d = dist(listener_.px, listener_.py, lx_[goal_], ly_[goal_]);
    bool done = t_ >= desc_.episode_limit;
    return snapshot(-d, done, done && d < kCoverRadius);
  }

 private:
  EnvStep snapshot(double r, bool done, bool win) const {
    EnvStep s;
    s.reward = r;
    s.done = done;
    s.win = win;
    s.alive = {1, 1};
    std::vector<double> sp;
    for (int c = 0; c < kCommColors; ++c) sp.push_back(goal_ == c ? 1.0 : 0.0);
    s.obs.push_back(std::move(sp));
    std::vector<double> li{listener_.vx, listener_.vy};
    for (int l = 0; l < kCommColors; ++l) {
      li.push_back(lx_[l] - listener_.px);
      li.push_back(ly_[l] - listener_.py);
    }
    for (int c = 0; c < kCommColors; ++c) li.push_back(heard_ == c ? 1.0 : 0.0);
    s.obs.push_back(std::move(li));
    s.avail.push_back(all_avail(kCommColors));
    s.avail.push_back(all_avail(5));
    return s;
  }

  EnvDescriptor desc_;
  Rng rng_;
  int t_ = 0;
  Body listener_;
  double lx_[kCommColors] = {0}, ly_[kCommColors] = {0};
  int goal_ = 0;
  int heard_ = -1;
};

// ---------------------------------------------------------------------------
// Turnchain: turn-based cooperative mini card game (rank-only cards). Players
// see everyone's hand but their own; a chain of ranks 1..5 must be played in
// order. Raw rewards are per env step; the rollout collector assigns each
// player the forward-accumulated turn reward.
// ---------------------------------------------------------------------------

constexpr int kRanks = 5;
constexpr int kHandSize = 2;
constexpr int kMaxTokens = 3;
constexpr int kLives = 2;

class TurnchainEnv final : public Env {
 public:
  TurnchainEnv(int n_players, int deck_size, std::uint64_t seed)
      : n_(n_players), deck_size_(deck_size), rng_(seed) {
    if (n_ < 2 || n_ > 4) throw std::invalid_argument("turnchain: n_players must be 2..4");
    if (deck_size_ < 10) throw std::invalid_argument("turnchain: deck_size must be >= 10");
    desc_.name = "turnchain";
    desc_.n_agents = n_;
    // others' hands ((n-1)*2*6) + hint flags(2) + slot flags(2) + chain(6)
    // + tokens + lives + deck remaining
    desc_.obs_dims.assign(static_cast<size_t>(n_), (n_ - 1) * kHandSize * (kRanks + 1) +
                                                       kHandSize * 2 + (kRanks + 1) + 3);
    // full state: every hand + chain + tokens + lives + deck
    desc_.env_state_dim = n_ * kHandSize * (kRanks + 1) + (kRanks + 1) + 3;
    desc_.n_actions.assign(static_cast<size_t>(n_), 5);  // play0 play1 disc0 disc1 hint
    raw_limit_ = 2 * deck_size_ + 2 * n_;
    desc_.episode_limit = (raw_limit_ + n_ - 1) / n_;  // in rounds
    desc_.turn_based = true;
  }

  const EnvDescriptor& descriptor() const override { return desc_; }
  Rng& rng() override { return rng_; }
  int acting_agent() const override { return current_; }

  EnvStep reset() override {
    raw_t_ = 0;
    current_ = 0;
    chain_ = 0;
    tokens_ = kMaxTokens;
    lives_ = kLives;
    deck_.clear();
    // base Hanabi-style rank distribution, extra slots cycle 1..5
    const int base[10] = {1, 1, 1, 2, 2, 3, 3, 4, 4, 5};
    for (int i = 0; i < 10; ++i) deck_.push_back(base[i]);
    for (int i = 10; i < deck_size_; ++i) deck_.push_back(i % kRanks + 1);
    std::shuffle(deck_.begin(), deck_.end(), rng_.engine());
    hand_.assign(static_cast<size_t>(n_), {0, 0});
    hint_.assign(static_cast<size_t>(n_), {0, 0});
    for (int p = 0; p < n_; ++p)
      for (int s = 0; s < kHandSize; ++s) draw(p, s);
    return snapshot(0.0, false, false);
  }

  EnvStep step(const std::vector<long>& actions) override {
    long a = actions[static_cast<size_t>(current_)];
    if (a < 0 || a >= 5) throw std::invalid_argument("turnchain: bad action");
    double r = 0.0;
    auto& hand = hand_[static_cast<size_t>(current_)];
    auto& hint = hint_[static_cast<size_t>(current_)];
    if (a < 2 * kHandSize) {
      int slot = static_cast<int>(a % kHandSize);
      bool is_play = a < kHandSize;
      if (hand[static_cast<size_t>(slot)] != 0) {
        int rank = hand[static_cast<size_t>(slot)];
        if (is_play) {
          if (rank == chain_ + 1) {
            ++chain_;
            r = 1.0;
            clear_all_hints();  // playable-rank marks refer to the old chain
          } else {
            --lives_;
          }
        } else if (tokens_ < kMaxTokens) {
          ++tokens_;
        }
        hand[static_cast<size_t>(slot)] = 0;
        hint[static_cast<size_t>(slot)] = 0;
        draw(current_, slot);
      }
    } else {  // hint: mark playable-rank cards in the next player's hand
      if (tokens_ > 0) {
        --tokens_;
        int target = (current_ + 1) % n_;
        for (int s = 0; s < kHandSize; ++s)
          hint_[static_cast<size_t>(target)][static_cast<size_t>(s)] =
              hand_[static_cast<size_t>(target)][static_cast<size_t>(s)] == chain_ + 1 ? 1 : 0;
      }
    }
    ++raw_t_;
    current_ = (current_ + 1) % n_;
    bool win = chain_ == kRanks;
    bool dead_hands = deck_.empty() && hands_empty();
    bool done = win || lives_ <= 0 || dead_hands || raw_t_ >= raw_limit_;
    return snapshot(r, done, win);
  }

 private:
  void draw(int p, int slot) {
    if (deck_.empty()) return;
    hand_[static_cast<size_t>(p)][static_cast<size_t>(slot)] = deck_.back();
    deck_.pop_back();
    hint_[static_cast<size_t>(p)][static_cast<size_t>(slot)] = 0;
  }

  void clear_all_hints() {
    for (auto& h : hint_) h = {0, 0};
  }

  bool hands_empty() const {
    for (const auto& h : hand_)
      for (int c : h)
        if (c != 0) return false;
    return true;
  }

  static void push_card_onehot(std::vector<double>& v, int rank) {
    for (int r = 0; r <= kRanks; ++r) v.push_back(rank == r ? 1.0 : 0.0);
  }

  EnvStep snapshot(double r, bool done, bool win) const {
    EnvStep s;
    s.reward = r;
    s.done = done;
    s.win = win;
    s.alive.assign(static_cast<size_t>(n_), 1);
    for (int i = 0; i < n_; ++i) {
      std::vector<double> o;
      for (int k = 1; k < n_; ++k) {
        int j = (i + k) % n_;
        for (int slot = 0; slot < kHandSize; ++slot)
          push_card_onehot(o, hand_[static_cast<size_t>(j)][static_cast<size_t>(slot)]);
      }
      for (int slot = 0; slot < kHandSize; ++slot)
        o.push_back(hint_[static_cast<size_t>(i)][static_cast<size_t>(slot)]);
      for (int slot = 0; slot < kHandSize; ++slot)
        o.push_back(hand_[static_cast<size_t>(i)][static_cast<size_t>(slot)] != 0 ? 1.0 : 0.0);
      for (int c = 0; c <= kRanks; ++c) o.push_back(chain_ == c ? 1.0 : 0.0);
      o.push_back(static_cast<double>(tokens_) / kMaxTokens);
      o.push_back(static_cast<double>(lives_) / kLives);
      o.push_back(static_cast<double>(deck_.size()) / deck_size_);
      s.obs.push_back(std::move(o));

      std::vector<std::uint8_t> av(5, 0);
      const auto& hand = hand_[static_cast<size_t>(i)];
      for (int slot = 0; slot < kHandSize; ++slot) {
        if (hand[static_cast<size_t>(slot)] != 0) {
          av[static_cast<size_t>(slot)] = 1;  // play
          if (tokens_ < kMaxTokens) av[static_cast<size_t>(kHandSize + slot)] = 1;  // discard
        }
      }
      if (tokens_ > 0) av[4] = 1;
      if (std::find(av.begin(), av.end(), 1) == av.end()) av[4] = 1;  // pass fallback
      s.avail.push_back(std::move(av));
    }
    s.state.clear();
    for (int p = 0; p < n_; ++p)
      for (int slot = 0; slot < kHandSize; ++slot)
        push_card_onehot(s.state, hand_[static_cast<size_t>(p)][static_cast<size_t>(slot)]);
    for (int c = 0; c <= kRanks; ++c) s.state.push_back(chain_ == c ? 1.0 : 0.0);
    s.state.push_back(static_cast<double>(tokens_) / kMaxTokens);
    s.state.push_back(static_cast<double>(lives_) / kLives);
    s.state.push_back(static_cast<double>(deck_.size()) / deck_size_);
    return s;
  }

  int n_, deck_size_, raw_limit_ = 0;
  EnvDescriptor desc_;
  Rng rng_;
  int raw_t_ = 0, current_ = 0, chain_ = 0, tokens_ = kMaxTokens, lives_ = kLives;
  std::vector<int> deck_;
  std::vector<std::array<int, 2>> hand_;
  std::vector<std::array<int, 2>> hint_;
};

// ---------------------------------------------------------------------------
// Skirmish: gridworld battle vs scripted enemies, with mid-episode deaths and
// per-step available-action masks. The EP global state deliberately omits the
// range / attack-availability features present in local observations.
// ---------------------------------------------------------------------------

constexpr int kGrid = 5;
constexpr int kAllyRange = 2;   // Chebyshev
constexpr int kEnemyRange = 1;
constexpr double kWinBonus = 10.0;

struct Unit {
  int x = 0, y = 0, hp = 0;
  bool alive() const { return hp > 0; }
};

class SkirmishEnv final : public Env {
 public:
  SkirmishEnv(int n_allies, int n_enemies, std::uint64_t seed, int enemy_hp = 3)
      : na_(n_allies), ne_(n_enemies), enemy_hp_(enemy_hp), rng_(seed) {
    if (na_ < 1 || ne_ < 1) throw std::invalid_argument("skirmish: unit counts must be >= 1");
    desc_.name = "skirmish";
    desc_.n_agents = na_;
    desc_.obs_dims.assign(static_cast<size_t>(na_), 3 * na_ + 5 * ne_);
    // positions only: the global state deliberately omits HP, range and
    // availability information, all of which live in the local observations
    desc_.env_state_dim = 2 * (na_ + ne_);
    desc_.n_actions.assign(static_cast<size_t>(na_), 5 + ne_);
    desc_.episode_limit = 25;
    desc_.has_deaths = true;
    // ally positions appear verbatim in every living local observation
    for (int i = 0; i < na_; ++i) {
      desc_.fp_overlap_index.push_back(3 * i);
      desc_.fp_overlap_index.push_back(3 * i + 1);
    }
  }

  const EnvDescriptor& descriptor() const override { return desc_; }
  Rng& rng() override { return rng_; }

  EnvStep reset() override {
    t_ = 0;
    frozen_obs_.assign(static_cast<size_t>(na_), {});
    allies_.assign(static_cast<size_t>(na_), Unit{});
    enemies_.assign(static_cast<size_t>(ne_), Unit{});
    for (auto& u : allies_) {
      u.x = static_cast<int>(rng_.randint(0, 1));
      u.y = static_cast<int>(rng_.randint(0, kGrid - 1));
      u.hp = 3;
    }
    for (auto& u : enemies_) {
      u.x = static_cast<int>(rng_.randint(kGrid - 2, kGrid - 1));
      u.y = static_cast<int>(rng_.randint(0, kGrid - 1));
      u.hp = enemy_hp_;
    }
    return snapshot(0.0, false, false);
  }

  EnvStep step(const std::vector<long>& actions) override {
    double reward = 0.0;
    for (int i = 0; i < na_; ++i) {
      Unit& u = allies_[static_cast<size_t>(i)];
      if (!u.alive()) continue;
      long a = actions[static_cast<size_t>(i)];
      if (a >= 1 && a <= 4) {
        int nx = u.x + (a == 1) - (a == 2);
        int ny = u.y + (a == 3) - (a == 4);
        if (nx >= 0 && nx < kGrid) u.x = nx;
        if (ny >= 0 && ny < kGrid) u.y = ny;
      } else if (a >= 5) {
        int j = static_cast<int>(a - 5);
        if (j < ne_) {
          Unit& e = enemies_[static_cast<size_t>(j)];
          if (e.alive() && cheb(u, e) <= kAllyRange) {
            e.hp -= 1;
            reward += 1.0;
          }
        }
      }
    }
    // scripted enemies: attack the weakest ally in range, else close distance
    for (auto& e : enemies_) {
      if (!e.alive()) continue;
      int target = -1;
      for (int i = 0; i < na_; ++i) {
        const Unit& u = allies_[static_cast<size_t>(i)];
        if (!u.alive() || cheb(e, u) > kEnemyRange) continue;
        if (target < 0 || u.hp < allies_[static_cast<size_t>(target)].hp) target = i;
      }
      if (target >= 0) {
        allies_[static_cast<size_t>(target)].hp -= 1;
      } else {
        int near = -1;
        int best = 1 << 20;
        for (int i = 0; i < na_; ++i) {
          const Unit& u = allies_[static_cast<size_t>(i)];
          if (!u.alive()) continue;
          int d = std::abs(u.x - e.x) + std::abs(u.y - e.y);
          if (d < best) {
            best = d;
            near = i;
          }
        }
        if (near >= 0) {
          const Unit& u = allies_[static_cast<size_t>(near)];
          if (u.x != e.x)
            e.x += u.x > e.x ? 1 : -1;
          else if (u.y != e.y)
            e.y += u.y > e.y ? 1 : -1;
        }
      }
    }
    ++t_;
    bool all_enemies_dead = std::none_of(enemies_.begin(), enemies_.end(),
                                         [](const Unit& u) { return u.alive(); });
    bool all_allies_dead = std::none_of(allies_.begin(), allies_.end(),
                                        [](const Unit& u) { return u.alive(); });
    bool win = all_enemies_dead;
    bool done = win || all_allies_dead || t_ >= desc_.episode_limit;
    if (win) reward += kWinBonus;
    return snapshot(reward, done, win);
  }

  const std::vector<Unit>& allies() const { return allies_; }
  const std::vector<Unit>& enemies() const { return enemies_; }
  int n_allies() const { return na_; }
  int n_enemies() const { return ne_; }

  static int cheb(const Unit& a, const Unit& b) {
    return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
  }

 private:
  EnvStep snapshot(double r, bool done, bool win) {
    EnvStep s;
    s.reward = r;
    s.done = done;
    s.win = win;
    double g = kGrid - 1;
    for (int i = 0; i < na_; ++i) {
      const Unit& me = allies_[static_cast<size_t>(i)];
      s.alive.push_back(me.alive() ? 1 : 0);
      std::vector<double> o;
      std::vector<std::uint8_t> av(static_cast<size_t>(5 + ne_), 0);
      av[0] = 1;  // noop always available
      if (me.alive()) {
        for (const Unit& u : allies_) {
          o.push_back(u.x / g);
          o.push_back(u.y / g);
          o.push_back(u.hp / 3.0);
        }
        for (int j = 0; j < ne_; ++j) {
          const Unit& e = enemies_[static_cast<size_t>(j)];
          bool attackable = e.alive() && cheb(me, e) <= kAllyRange;
          o.push_back((e.x - me.x) / g);
          o.push_back((e.y - me.y) / g);
          o.push_back(e.hp / 3.0);
          o.push_back(e.alive() && cheb(me, e) <= kEnemyRange ? 1.0 : 0.0);
          o.push_back(attackable ? 1.0 : 0.0);
          if (attackable) av[static_cast<size_t>(5 + j)] = 1;
        }
        if (me.x + 1 < kGrid) av[1] = 1;
        if (me.x - 1 >= 0) av[2] = 1;
        if (me.y + 1 < kGrid) av[3] = 1;
        if (me.y - 1 >= 0) av[4] = 1;
        frozen_obs_[static_cast<size_t>(i)] = o;
      } else {
        // a dead unit's sensors freeze: downstream consumers see the stale
        // last-alive observation unless they handle deaths explicitly
        o = frozen_obs_[static_cast<size_t>(i)];
      }
      s.obs.push_back(std::move(o));
      s.avail.push_back(std::move(av));
    }
    for (const Unit& u : allies_) {
      s.state.push_back(u.x / g);
      s.state.push_back(u.y / g);
    }
    for (const Unit& u : enemies_) {
      s.state.push_back(u.x / g);
      s.state.push_back(u.y / g);
    }
    return s;
  }

  int na_, ne_, enemy_hp_;
  EnvDescriptor desc_;
  Rng rng_;
  int t_ = 0;
  std::vector<Unit> allies_, enemies_;
  std::vector<std::vector<double>> frozen_obs_;
};

int parse_int_param(const EnvParams& p, const std::string& key, int fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : std::stoi(it->second);
}

}  // namespace

std::unique_ptr<Env> make_spread_env(int n_agents, std::uint64_t seed) {
  return std::make_unique<SpreadEnv>(n_agents, seed);
}
std::unique_ptr<Env> make_reference_env(std::uint64_t seed) {
  return std::make_unique<ReferenceEnv>(seed);
}
std::unique_ptr<Env> make_comm_env(std::uint64_t seed) {
  return std::make_unique<CommEnv>(seed);
}
std::unique_ptr<Env> make_turnchain_env(int n_players, int deck_size, std::uint64_t seed) {
  return std::make_unique<TurnchainEnv>(n_players, deck_size, seed);
}
std::unique_ptr<Env> make_skirmish_env(int n_allies, int n_enemies, std::uint64_t seed) {
  return std::make_unique<SkirmishEnv>(n_allies, n_enemies, seed);
}

std::unique_ptr<Env> make_env(const std::string& name, const EnvParams& params,
                              std::uint64_t seed) {
  if (name == "spread")
    return make_spread_env(parse_int_param(params, "n_agents", 3), seed);
  if (name == "reference") return make_reference_env(seed);
  if (name == "comm") return make_comm_env(seed);
  if (name == "turnchain")
    return make_turnchain_env(parse_int_param(params, "n_players", 2),
                              parse_int_param(params, "deck_size", 10), seed);
  if (name == "skirmish")
    return std::make_unique<SkirmishEnv>(parse_int_param(params, "n_allies", 3),
                                         parse_int_param(params, "n_enemies", 3), seed,
                                         parse_int_param(params, "enemy_hp", 3));
  throw std::invalid_argument("unknown environment: " + name);
}

std::vector<std::string> registered_env_names() {
  return {"spread", "reference", "comm", "turnchain", "skirmish"};
}

namespace scripted {

std::vector<long> spread_greedy_actions(const Env& env) {
  const auto* sp = dynamic_cast<const SpreadEnv*>(&env);
  if (!sp) throw std::invalid_argument("spread_greedy_actions: not a spread env");
  int n = sp->n_agents();
  const auto& agents = sp->agents();
  const auto& lx = sp->landmarks_x();
  const auto& ly = sp->landmarks_y();

  // optimal assignment by brute-force permutation (n is desk-scale)
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best_perm = perm;
  double best_cost = 1e18;
  do {
    double c = 0;
    for (int i = 0; i < n; ++i)
      c += dist(agents[static_cast<size_t>(i)].px, agents[static_cast<size_t>(i)].py,
                lx[static_cast<size_t>(perm[static_cast<size_t>(i)])],
                ly[static_cast<size_t>(perm[static_cast<size_t>(i)])]);
    if (c < best_cost) {
      best_cost = c;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  // 1-step lookahead through the real dynamics
  std::vector<long> actions(static_cast<size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    int l = best_perm[static_cast<size_t>(i)];
    double best_d = 1e18;
    long best_a = 0;
    for (long a = 0; a < 5; ++a) {
      Body b = agents[static_cast<size_t>(i)];
      apply_move(b, a);
      double d = dist(b.px, b.py, lx[static_cast<size_t>(l)], ly[static_cast<size_t>(l)]);
      if (d < best_d) {
        best_d = d;
        best_a = a;
      }
    }
    actions[static_cast<size_t>(i)] = best_a;
  }
  return actions;
}

std::vector<long> skirmish_focus_fire_actions(const Env& env) {
  const auto* sk = dynamic_cast<const SkirmishEnv*>(&env);
  if (!sk) throw std::invalid_argument("skirmish_focus_fire_actions: not a skirmish env");
  const auto& allies = sk->allies();
  const auto& enemies = sk->enemies();
  std::vector<long> actions(allies.size(), 0);
  for (size_t i = 0; i < allies.size(); ++i) {
    const Unit& u = allies[i];
    if (!u.alive()) continue;
    int target = -1;
    for (size_t j = 0; j < enemies.size(); ++j) {
      const Unit& e = enemies[j];
      if (!e.alive() || SkirmishEnv::cheb(u, e) > kAllyRange) continue;
      if (target < 0 || e.hp < enemies[static_cast<size_t>(target)].hp)
        target = static_cast<int>(j);
    }
    if (target >= 0) {
      actions[i] = 5 + target;
      continue;
    }
    // close on the nearest living enemy
    int near = -1, best = 1 << 20;
    for (size_t j = 0; j < enemies.size(); ++j) {
      const Unit& e = enemies[j];
      if (!e.alive()) continue;
      int d = std::abs(e.x - u.x) + std::abs(e.y - u.y);
      if (d < best) {
        best = d;
        near = static_cast<int>(j);
      }
    }
    if (near >= 0) {
      const Unit& e = enemies[static_cast<size_t>(near)];
      if (e.x > u.x)
        actions[i] = 1;
      else if (e.x < u.x)
        actions[i] = 2;
      else if (e.y > u.y)
        actions[i] = 3;
      else if (e.y < u.y)
        actions[i] = 4;
    }
  }
  return actions;
}

std::vector<long> random_actions(const EnvStep& s, Rng& rng) {
  std::vector<long> out(s.avail.size(), 0);
  for (size_t i = 0; i < s.avail.size(); ++i) {
    std::vector<long> options;
    for (size_t a = 0; a < s.avail[i].size(); ++a)
      if (s.avail[i][a]) options.push_back(static_cast<long>(a));
    out[i] = options[static_cast<size_t>(rng.randint(0, static_cast<long>(options.size()) - 1))];
  }
  return out;
}

}  // namespace scripted
}  // namespace mappo
