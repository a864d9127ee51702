#include "mappo/algo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace mappo {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (num_envs < 1) fail("num_envs must be >= 1");
  if (buffer_length < 0) fail("buffer_length must be >= 0");
  if (total_env_steps < 1) fail("total_env_steps must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must be in [0,1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must be in [0,1]");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) fail("clip_epsilon must be in (0,1)");
  if (ppo_epochs < 1) fail("ppo_epochs must be >= 1");
  if (num_minibatches < 1) fail("num_minibatches must be >= 1");
  if (entropy_coef < 0.0) fail("entropy_coef must be >= 0");
  if (lr <= 0.0) fail("lr must be > 0");
  if (critic_lr < 0.0) fail("critic_lr must be >= 0");
  if (optimizer_eps <= 0.0) fail("optimizer_eps must be > 0");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (max_grad_norm <= 0.0) fail("max_grad_norm must be > 0");
  if (chunk_length < 1) fail("chunk_length must be >= 1");
  if (huber_delta <= 0.0) fail("huber_delta must be > 0");
  if (stacked_frames < 1) fail("stacked_frames must be >= 1");
  if (hidden_dim < 1) fail("hidden_dim must be >= 1");
  if (num_fc < 1) fail("num_fc must be >= 1");
  if (num_fc_after < 0) fail("num_fc_after must be >= 0");
  if (eval_interval < 0) fail("eval_interval must be >= 0");
  if (eval_episodes < 1) fail("eval_episodes must be >= 1");
  if (checkpoint_interval < 0) fail("checkpoint_interval must be >= 0");
  if (recurrent && stacked_frames > 1)
    fail("stacked_frames > 1 is for the non-recurrent variant");
}

const std::vector<std::string>& IterMetrics::columns() {
  static const std::vector<std::string> cols = {
      "step",          "iter",        "mean_ep_reward", "win_rate",
      "policy_loss",   "value_loss",  "entropy",        "clip_frac",
      "grad_norm_actor", "grad_norm_critic", "value_mean", "value_std",
      "seconds"};
  return cols;
}

std::string IterMetrics::csv_row() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%ld,%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.6g",
                step, iter, mean_ep_reward, win_rate, policy_loss, value_loss, entropy,
                clip_frac, grad_norm_actor, grad_norm_critic, value_mean, value_std,
                seconds);
  return buf;
}

// -- losses ------------------------------------------------------------------

PolicyLossResult policy_loss(const Tensor& new_logp, const Tensor& old_logp,
                             const Tensor& advantages, const Tensor& entropy,
                             const Tensor& weight, double total_weight,
                             double clip_epsilon, double entropy_coef) {
  Tensor ratio = vexp(sub(new_logp, old_logp));
  Tensor s1 = mul(ratio, advantages);
  Tensor s2 = mul(clamp_scalar(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon), advantages);
  Tensor surr = mul(minimum(s1, s2), weight);
  Tensor ent = mul(entropy, weight);
  Tensor loss = add(scale(sum(surr), -1.0 / total_weight),
                    scale(sum(ent), -entropy_coef / total_weight));
  double clipped = 0.0;
  auto rd = ratio.data();
  auto wd = weight.data();
  for (long i = 0; i < ratio.size(); ++i)
    if (wd[static_cast<size_t>(i)] > 0.0 &&
        std::abs(rd[static_cast<size_t>(i)] - 1.0) > clip_epsilon)
      clipped += wd[static_cast<size_t>(i)];
  return {loss, clipped / total_weight};
}

Tensor value_loss(const Tensor& new_values, const Tensor& old_values,
                  const Tensor& returns, const Tensor& weight, double total_weight,
                  double clip_epsilon, ValueLossKind kind, double huber_delta) {
  Tensor clipped = clamp(new_values, add_scalar(old_values, -clip_epsilon),
                         add_scalar(old_values, clip_epsilon));
  Tensor e1 = sub(new_values, returns);
  Tensor e2 = sub(clipped, returns);
  Tensor l1, l2;
  if (kind == ValueLossKind::Huber) {
    l1 = huber(e1, huber_delta);
    l2 = huber(e2, huber_delta);
  } else {
    l1 = mul(e1, e1);
    l2 = mul(e2, e2);
  }
  Tensor worst = mul(maximum(l1, l2), weight);
  return scale(sum(worst), 1.0 / total_weight);
}

// -- trainer construction ----------------------------------------------------

namespace {

// front-pads with zero frames until k frames have been seen
std::vector<double> push_frame(std::deque<std::vector<double>>& q, int k,
                               std::vector<double> frame) {
  const size_t w = frame.size();
  q.push_back(std::move(frame));
  while (static_cast<int>(q.size()) > k) q.pop_front();
  if (k == 1) return q.back();
  std::vector<double> out(static_cast<size_t>(k) * w, 0.0);
  size_t off = (static_cast<size_t>(k) - q.size()) * w;
  for (const auto& f : q) {
    std::copy(f.begin(), f.end(), out.begin() + static_cast<long>(off));
    off += w;
  }
  return out;
}

}  // namespace

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  master_seed_ = cfg_.seed;
  SeedBundle seeds = SeedBundle::from_master(master_seed_);

  std::uint64_t es = seeds.env_seed;
  for (int e = 0; e < cfg_.num_envs; ++e)
    envs_.push_back(make_env(cfg_.env_name, cfg_.env_params, splitmix64(es)));
  desc_ = envs_[0]->descriptor();
  T_ = cfg_.buffer_length > 0 ? cfg_.buffer_length : desc_.episode_limit;

  if (desc_.heterogeneous &&
      cfg_.state_mode != StateMode::IND && cfg_.state_mode != StateMode::CL)
    throw std::invalid_argument(
        "config: env '" + desc_.name + "' has per-agent obs widths; state_mode must be "
        "IND or CL");

  if (!desc_.heterogeneous) {
    sspec_.mode = cfg_.state_mode;
    sspec_.include_agent_id = cfg_.include_agent_id;
    sspec_.n_agents = desc_.n_agents;
    sspec_.obs_dim = desc_.obs_dim();
    sspec_.env_state_dim = desc_.env_state_dim;
    sspec_.fp_overlap_index = desc_.fp_overlap_index;
    sspec_.validate();
  }

  bool share = cfg_.share_policy == SharePolicy::Shared ||
               (cfg_.share_policy == SharePolicy::Auto && !desc_.heterogeneous);
  if (share && desc_.heterogeneous)
    throw std::invalid_argument("config: cannot share parameters across agents with "
                                "different interfaces");

  agent_group_.resize(static_cast<size_t>(desc_.n_agents));
  std::vector<std::vector<int>> members;
  if (share) {
    members.emplace_back();
    for (int a = 0; a < desc_.n_agents; ++a) {
      members[0].push_back(a);
      agent_group_[static_cast<size_t>(a)] = 0;
    }
  } else {
    for (int a = 0; a < desc_.n_agents; ++a) {
      members.push_back({a});
      agent_group_[static_cast<size_t>(a)] = a;
    }
  }

  Rng init_rng(seeds.init_seed);
  double clr = cfg_.critic_lr > 0.0 ? cfg_.critic_lr : cfg_.lr;
  for (const auto& agents : members) {
    int a0 = agents[0];
    NetConfig ac;
    ac.input_dim = actor_input_dim(a0);
    ac.output_dim = desc_.n_actions[static_cast<size_t>(a0)];
    ac.hidden_dim = cfg_.hidden_dim;
    ac.num_fc = cfg_.num_fc;
    ac.num_fc_after = cfg_.num_fc_after;
    ac.recurrent = cfg_.recurrent;
    ac.feature_norm = cfg_.use_feature_norm;
    ac.act = cfg_.activation;
    ac.output_gain = cfg_.gain;
    NetConfig cc = ac;
    cc.input_dim = critic_input_dim(a0);
    cc.output_dim = 1;
    cc.output_gain = 1.0;
    PolicyGroup g;
    g.agents = agents;
    g.actor = Net(ac, init_rng);
    g.critic = Net(cc, init_rng);
    g.opt_actor = Adam(g.actor.params(), cfg_.lr, cfg_.optimizer_eps, cfg_.weight_decay);
    g.opt_critic = Adam(g.critic.params(), clr, cfg_.optimizer_eps, cfg_.weight_decay);
    groups_.push_back(std::move(g));
  }

  sample_rng_ = Rng(seeds.sample_seed);
  std::uint64_t ev = seeds.sample_seed ^ 0x5851f42d4c957f2dULL;
  eval_rng_ = Rng(splitmix64(ev));

  cur_.resize(static_cast<size_t>(cfg_.num_envs));
  ep_ret_.assign(static_cast<size_t>(cfg_.num_envs), 0.0);
  h_actor_.assign(static_cast<size_t>(desc_.n_agents),
                  std::vector<double>(static_cast<size_t>(cfg_.num_envs) * cfg_.hidden_dim, 0.0));
  h_critic_ = h_actor_;
  obs_stack_.assign(static_cast<size_t>(desc_.n_agents),
                    std::vector<std::deque<std::vector<double>>>(
                        static_cast<size_t>(cfg_.num_envs)));
  state_stack_ = obs_stack_;
}

int Trainer::actor_input_dim(int agent) const {
  return desc_.obs_dims[static_cast<size_t>(agent)] * cfg_.stacked_frames;
}

int Trainer::critic_input_dim(int agent) const {
  int base;
  if (!desc_.heterogeneous) {
    base = sspec_.width();
  } else {
    int idw = cfg_.include_agent_id ? desc_.n_agents : 0;
    if (cfg_.state_mode == StateMode::IND) {
      base = desc_.obs_dims[static_cast<size_t>(agent)] + idw;
    } else {
      int s = 0;
      for (int d : desc_.obs_dims) s += d;
      base = s + idw;
    }
  }
  return base * cfg_.stacked_frames;
}

std::vector<double> Trainer::critic_input(const EnvStep& s, int agent) const {
  bool dead = s.alive[static_cast<size_t>(agent)] == 0;
  if (!desc_.heterogeneous) {
    if (dead && cfg_.death_mode == DeathMode::MaskNoId)
      return std::vector<double>(static_cast<size_t>(sspec_.width()), 0.0);
    bool alive_in =
        !(dead && cfg_.death_mode == DeathMode::Mask);  // Keep/Drop see the real state
    return build_state(sspec_, s.state, s.obs, agent, alive_in);
  }
  std::vector<double> out;
  if (cfg_.state_mode == StateMode::IND) {
    out = s.obs[static_cast<size_t>(agent)];
  } else {
    for (const auto& o : s.obs) out.insert(out.end(), o.begin(), o.end());
  }
  if (cfg_.include_agent_id) {
    std::vector<double> id(static_cast<size_t>(desc_.n_agents), 0.0);
    id[static_cast<size_t>(agent)] = 1.0;
    out.insert(out.end(), id.begin(), id.end());
  }
  return out;
}

void Trainer::reset_env(int e) {
  cur_[static_cast<size_t>(e)] = envs_[static_cast<size_t>(e)]->reset();
  ep_ret_[static_cast<size_t>(e)] = 0.0;
  const int H = cfg_.hidden_dim;
  for (int a = 0; a < desc_.n_agents; ++a) {
    std::fill_n(h_actor_[static_cast<size_t>(a)].begin() + static_cast<long>(e) * H, H, 0.0);
    std::fill_n(h_critic_[static_cast<size_t>(a)].begin() + static_cast<long>(e) * H, H, 0.0);
    obs_stack_[static_cast<size_t>(a)][static_cast<size_t>(e)].clear();
    state_stack_[static_cast<size_t>(a)][static_cast<size_t>(e)].clear();
  }
}

// -- batched single-step forwards --------------------------------------------

Trainer::ActOut Trainer::act_rows(const PolicyGroup& g, const Rows& rows,
                                  const std::vector<std::vector<double>>& inputs,
                                  const std::vector<const std::vector<std::uint8_t>*>& avails,
                                  bool greedy, Rng& rng,
                                  std::vector<std::vector<double>>& h) const {
  const long B = static_cast<long>(rows.agent.size());
  const long in = static_cast<long>(inputs[0].size());
  const long A = g.actor.config().output_dim;
  const int H = cfg_.hidden_dim;
  std::vector<double> xd(static_cast<size_t>(B * in));
  std::vector<double> hd(static_cast<size_t>(B) * H);
  std::vector<double> md(static_cast<size_t>(B * A));
  for (long i = 0; i < B; ++i) {
    std::copy(inputs[static_cast<size_t>(i)].begin(), inputs[static_cast<size_t>(i)].end(),
              xd.begin() + i * in);
    const auto& hrow = h[static_cast<size_t>(rows.agent[static_cast<size_t>(i)])];
    std::copy_n(hrow.begin() + static_cast<long>(rows.env[static_cast<size_t>(i)]) * H, H,
                hd.begin() + i * H);
    const auto& av = *avails[static_cast<size_t>(i)];
    for (long j = 0; j < A; ++j) md[static_cast<size_t>(i * A + j)] = av[static_cast<size_t>(j)];
  }
  Tensor x = Tensor::from_data({B, in}, std::move(xd));
  GruState hs{Tensor::from_data({B, H}, std::move(hd))};
  auto [logits, hnew] = g.actor.step(x, hs);
  Tensor mask = Tensor::from_data({B, A}, std::move(md));
  Categorical dist = Categorical::from_logits(logits, mask);
  ActOut out;
  out.actions = greedy ? dist.argmax() : dist.sample(rng);
  Tensor lp = dist.log_prob(out.actions);
  out.logps.assign(lp.data().begin(), lp.data().end());
  if (g.actor.recurrent()) {
    auto hn = hnew.hidden.data();
    for (long i = 0; i < B; ++i)
      std::copy_n(hn.begin() + i * H, H,
                  h[static_cast<size_t>(rows.agent[static_cast<size_t>(i)])].begin() +
                      static_cast<long>(rows.env[static_cast<size_t>(i)]) * H);
  }
  return out;
}

std::vector<double> Trainer::value_rows(const PolicyGroup& g, const Rows& rows,
                                        const std::vector<std::vector<double>>& inputs,
                                        std::vector<std::vector<double>>& h) const {
  const long B = static_cast<long>(rows.agent.size());
  const long in = static_cast<long>(inputs[0].size());
  const int H = cfg_.hidden_dim;
  std::vector<double> xd(static_cast<size_t>(B * in));
  std::vector<double> hd(static_cast<size_t>(B) * H);
  for (long i = 0; i < B; ++i) {
    std::copy(inputs[static_cast<size_t>(i)].begin(), inputs[static_cast<size_t>(i)].end(),
              xd.begin() + i * in);
    const auto& hrow = h[static_cast<size_t>(rows.agent[static_cast<size_t>(i)])];
    std::copy_n(hrow.begin() + static_cast<long>(rows.env[static_cast<size_t>(i)]) * H, H,
                hd.begin() + i * H);
  }
  Tensor x = Tensor::from_data({B, in}, std::move(xd));
  GruState hs{Tensor::from_data({B, H}, std::move(hd))};
  auto [v, hnew] = g.critic.step(x, hs);
  if (g.critic.recurrent()) {
    auto hn = hnew.hidden.data();
    for (long i = 0; i < B; ++i)
      std::copy_n(hn.begin() + i * H, H,
                  h[static_cast<size_t>(rows.agent[static_cast<size_t>(i)])].begin() +
                      static_cast<long>(rows.env[static_cast<size_t>(i)]) * H);
  }
  return std::vector<double>(v.data().begin(), v.data().end());
}

// -- collection --------------------------------------------------------------

void Trainer::collect_simultaneous(TrajectoryBatch& batch) {
  const int E = cfg_.num_envs, n = desc_.n_agents, H = cfg_.hidden_dim;
  batch.T = T_;
  batch.E = E;
  batch.n_agents = n;
  batch.hidden_dim = H;
  batch.obs_dims.clear();
  batch.state_dims.clear();
  batch.n_actions = desc_.n_actions;
  for (int a = 0; a < n; ++a) {
    batch.obs_dims.push_back(actor_input_dim(a));
    batch.state_dims.push_back(critic_input_dim(a));
  }
  batch.allocate();

  for (int e = 0; e < E; ++e) reset_env(e);
  NoGradGuard ng;

  for (int t = 0; t <= T_; ++t) {
    const bool record = t < T_;
    // build stacked inputs once per (agent, env)
    std::vector<std::vector<std::vector<double>>> a_in(static_cast<size_t>(n)),
        v_in(static_cast<size_t>(n));
    for (int a = 0; a < n; ++a) {
      a_in[static_cast<size_t>(a)].resize(static_cast<size_t>(E));
      v_in[static_cast<size_t>(a)].resize(static_cast<size_t>(E));
      for (int e = 0; e < E; ++e) {
        const EnvStep& s = cur_[static_cast<size_t>(e)];
        a_in[static_cast<size_t>(a)][static_cast<size_t>(e)] = push_frame(
            obs_stack_[static_cast<size_t>(a)][static_cast<size_t>(e)],
            cfg_.stacked_frames, s.obs[static_cast<size_t>(a)]);
        v_in[static_cast<size_t>(a)][static_cast<size_t>(e)] = push_frame(
            state_stack_[static_cast<size_t>(a)][static_cast<size_t>(e)],
            cfg_.stacked_frames, critic_input(s, a));
      }
    }
    std::vector<std::vector<long>> acts(static_cast<size_t>(E),
                                        std::vector<long>(static_cast<size_t>(n), 0));
    for (size_t gi = 0; gi < groups_.size(); ++gi) {
      PolicyGroup& g = groups_[gi];
      Rows rows;
      std::vector<std::vector<double>> ain, vin;
      std::vector<const std::vector<std::uint8_t>*> avs;
      for (int a : g.agents)
        for (int e = 0; e < E; ++e) {
          rows.agent.push_back(a);
          rows.env.push_back(e);
          ain.push_back(a_in[static_cast<size_t>(a)][static_cast<size_t>(e)]);
          vin.push_back(v_in[static_cast<size_t>(a)][static_cast<size_t>(e)]);
          avs.push_back(&cur_[static_cast<size_t>(e)].avail[static_cast<size_t>(a)]);
        }
      // snapshot incoming recurrent state before the forwards overwrite it
      std::vector<std::vector<double>> h_a_in, h_c_in;
      if (record) {
        for (size_t i = 0; i < rows.agent.size(); ++i) {
          int a = rows.agent[i], e = rows.env[i];
          h_a_in.emplace_back(
              h_actor_[static_cast<size_t>(a)].begin() + static_cast<long>(e) * H,
              h_actor_[static_cast<size_t>(a)].begin() + static_cast<long>(e + 1) * H);
          h_c_in.emplace_back(
              h_critic_[static_cast<size_t>(a)].begin() + static_cast<long>(e) * H,
              h_critic_[static_cast<size_t>(a)].begin() + static_cast<long>(e + 1) * H);
        }
      }
      ActOut ao = act_rows(g, rows, ain, avs, false, sample_rng_, h_actor_);
      std::vector<double> vals = value_rows(g, rows, vin, h_critic_);
      for (size_t i = 0; i < rows.agent.size(); ++i) {
        int a = rows.agent[i], e = rows.env[i];
        if (!record) {
          batch.bootstrap_value[static_cast<size_t>(a)][static_cast<size_t>(e)] = vals[i];
          continue;
        }
        long idx = batch.idx(t, e);
        const auto& oi = ain[i];
        std::copy(oi.begin(), oi.end(),
                  batch.obs[static_cast<size_t>(a)].begin() +
                      idx * batch.obs_dims[static_cast<size_t>(a)]);
        const auto& vi = vin[i];
        std::copy(vi.begin(), vi.end(),
                  batch.value_state[static_cast<size_t>(a)].begin() +
                      idx * batch.state_dims[static_cast<size_t>(a)]);
        std::copy(h_a_in[i].begin(), h_a_in[i].end(),
                  batch.actor_h[static_cast<size_t>(a)].begin() + idx * H);
        std::copy(h_c_in[i].begin(), h_c_in[i].end(),
                  batch.critic_h[static_cast<size_t>(a)].begin() + idx * H);
        batch.action[static_cast<size_t>(a)][static_cast<size_t>(idx)] = ao.actions[i];
        batch.logp[static_cast<size_t>(a)][static_cast<size_t>(idx)] = ao.logps[i];
        batch.value[static_cast<size_t>(a)][static_cast<size_t>(idx)] = vals[i];
        batch.alive[static_cast<size_t>(a)][static_cast<size_t>(idx)] =
            cur_[static_cast<size_t>(e)].alive[static_cast<size_t>(a)];
        const auto& av = cur_[static_cast<size_t>(e)].avail[static_cast<size_t>(a)];
        std::copy(av.begin(), av.end(),
                  batch.avail[static_cast<size_t>(a)].begin() +
                      idx * batch.n_actions[static_cast<size_t>(a)]);
        acts[static_cast<size_t>(e)][static_cast<size_t>(a)] = ao.actions[i];
      }
    }
    if (!record) break;
    for (int e = 0; e < E; ++e) {
      EnvStep nxt = envs_[static_cast<size_t>(e)]->step(acts[static_cast<size_t>(e)]);
      env_steps_ += 1;
      ep_ret_[static_cast<size_t>(e)] += nxt.reward;
      long idx = batch.idx(t, e);
      for (int a = 0; a < n; ++a) {
        batch.reward[static_cast<size_t>(a)][static_cast<size_t>(idx)] = nxt.reward;
        batch.done[static_cast<size_t>(a)][static_cast<size_t>(idx)] = nxt.done ? 1 : 0;
        batch.terminal[static_cast<size_t>(a)][static_cast<size_t>(idx)] = nxt.done ? 1 : 0;
      }
      if (nxt.done) {
        ep_reward_accum_ += ep_ret_[static_cast<size_t>(e)];
        ep_count_ += 1;
        if (nxt.win) win_count_ += 1;
        reset_env(e);
      } else {
        cur_[static_cast<size_t>(e)] = std::move(nxt);
      }
    }
  }
}

void Trainer::collect_turn_based(TrajectoryBatch& batch) {
  const int E = cfg_.num_envs, n = desc_.n_agents, H = cfg_.hidden_dim;
  batch.T = T_;
  batch.E = E;
  batch.n_agents = n;
  batch.hidden_dim = H;
  batch.obs_dims.clear();
  batch.state_dims.clear();
  batch.n_actions = desc_.n_actions;
  for (int a = 0; a < n; ++a) {
    batch.obs_dims.push_back(actor_input_dim(a));
    batch.state_dims.push_back(critic_input_dim(a));
  }
  batch.allocate();

  struct RawStep {
    double r;
    bool ends;
  };
  std::vector<std::vector<RawStep>> raw(static_cast<size_t>(E));
  // raw index backing each recorded slot, -1 for padding
  std::vector<std::vector<long>> slot_raw(
      static_cast<size_t>(n),
      std::vector<long>(static_cast<size_t>(T_) * E, -1));
  std::vector<std::uint8_t> active(static_cast<size_t>(E), 1);

  for (int e = 0; e < E; ++e) reset_env(e);
  NoGradGuard ng;

  for (int t = 0; t <= T_; ++t) {
    const bool record = t < T_;
    for (int p = 0; p < n; ++p) {
      PolicyGroup& g = groups_[static_cast<size_t>(group_of(p))];
      Rows rows;
      std::vector<std::vector<double>> ain, vin;
      std::vector<const std::vector<std::uint8_t>*> avs;
      std::vector<std::vector<double>> h_a_in, h_c_in;
      for (int e = 0; e < E; ++e) {
        if (!active[static_cast<size_t>(e)]) continue;
        const EnvStep& s = cur_[static_cast<size_t>(e)];
        rows.agent.push_back(p);
        rows.env.push_back(e);
        ain.push_back(push_frame(obs_stack_[static_cast<size_t>(p)][static_cast<size_t>(e)],
                                 cfg_.stacked_frames, s.obs[static_cast<size_t>(p)]));
        vin.push_back(push_frame(state_stack_[static_cast<size_t>(p)][static_cast<size_t>(e)],
                                 cfg_.stacked_frames, critic_input(s, p)));
        avs.push_back(&s.avail[static_cast<size_t>(p)]);
        h_a_in.emplace_back(
            h_actor_[static_cast<size_t>(p)].begin() + static_cast<long>(e) * H,
            h_actor_[static_cast<size_t>(p)].begin() + static_cast<long>(e + 1) * H);
        h_c_in.emplace_back(
            h_critic_[static_cast<size_t>(p)].begin() + static_cast<long>(e) * H,
            h_critic_[static_cast<size_t>(p)].begin() + static_cast<long>(e + 1) * H);
      }
      if (rows.agent.empty()) continue;
      ActOut ao = act_rows(g, rows, ain, avs, false, sample_rng_, h_actor_);
      std::vector<double> vals = value_rows(g, rows, vin, h_critic_);
      for (size_t i = 0; i < rows.agent.size(); ++i) {
        int e = rows.env[i];
        if (record) {
          long idx = batch.idx(t, e);
          std::copy(ain[i].begin(), ain[i].end(),
                    batch.obs[static_cast<size_t>(p)].begin() +
                        idx * batch.obs_dims[static_cast<size_t>(p)]);
          std::copy(vin[i].begin(), vin[i].end(),
                    batch.value_state[static_cast<size_t>(p)].begin() +
                        idx * batch.state_dims[static_cast<size_t>(p)]);
          std::copy(h_a_in[i].begin(), h_a_in[i].end(),
                    batch.actor_h[static_cast<size_t>(p)].begin() + idx * H);
          std::copy(h_c_in[i].begin(), h_c_in[i].end(),
                    batch.critic_h[static_cast<size_t>(p)].begin() + idx * H);
          batch.action[static_cast<size_t>(p)][static_cast<size_t>(idx)] = ao.actions[i];
          batch.logp[static_cast<size_t>(p)][static_cast<size_t>(idx)] = ao.logps[i];
          batch.value[static_cast<size_t>(p)][static_cast<size_t>(idx)] = vals[i];
          batch.alive[static_cast<size_t>(p)][static_cast<size_t>(idx)] = 1;
          const auto& av = *avs[i];
          std::copy(av.begin(), av.end(),
                    batch.avail[static_cast<size_t>(p)].begin() +
                        idx * batch.n_actions[static_cast<size_t>(p)]);
          slot_raw[static_cast<size_t>(p)][static_cast<size_t>(idx)] =
              static_cast<long>(raw[static_cast<size_t>(e)].size());
        } else {
          batch.bootstrap_value[static_cast<size_t>(p)][static_cast<size_t>(e)] = vals[i];
        }
        std::vector<long> acts(static_cast<size_t>(n), 0);
        acts[static_cast<size_t>(p)] = ao.actions[i];
        EnvStep nxt = envs_[static_cast<size_t>(e)]->step(acts);
        env_steps_ += 1;
        ep_ret_[static_cast<size_t>(e)] += nxt.reward;
        raw[static_cast<size_t>(e)].push_back({nxt.reward, nxt.done});
        if (nxt.done) {
          ep_reward_accum_ += ep_ret_[static_cast<size_t>(e)];
          ep_count_ += 1;
          if (nxt.win) win_count_ += 1;
          active[static_cast<size_t>(e)] = 0;
        } else {
          cur_[static_cast<size_t>(e)] = std::move(nxt);
        }
      }
    }
    // pad the rest of terminated rounds, then start fresh episodes
    for (int e = 0; e < E; ++e) {
      if (active[static_cast<size_t>(e)]) continue;
      if (record) {
        long idx = batch.idx(t, e);
        for (int a = 0; a < n; ++a) {
          if (slot_raw[static_cast<size_t>(a)][static_cast<size_t>(idx)] >= 0) continue;
          // agent never acted this round: loss-masked filler slot
          batch.alive[static_cast<size_t>(a)][static_cast<size_t>(idx)] = 0;
          batch.done[static_cast<size_t>(a)][static_cast<size_t>(idx)] = 1;
          batch.terminal[static_cast<size_t>(a)][static_cast<size_t>(idx)] = 1;
          std::fill_n(batch.avail[static_cast<size_t>(a)].begin() +
                          idx * batch.n_actions[static_cast<size_t>(a)],
                      batch.n_actions[static_cast<size_t>(a)],
                      static_cast<std::uint8_t>(1));
        }
      }
      reset_env(e);
      active[static_cast<size_t>(e)] = 1;
    }
  }

  // turn rewards: everything until the agent would act again, cut at episode end
  for (int a = 0; a < n; ++a)
    for (int t = 0; t < T_; ++t)
      for (int e = 0; e < E; ++e) {
        long idx = batch.idx(t, e);
        long k = slot_raw[static_cast<size_t>(a)][static_cast<size_t>(idx)];
        if (k < 0) continue;
        const auto& rs = raw[static_cast<size_t>(e)];
        double R = 0.0;
        bool end = false;
        for (long j = k; j < k + n && j < static_cast<long>(rs.size()); ++j) {
          R += rs[static_cast<size_t>(j)].r;
          if (rs[static_cast<size_t>(j)].ends) {
            end = true;
            break;
          }
        }
        batch.reward[static_cast<size_t>(a)][static_cast<size_t>(idx)] = R;
        batch.done[static_cast<size_t>(a)][static_cast<size_t>(idx)] = end ? 1 : 0;
        batch.terminal[static_cast<size_t>(a)][static_cast<size_t>(idx)] = end ? 1 : 0;
      }
}

void Trainer::finalize_rewards(TrajectoryBatch& batch) {
  if (!cfg_.use_reward_norm) return;
  std::vector<double> all;
  all.reserve(batch.reward.size() * batch.reward[0].size());
  for (const auto& r : batch.reward) all.insert(all.end(), r.begin(), r.end());
  reward_moments_.update(all);
  double sd = reward_moments_.stddev();
  if (sd < 1e-8) return;
  for (auto& r : batch.reward)
    for (double& x : r) x /= sd;
}

// -- updates -----------------------------------------------------------------

void Trainer::update_minibatch(PolicyGroup& g, const TrajectoryBatch& batch,
                               const AdvantageSet& adv, const std::vector<Chunk>& chunks,
                               UpdateStats& stats) {
  const long B = static_cast<long>(chunks.size());
  if (B == 0) return;
  const int H = cfg_.hidden_dim;
  int L = 0;
  for (const Chunk& c : chunks) L = std::max(L, c.len);
  const long od = batch.obs_dims[static_cast<size_t>(chunks[0].agent)];
  const long sd = batch.state_dims[static_cast<size_t>(chunks[0].agent)];
  const long A = batch.n_actions[static_cast<size_t>(chunks[0].agent)];
  const bool train_dead = cfg_.death_mode == DeathMode::Keep;

  // per-timestep constant tensors
  std::vector<Tensor> xs, vss, masks, opds, advs, ws, wcols, tgts, oldvs, keeps;
  std::vector<std::vector<long>> acts(static_cast<size_t>(L));
  double W = 0.0;
  for (int t = 0; t < L; ++t) {
    std::vector<double> xd(static_cast<size_t>(B * od), 0.0);
    std::vector<double> vd(static_cast<size_t>(B * sd), 0.0);
    std::vector<double> md(static_cast<size_t>(B * A), 1.0);
    std::vector<double> op(static_cast<size_t>(B), 0.0), ad(static_cast<size_t>(B), 0.0),
        wd(static_cast<size_t>(B), 0.0);
    std::vector<double> tg(static_cast<size_t>(B), 0.0), ov(static_cast<size_t>(B), 0.0);
    std::vector<double> kp(static_cast<size_t>(B) * H, 1.0);
    acts[static_cast<size_t>(t)].assign(static_cast<size_t>(B), 0);
    for (long i = 0; i < B; ++i) {
      const Chunk& c = chunks[static_cast<size_t>(i)];
      if (t >= c.len) {
        std::fill_n(kp.begin() + i * H, H, 0.0);
        continue;
      }
      const auto sa = static_cast<size_t>(c.agent);
      long idx = batch.idx(c.t0 + t, c.env);
      std::copy_n(batch.obs[sa].begin() + idx * od, od, xd.begin() + i * od);
      std::copy_n(batch.value_state[sa].begin() + idx * sd, sd, vd.begin() + i * sd);
      for (long j = 0; j < A; ++j)
        md[static_cast<size_t>(i * A + j)] = batch.avail[sa][static_cast<size_t>(idx * A + j)];
      acts[static_cast<size_t>(t)][static_cast<size_t>(i)] = batch.action[sa][static_cast<size_t>(idx)];
      op[static_cast<size_t>(i)] = batch.logp[sa][static_cast<size_t>(idx)];
      ad[static_cast<size_t>(i)] = adv.advantages[sa][static_cast<size_t>(idx)];
      tg[static_cast<size_t>(i)] = adv.returns_target[sa][static_cast<size_t>(idx)];
      ov[static_cast<size_t>(i)] = batch.value[sa][static_cast<size_t>(idx)];
      bool inc = train_dead || batch.alive[sa][static_cast<size_t>(idx)] != 0;
      wd[static_cast<size_t>(i)] = inc ? 1.0 : 0.0;
      W += wd[static_cast<size_t>(i)];
      // reset the recurrent state when the previous step ended an episode
      if (t > 0) {
        long pidx = batch.idx(c.t0 + t - 1, c.env);
        if (batch.done[sa][static_cast<size_t>(pidx)]) std::fill_n(kp.begin() + i * H, H, 0.0);
      }
    }
    xs.push_back(Tensor::from_data({B, od}, std::move(xd)));
    vss.push_back(Tensor::from_data({B, sd}, std::move(vd)));
    masks.push_back(Tensor::from_data({B, A}, std::move(md)));
    opds.push_back(Tensor::from_data({B}, std::move(op)));
    advs.push_back(Tensor::from_data({B}, std::move(ad)));
    Tensor wt = Tensor::from_data({B}, wd);
    ws.push_back(wt);
    wcols.push_back(Tensor::from_data({B, 1}, std::move(wd)));
    tgts.push_back(Tensor::from_data({B, 1}, std::move(tg)));
    oldvs.push_back(Tensor::from_data({B, 1}, std::move(ov)));
    keeps.push_back(Tensor::from_data({B, H}, std::move(kp)));
  }
  if (W <= 0.0) return;

  std::vector<double> h0a(static_cast<size_t>(B) * H), h0c(static_cast<size_t>(B) * H);
  for (long i = 0; i < B; ++i) {
    const Chunk& c = chunks[static_cast<size_t>(i)];
    const auto sa = static_cast<size_t>(c.agent);
    long idx = batch.idx(c.t0, c.env);
    std::copy_n(batch.actor_h[sa].begin() + idx * H, H, h0a.begin() + i * H);
    std::copy_n(batch.critic_h[sa].begin() + idx * H, H, h0c.begin() + i * H);
  }

  // actor pass
  {
    Tensor h = Tensor::from_data({B, H}, h0a);
    Tensor loss;
    double clipf = 0.0, entsum = 0.0;
    for (int t = 0; t < L; ++t) {
      if (t > 0) h = mul(h, keeps[static_cast<size_t>(t)]);
      auto [logits, hn] = g.actor.step(xs[static_cast<size_t>(t)], GruState{h});
      h = hn.hidden;
      Categorical dist = Categorical::from_logits(logits, masks[static_cast<size_t>(t)]);
      Tensor lp = dist.log_prob(acts[static_cast<size_t>(t)]);
      Tensor ent = dist.entropy();
      PolicyLossResult r =
          policy_loss(lp, opds[static_cast<size_t>(t)], advs[static_cast<size_t>(t)], ent,
                      ws[static_cast<size_t>(t)], W, cfg_.clip_epsilon, cfg_.entropy_coef);
      loss = loss.defined() ? add(loss, r.loss) : r.loss;
      clipf += r.clip_frac;
      auto ed = ent.data();
      auto wdm = ws[static_cast<size_t>(t)].data();
      for (long i = 0; i < B; ++i)
        entsum += ed[static_cast<size_t>(i)] * wdm[static_cast<size_t>(i)];
    }
    double lv = loss.scalar();
    if (!std::isfinite(lv)) throw NumericalAbort("policy loss is not finite");
    g.opt_actor.zero_grad();
    backward(loss);
    auto params = g.opt_actor.params();
    double gn = grad_norm(params);
    clip_grad_norm(params, cfg_.max_grad_norm);
    g.opt_actor.step();
    stats.policy_loss += lv + cfg_.entropy_coef * entsum / W;  // surrogate part only
    stats.entropy += entsum / W;
    stats.clip_frac += clipf;
    stats.grad_norm_actor += gn;
  }

  // critic pass
  {
    Tensor h = Tensor::from_data({B, H}, h0c);
    Tensor loss;
    for (int t = 0; t < L; ++t) {
      if (t > 0) h = mul(h, keeps[static_cast<size_t>(t)]);
      auto [v, hn] = g.critic.step(vss[static_cast<size_t>(t)], GruState{h});
      h = hn.hidden;
      Tensor lt = value_loss(v, oldvs[static_cast<size_t>(t)], tgts[static_cast<size_t>(t)],
                             wcols[static_cast<size_t>(t)], W, cfg_.clip_epsilon,
                             cfg_.value_loss, cfg_.huber_delta);
      loss = loss.defined() ? add(loss, lt) : lt;
    }
    double lv = loss.scalar();
    if (!std::isfinite(lv)) throw NumericalAbort("value loss is not finite");
    g.opt_critic.zero_grad();
    backward(loss);
    auto params = g.opt_critic.params();
    double gn = grad_norm(params);
    clip_grad_norm(params, cfg_.max_grad_norm);
    g.opt_critic.step();
    stats.value_loss += lv;
    stats.grad_norm_critic += gn;
  }
  stats.updates += 1;
}

Trainer::UpdateStats Trainer::run_updates(const TrajectoryBatch& batch,
                                          const AdvantageSet& adv) {
  UpdateStats stats;
  int chunk_len = cfg_.recurrent ? cfg_.chunk_length : 1;
  std::vector<Chunk> all = split_chunks(batch, chunk_len);
  for (PolicyGroup& g : groups_) {
    std::vector<Chunk> mine;
    for (const Chunk& c : all)
      if (group_of(c.agent) == group_of(g.agents[0])) mine.push_back(c);
    for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
      auto mbs = sample_minibatches(static_cast<int>(mine.size()), cfg_.num_minibatches,
                                    sample_rng_);
      for (const auto& mb : mbs) {
        std::vector<Chunk> sel;
        sel.reserve(mb.size());
        for (int ci : mb) sel.push_back(mine[static_cast<size_t>(ci)]);
        update_minibatch(g, batch, adv, sel, stats);
      }
    }
  }
  return stats;
}

IterMetrics Trainer::train_iteration() {
  auto t0 = std::chrono::steady_clock::now();
  ep_reward_accum_ = 0.0;
  ep_count_ = 0;
  win_count_ = 0;

  TrajectoryBatch batch;
  if (desc_.turn_based)
    collect_turn_based(batch);
  else
    collect_simultaneous(batch);
  finalize_rewards(batch);
  if (!desc_.heterogeneous)
    apply_death_handling(batch, cfg_.death_mode, sspec_, cfg_.gamma);
  AdvantageSet adv = compute_gae(batch, cfg_.gamma, cfg_.gae_lambda,
                                 cfg_.use_value_norm ? &value_moments_ : nullptr, true);
  UpdateStats s = run_updates(batch, adv);

  iter_ += 1;
  IterMetrics m;
  m.step = env_steps_;
  m.iter = iter_;
  m.mean_ep_reward = ep_count_ > 0 ? ep_reward_accum_ / static_cast<double>(ep_count_) : 0.0;
  m.win_rate = ep_count_ > 0 ? static_cast<double>(win_count_) / static_cast<double>(ep_count_) : 0.0;
  if (s.updates > 0) {
    m.policy_loss = s.policy_loss / s.updates;
    m.value_loss = s.value_loss / s.updates;
    m.entropy = s.entropy / s.updates;
    m.clip_frac = s.clip_frac / s.updates;
    m.grad_norm_actor = s.grad_norm_actor / s.updates;
    m.grad_norm_critic = s.grad_norm_critic / s.updates;
  }
  m.value_mean = value_moments_.mean();
  m.value_std = value_moments_.stddev();
  if (cfg_.record_timing) {
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return m;
}

// -- evaluation --------------------------------------------------------------

EvalResult Trainer::evaluate(int episodes, bool greedy) {
  NoGradGuard ng;
  const int n = desc_.n_agents, H = cfg_.hidden_dim;
  std::uint64_t base = master_seed_ ^ 0x94d049bb133111ebULL;
  EvalResult res;
  res.episodes = episodes;
  for (int ep = 0; ep < episodes; ++ep) {
    std::uint64_t s = base + static_cast<std::uint64_t>(eval_count_) * 1000003ULL +
                      static_cast<std::uint64_t>(ep);
    auto env = make_env(cfg_.env_name, cfg_.env_params, splitmix64(s));
    EnvStep cur = env->reset();
    std::vector<std::vector<double>> h(static_cast<size_t>(n),
                                       std::vector<double>(static_cast<size_t>(H), 0.0));
    std::vector<std::deque<std::vector<double>>> stacks(static_cast<size_t>(n));
    double ret = 0.0;
    bool win = false;
    while (true) {
      std::vector<long> acts(static_cast<size_t>(n), 0);
      if (desc_.turn_based) {
        int p = env->acting_agent();
        Rows rows;
        rows.agent = {p};
        rows.env = {0};
        std::vector<std::vector<double>> in = {
            push_frame(stacks[static_cast<size_t>(p)], cfg_.stacked_frames,
                       cur.obs[static_cast<size_t>(p)])};
        std::vector<const std::vector<std::uint8_t>*> avs = {&cur.avail[static_cast<size_t>(p)]};
        // h here is indexed [agent][0*H]
        ActOut ao = act_rows(groups_[static_cast<size_t>(group_of(p))], rows, in, avs,
                             greedy, eval_rng_, h);
        acts[static_cast<size_t>(p)] = ao.actions[0];
      } else {
        for (size_t gi = 0; gi < groups_.size(); ++gi) {
          const PolicyGroup& g = groups_[gi];
          Rows rows;
          std::vector<std::vector<double>> in;
          std::vector<const std::vector<std::uint8_t>*> avs;
          for (int a : g.agents) {
            rows.agent.push_back(a);
            rows.env.push_back(0);
            in.push_back(push_frame(stacks[static_cast<size_t>(a)], cfg_.stacked_frames,
                                    cur.obs[static_cast<size_t>(a)]));
            avs.push_back(&cur.avail[static_cast<size_t>(a)]);
          }
          ActOut ao = act_rows(g, rows, in, avs, greedy, eval_rng_, h);
          for (size_t i = 0; i < rows.agent.size(); ++i)
            acts[static_cast<size_t>(rows.agent[i])] = ao.actions[i];
        }
      }
      EnvStep nxt = env->step(acts);
      ret += nxt.reward;
      if (nxt.done) {
        win = nxt.win;
        break;
      }
      cur = std::move(nxt);
    }
    res.mean_reward += ret;
    if (win) res.win_rate += 1.0;
  }
  eval_count_ += 1;
  res.mean_reward /= episodes;
  res.win_rate /= episodes;
  return res;
}

double Trainer::record_eval(double score) {
  eval_window_.push_back(score);
  while (eval_window_.size() > 10) eval_window_.pop_front();
  std::vector<double> v(eval_window_.begin(), eval_window_.end());
  std::sort(v.begin(), v.end());
  size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace mappo
