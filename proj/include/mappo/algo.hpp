#pragma once

#include <deque>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mappo/env.hpp"
#include "mappo/nn.hpp"
#include "mappo/optim.hpp"
#include "mappo/rollout.hpp"
#include "mappo/statebuild.hpp"
#include "mappo/valuenorm.hpp"

namespace mappo {

enum class ValueLossKind { Huber, Squared };
enum class SharePolicy { Auto, Shared, Separate };

/// Thrown when a loss or gradient goes non-finite; maps to exit code 3.
struct NumericalAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  // environment
  std::string env_name = "spread";
  EnvParams env_params;
  int num_envs = 8;
  int buffer_length = 0;  // 0: use the env's episode limit
  long total_env_steps = 2'000'000;

  // ppo schedule
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  int ppo_epochs = 10;
  int num_minibatches = 1;
  double entropy_coef = 0.01;
  double lr = 7e-4;
  double critic_lr = 0.0;  // 0: same as lr
  double optimizer_eps = 1e-5;
  double weight_decay = 0.0;
  double max_grad_norm = 10.0;
  int chunk_length = 10;
  ValueLossKind value_loss = ValueLossKind::Huber;
  double huber_delta = 10.0;

  // technique switches
  bool use_value_norm = true;
  bool use_reward_norm = true;
  bool use_feature_norm = true;
  DeathMode death_mode = DeathMode::Mask;
  StateMode state_mode = StateMode::CL;
  bool include_agent_id = true;
  SharePolicy share_policy = SharePolicy::Auto;

  // network
  bool recurrent = true;
  int stacked_frames = 1;
  int hidden_dim = 64;
  int num_fc = 2;
  int num_fc_after = 1;
  Activation activation = Activation::Tanh;
  double gain = 0.01;

  // run orchestration
  std::uint64_t seed = 1;
  int eval_interval = 20;   // iterations between evaluations
  int eval_episodes = 32;
  bool eval_greedy = true;
  int checkpoint_interval = 0;  // iterations; 0 disables periodic checkpoints
  int rollout_threads = 0;      // 0: hardware default
  bool record_timing = true;    // false writes 0 in the seconds column

  void validate() const;
};

struct IterMetrics {
  long step = 0;  // cumulative env steps
  long iter = 0;
  double mean_ep_reward = 0.0;
  double win_rate = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double grad_norm_actor = 0.0;
  double grad_norm_critic = 0.0;
  double value_mean = 0.0;
  double value_std = 1.0;
  double seconds = 0.0;

  static const std::vector<std::string>& columns();
  std::string csv_row() const;
};

struct EvalResult {
  double mean_reward = 0.0;
  double win_rate = 0.0;
  int episodes = 0;
};

// -- loss functions (Appendix-style clipped objectives) ----------------------

struct PolicyLossResult {
  Tensor loss;
  double clip_frac = 0.0;
};

/// -mean over weighted entries of min(r A, clip(r, 1-eps, 1+eps) A)
/// - entropy_coef * weighted mean entropy, with r = exp(new_logp - old_logp).
/// weight is the alive/validity mask (constant tensor, same shape).
PolicyLossResult policy_loss(const Tensor& new_logp, const Tensor& old_logp,
                             const Tensor& advantages, const Tensor& entropy,
                             const Tensor& weight, double total_weight,
                             double clip_epsilon, double entropy_coef);

/// weighted mean of max(l(V - R), l(clip(V, Vold-eps, Vold+eps) - R)).
Tensor value_loss(const Tensor& new_values, const Tensor& old_values,
                  const Tensor& returns, const Tensor& weight, double total_weight,
                  double clip_epsilon, ValueLossKind kind, double huber_delta);

// -- trainer -----------------------------------------------------------------

/// Owns envs, networks, optimizers, moments, and the collection/update loop.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  IterMetrics train_iteration();
  EvalResult evaluate(int episodes, bool greedy);
  /// Records an evaluation score; reports the median of the last 10.
  double record_eval(double score);
  /// Redirects future evaluation episode seeds (eval CLI override).
  void set_eval_seed(std::uint64_t seed) {
    master_seed_ = seed;
    eval_count_ = 0;
  }

  long env_steps() const { return env_steps_; }
  long iteration() const { return iter_; }
  const TrainConfig& config() const { return cfg_; }
  const EnvDescriptor& descriptor() const { return desc_; }
  int buffer_length() const { return T_; }
  const RunningMoments& value_moments() const { return value_moments_; }

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  struct PolicyGroup {
    std::vector<int> agents;
    Net actor;
    Net critic;
    Adam opt_actor;
    Adam opt_critic;
  };
  std::vector<PolicyGroup>& groups() { return groups_; }
  const StateSpec& state_spec() const { return sspec_; }
  int critic_input_dim(int agent) const;
  int actor_input_dim(int agent) const;

 private:
  friend struct TrainerTestHook;

  void collect_simultaneous(TrajectoryBatch& batch);
  void collect_turn_based(TrajectoryBatch& batch);
  void finalize_rewards(TrajectoryBatch& batch);
  struct UpdateStats {
    double policy_loss = 0, value_loss = 0, entropy = 0, clip_frac = 0;
    double grad_norm_actor = 0, grad_norm_critic = 0;
    int updates = 0;
  };
  UpdateStats run_updates(const TrajectoryBatch& batch, const AdvantageSet& adv);
  void update_minibatch(PolicyGroup& g, const TrajectoryBatch& batch,
                        const AdvantageSet& adv, const std::vector<Chunk>& chunks,
                        UpdateStats& stats);

  std::vector<double> critic_input(const EnvStep& s, int agent) const;
  int group_of(int agent) const { return agent_group_[static_cast<size_t>(agent)]; }

  // batched single-step forwards used during collection and evaluation;
  // rows are parallel (agent, env-slot) lists, h is indexed [agent][slot*H].
  struct Rows {
    std::vector<int> agent, env;
  };
  struct ActOut {
    std::vector<long> actions;
    std::vector<double> logps;
  };
  ActOut act_rows(const PolicyGroup& g, const Rows& rows,
                  const std::vector<std::vector<double>>& inputs,
                  const std::vector<const std::vector<std::uint8_t>*>& avails,
                  bool greedy, Rng& rng, std::vector<std::vector<double>>& h) const;
  std::vector<double> value_rows(const PolicyGroup& g, const Rows& rows,
                                 const std::vector<std::vector<double>>& inputs,
                                 std::vector<std::vector<double>>& h) const;
  void reset_env(int e);

  TrainConfig cfg_;
  EnvDescriptor desc_;
  StateSpec sspec_;
  std::vector<std::unique_ptr<Env>> envs_;
  std::vector<EnvStep> cur_;
  std::vector<PolicyGroup> groups_;
  std::vector<int> agent_group_;
  // flat [agent][env*H] recurrent states used during collection
  std::vector<std::vector<double>> h_actor_, h_critic_;
  // frame stacks: [agent][env] deques of recent inputs
  std::vector<std::vector<std::deque<std::vector<double>>>> obs_stack_, state_stack_;
  RunningMoments value_moments_;
  RunningMoments reward_moments_;
  Rng sample_rng_;
  Rng eval_rng_;
  std::uint64_t master_seed_ = 0;
  int T_ = 0;
  long iter_ = 0;
  long env_steps_ = 0;
  // episode stats accumulated during collection
  double ep_reward_accum_ = 0.0;
  long ep_count_ = 0, win_count_ = 0;
  std::deque<double> eval_window_;
  long eval_count_ = 0;
  std::vector<double> ep_ret_;  // per-env running raw episode return
};

}  // namespace mappo
