#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mappo/tensor.hpp"

namespace mappo {

enum class Activation { Tanh, Relu };

Tensor activate(const Tensor& x, Activation act);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct Linear {
  Tensor W;  // [out, in]
  Tensor b;  // [out]

  Linear() = default;
  Linear(long in, long out, double gain, Rng& rng);
  Tensor forward(const Tensor& x) const { return linear(x, W, b); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct LayerNorm {
  Tensor gain;  // init 1
  Tensor bias;  // init 0

  LayerNorm() = default;
  explicit LayerNorm(long dim);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gain, bias); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

/// Recurrent hidden state, one row per batch element.
struct GruState {
  Tensor hidden;  // [batch, hidden_dim]

  static GruState zeros(long batch, long hidden_dim) {
    return GruState{Tensor::zeros(Shape{batch, hidden_dim})};
  }
};

// Single GRU cell, gates in the Cho formulation with the reset gate applied to
// the recurrent candidate term (PyTorch convention):
//   r  = sigmoid(Wr x + Ur h + br)
//   z  = sigmoid(Wz x + Uz h + bz)
//   nc = tanh(Wn x + bxn + r * (Un h + bhn))
//   h' = (1 - z) * nc + z * h
struct GruCell {
  Tensor Wr, Wz, Wn;       // [hidden, in]
  Tensor Ur, Uz, Un;       // [hidden, hidden]
  Tensor br, bz, bxn, bhn; // [hidden]

  GruCell() = default;
  GruCell(long in, long hidden, Rng& rng);
  GruState forward(const Tensor& x, const GruState& h) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

struct NetConfig {
  long input_dim = 0;
  long output_dim = 0;
  long hidden_dim = 64;
  int num_fc = 2;
  int num_fc_after = 1;
  bool recurrent = true;
  bool feature_norm = true;
  Activation act = Activation::Tanh;
  double output_gain = 0.01;
};

/// fc stack -> optional GRU -> fc-after stack -> linear head.
class Net {
 public:
  Net() = default;
  Net(const NetConfig& cfg, Rng& rng);

  /// One forward step. For recurrent nets h must hold the incoming state and
  /// the returned state is the updated one; for MLP nets h is passed through.
  std::pair<Tensor, GruState> step(const Tensor& x, const GruState& h) const;

  bool recurrent() const { return cfg_.recurrent; }
  long hidden_dim() const { return cfg_.hidden_dim; }
  const NetConfig& config() const { return cfg_; }

  std::vector<Tensor> params() const;
  std::vector<NamedParam> named_params(const std::string& prefix) const;

 private:
  NetConfig cfg_;
  LayerNorm input_norm_;
  std::vector<Linear> fcs_;
  std::vector<LayerNorm> fc_norms_;
  std::optional<GruCell> gru_;
  std::optional<LayerNorm> gru_norm_;
  std::vector<Linear> after_;
  Linear head_;
};

/// Categorical distribution over available actions, built from masked logits.
struct Categorical {
  Tensor logp;        // [batch, n_actions]; -1e9 on masked entries
  Tensor mask;        // constant 0/1

  static Categorical from_logits(const Tensor& logits, const Tensor& mask);

  std::vector<long> sample(Rng& rng) const;
  std::vector<long> argmax() const;
  Tensor log_prob(const std::vector<long>& actions) const { return gather_cols(logp, actions); }
  /// per-row entropy over the available support -> [batch]
  Tensor entropy() const;
};

}  // namespace mappo
