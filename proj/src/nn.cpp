#include "mappo/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace mappo {

Tensor activate(const Tensor& x, Activation act) {
  return act == Activation::Tanh ? vtanh(x) : relu(x);
}

namespace {
double hidden_gain(Activation act) {
  // standard orthogonal-init gains for the hidden nonlinearity
  return act == Activation::Relu ? std::sqrt(2.0) : 5.0 / 3.0;
}
}  // namespace

Linear::Linear(long in, long out, double gain, Rng& rng) {
  W = orthogonal_init(out, in, gain, rng);
  b = Tensor::zeros(Shape{out}, true);
}

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".W", W});
  out.push_back({prefix + ".b", b});
}

LayerNorm::LayerNorm(long dim) {
  gain = Tensor::full(Shape{dim}, 1.0);
  gain.impl()->requires_grad = true;
  bias = Tensor::zeros(Shape{dim}, true);
}

void LayerNorm::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

GruCell::GruCell(long in, long hidden, Rng& rng) {
  Wr = orthogonal_init(hidden, in, 1.0, rng);
  Wz = orthogonal_init(hidden, in, 1.0, rng);
  Wn = orthogonal_init(hidden, in, 1.0, rng);
  Ur = orthogonal_init(hidden, hidden, 1.0, rng);
  Uz = orthogonal_init(hidden, hidden, 1.0, rng);
  Un = orthogonal_init(hidden, hidden, 1.0, rng);
  br = Tensor::zeros(Shape{hidden}, true);
  bz = Tensor::zeros(Shape{hidden}, true);
  bxn = Tensor::zeros(Shape{hidden}, true);
  bhn = Tensor::zeros(Shape{hidden}, true);
}

GruState GruCell::forward(const Tensor& x, const GruState& h) const {
  Tensor r = sigmoid(add(linear(x, Wr, br), linear(h.hidden, Ur, Tensor())));
  Tensor z = sigmoid(add(linear(x, Wz, bz), linear(h.hidden, Uz, Tensor())));
  Tensor nc = vtanh(add(linear(x, Wn, bxn), mul(r, linear(h.hidden, Un, bhn))));
  // h' = nc + z * (h - nc)
  return GruState{add(nc, mul(z, sub(h.hidden, nc)))};
}

void GruCell::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".Wr", Wr});
  out.push_back({prefix + ".Wz", Wz});
  out.push_back({prefix + ".Wn", Wn});
  out.push_back({prefix + ".Ur", Ur});
  out.push_back({prefix + ".Uz", Uz});
  out.push_back({prefix + ".Un", Un});
  out.push_back({prefix + ".br", br});
  out.push_back({prefix + ".bz", bz});
  out.push_back({prefix + ".bxn", bxn});
  out.push_back({prefix + ".bhn", bhn});
}

Net::Net(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.input_dim < 1 || cfg.output_dim < 1)
    throw std::invalid_argument("Net: input and output dims must be >= 1");
  double hg = hidden_gain(cfg.act);
  if (cfg.feature_norm) input_norm_ = LayerNorm(cfg.input_dim);
  long in = cfg.input_dim;
  for (int i = 0; i < cfg.num_fc; ++i) {
    fcs_.emplace_back(in, cfg.hidden_dim, hg, rng);
    fc_norms_.emplace_back(cfg.hidden_dim);
    in = cfg.hidden_dim;
  }
  if (cfg.recurrent) {
    gru_.emplace(in, cfg.hidden_dim, rng);
    gru_norm_.emplace(cfg.hidden_dim);
    in = cfg.hidden_dim;
  }
  for (int i = 0; i < cfg.num_fc_after; ++i) {
    after_.emplace_back(in, cfg.hidden_dim, hg, rng);
    in = cfg.hidden_dim;
  }
  head_ = Linear(in, cfg.output_dim, cfg.output_gain, rng);
}

std::pair<Tensor, GruState> Net::step(const Tensor& x, const GruState& h) const {
  Tensor y = x;
  if (cfg_.feature_norm) y = input_norm_.forward(y);
  for (size_t i = 0; i < fcs_.size(); ++i)
    y = fc_norms_[i].forward(activate(fcs_[i].forward(y), cfg_.act));
  GruState h_next = h;
  if (gru_) {
    h_next = gru_->forward(y, h);
    y = gru_norm_->forward(h_next.hidden);
  }
  for (const Linear& l : after_) y = activate(l.forward(y), cfg_.act);
  return {head_.forward(y), h_next};
}

std::vector<Tensor> Net::params() const {
  std::vector<Tensor> out;
  for (const NamedParam& p : named_params("net")) out.push_back(p.tensor);
  return out;
}

std::vector<NamedParam> Net::named_params(const std::string& prefix) const {
  std::vector<NamedParam> out;
  if (cfg_.feature_norm) input_norm_.collect(prefix + ".input_norm", out);
  for (size_t i = 0; i < fcs_.size(); ++i) {
    fcs_[i].collect(prefix + ".fc" + std::to_string(i), out);
    fc_norms_[i].collect(prefix + ".fc_norm" + std::to_string(i), out);
  }
  if (gru_) {
    gru_->collect(prefix + ".gru", out);
    gru_norm_->collect(prefix + ".gru_norm", out);
  }
  for (size_t i = 0; i < after_.size(); ++i)
    after_[i].collect(prefix + ".after" + std::to_string(i), out);
  head_.collect(prefix + ".head", out);
  return out;
}

Categorical Categorical::from_logits(const Tensor& logits, const Tensor& mask) {
  Categorical c;
  c.logp = masked_log_softmax(logits, mask);
  c.mask = mask;
  return c;
}

std::vector<long> Categorical::sample(Rng& rng) const {
  long m = logp.dim(0), n = logp.dim(1);
  const auto lp = logp.data();
  const auto mk = mask.data();
  std::vector<long> out(static_cast<size_t>(m));
  for (long i = 0; i < m; ++i) {
    double u = rng.uniform();
    double acc = 0.0;
    long pick = -1;
    for (long j = 0; j < n; ++j) {
      if (mk[i * n + j] == 0.0) continue;
      acc += std::exp(lp[i * n + j]);
      if (u <= acc) {
        pick = j;
        break;
      }
      pick = j;  // fall through to the last available action on rounding
    }
    out[static_cast<size_t>(i)] = pick;
  }
  return out;
}

std::vector<long> Categorical::argmax() const {
  long m = logp.dim(0), n = logp.dim(1);
  const auto lp = logp.data();
  std::vector<long> out(static_cast<size_t>(m));
  for (long i = 0; i < m; ++i) {
    long best = 0;
    double bv = lp[i * n];
    for (long j = 1; j < n; ++j)
      if (lp[i * n + j] > bv) {
        bv = lp[i * n + j];
        best = j;
      }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

Tensor Categorical::entropy() const {
  // -sum_avail p * logp; masked entries contribute exactly 0 since exp(-1e9)
  // underflows to 0
  Tensor p = vexp(logp);
  return scale(row_sum(mul(p, logp)), -1.0);
}

}  // namespace mappo
