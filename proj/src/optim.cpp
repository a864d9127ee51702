#include "mappo/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mappo {

Adam::Adam(std::vector<Tensor> params, double lr, double eps, double weight_decay,
           double beta1, double beta2)
    : params_(std::move(params)),
      lr_(lr),
      eps_(eps),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2) {
  for (Tensor& p : params_) {
    state_.first_moment.emplace_back(p.size(), 0.0);
    state_.second_moment.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  state_.step_count += 1;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.step_count));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.step_count));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    auto grad = p.grad();
    auto data = p.data();
    auto& m = state_.first_moment[k];
    auto& v = state_.second_moment[k];
    for (size_t i = 0; i < m.size(); ++i) {
      double gi = grad[i];
      if (!std::isfinite(gi)) throw std::runtime_error("adam_step: non-finite gradient");
      if (weight_decay_ != 0.0) gi += weight_decay_ * data[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double grad_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double gv : p.grad()) sq += gv * gv;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  if (max_norm <= 0.0) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  double norm = grad_norm(params);
  if (norm <= max_norm) return 1.0;
  double s = max_norm / norm;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double& gv : p.grad()) gv *= s;
  }
  return s;
}

}  // namespace mappo
