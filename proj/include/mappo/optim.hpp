#pragma once

#include <vector>

#include "mappo/tensor.hpp"

namespace mappo {

/// Per-parameter first/second moment buffers plus the shared step counter.
struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  long step_count = 0;
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, double lr, double eps = 1e-5,
       double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999);

  /// One update from the currently accumulated grads. Throws on NaN grads.
  void step();
  void zero_grad();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
  double lr_ = 1e-3, eps_ = 1e-5, weight_decay_ = 0.0, beta1_ = 0.9, beta2_ = 0.999;
};

/// Global L2-norm gradient clipping; returns the applied scale factor.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

/// Global L2 norm of the gradients (diagnostic).
double grad_norm(const std::vector<Tensor>& params);

}  // namespace mappo
