#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mappo/rng.hpp"

namespace mappo {

using Shape = std::vector<long>;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  bool is_leaf = true;
  // tape edges; cleared after backward()
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void()> backward_fn;
};
}  // namespace detail

/// Dense fp64 tensor with reverse-mode autodiff. Value-semantics handle to a
/// shared node; ops record onto an implicit tape while grad mode is enabled.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  long size() const { return static_cast<long>(impl_->data.size()); }
  long dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  long ndim() const { return static_cast<long>(impl_->shape.size()); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double scalar() const;

  bool requires_grad() const { return impl_->requires_grad; }
  std::span<double> grad();
  std::span<const double> grad() const;
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad();

  bool all_finite() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_op_result(Shape shape, std::vector<Tensor> parents,
                               std::function<void()>* out_hook);
  friend struct OpBuilder;
};

/// Disables tape recording while alive (rollout / evaluation forward passes).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// -- elementwise / structural ops -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor vexp(const Tensor& a);
Tensor vtanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// clamp with scalar bounds; gradient is zero where the value was clipped
Tensor clamp_scalar(const Tensor& a, double lo, double hi);
/// clamp with per-element bounds given by constant tensors
Tensor clamp(const Tensor& a, const Tensor& lo, const Tensor& hi);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
/// elementwise Huber on an error tensor: 0.5 e^2 for |e|<=delta else delta(|e|-0.5 delta)
Tensor huber(const Tensor& err, double delta);

// -- reductions --------------------------------------------------------------

Tensor sum(const Tensor& a);                // -> scalar tensor [1]
Tensor row_sum(const Tensor& a);            // [m,n] -> [m]

// -- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);      // [m,k]x[k,n]
/// y = x W^T + b with W stored [out,in]; b may be undefined for no bias
Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b);

// -- network-specific composites with manual backward ------------------------

/// Per-row layer normalization with trainable gain/bias, eps 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// Log-softmax per row over available actions only. Masked entries get
/// log-prob -1e9 (probability exactly 0 after exp underflow); gradients flow
/// only through available entries. mask is a constant 0/1 tensor.
Tensor masked_log_softmax(const Tensor& logits, const Tensor& mask);

/// Picks logp[i, ids[i]] per row -> [m]. ids is a constant index tensor.
Tensor gather_cols(const Tensor& logp, const std::vector<long>& ids);

// -- autodiff ----------------------------------------------------------------

/// Reverse pass from a scalar loss: populates grads of all reachable
/// requires_grad leaves, accumulating, then clears the tape edges.
void backward(const Tensor& loss);

// -- initialization ----------------------------------------------------------

/// Orthogonal init via QR of a standard-normal matrix with sign correction
/// from R's diagonal; for rows<=cols W W^T = gain^2 I.
Tensor orthogonal_init(long rows, long cols, double gain, Rng& rng);

}  // namespace mappo
