#include "mappo/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace mappo {

namespace {

thread_local bool g_grad_enabled = true;

long shape_numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EMat>;
using CMapMat = Eigen::Map<const EMat>;

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, double value) {
  Tensor t = zeros(shape);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
  if (static_cast<long>(data.size()) != shape_numel(shape))
    throw std::invalid_argument("from_data: size does not match shape");
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

double Tensor::scalar() const {
  if (impl_->data.size() != 1)
    throw std::logic_error("scalar() on tensor with size != 1");
  return impl_->data[0];
}

std::span<double> Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty())
    throw std::logic_error("grad() on tensor without gradient");
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : impl_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

// Builds a result node; records tape edges only when grad mode is on and some
// parent requires grad.
struct OpBuilder {
  Tensor out;
  bool track = false;

  OpBuilder(Shape shape, std::initializer_list<Tensor> parents) {
    out = Tensor::zeros(shape);
    if (g_grad_enabled) {
      for (const Tensor& p : parents)
        if (p.defined() && p.requires_grad()) track = true;
    }
    if (track) {
      auto* impl = out.impl();
      impl->requires_grad = true;
      impl->is_leaf = false;
      for (const Tensor& p : parents)
        if (p.defined()) impl->parents.push_back(p.impl_ptr());
    }
  }

  void set_backward(std::function<void()> fn) {
    if (track) out.impl()->backward_fn = std::move(fn);
  }
};

namespace {

// ensure a node's grad buffer exists
std::vector<double>& g(const std::shared_ptr<detail::TensorImpl>& n) {
  if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
  return n->grad;
}

bool wants(const std::shared_ptr<detail::TensorImpl>& n) { return n->requires_grad; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  OpBuilder op(a.shape(), {a, b});
  const auto da = a.data(), db = b.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = da[i] + db[i];
  auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = op.out.impl_ptr();
  op.set_backward([ai, bi, oi]() {
    const auto& go = oi->grad;
    if (wants(ai)) {
      auto& ga = g(ai);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (wants(bi)) {
      auto& gb = g(bi);
      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
    }
  });
  return op.out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  OpBuilder op(a.shape(), {a, b});
  const auto da = a.data(), db = b.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = da[i] - db[i];
  auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = op.out.impl_ptr();
  op.set_backward([ai, bi, oi]() {
    const auto& go = oi->grad;
    if (wants(ai)) {
      auto& ga = g(ai);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (wants(bi)) {
      auto& gb = g(bi);
      for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
  return op.out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  OpBuilder op(a.shape(), {a, b});
  const auto da = a.data(), db = b.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = da[i] * db[i];
  auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = op.out.impl_ptr();
  op.set_backward([ai, bi, oi]() {
    const auto& go = oi->grad;
    if (wants(ai)) {
      auto& ga = g(ai);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bi->data[i];
    }
    if (wants(bi)) {
      auto& gb = g(bi);
      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * ai->data[i];
    }
  });
  return op.out;
}

Tensor scale(const Tensor& a, double c) {
  OpBuilder op(a.shape(), {a});
  const auto da = a.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = da[i] * c;
  auto ai = a.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([ai, oi, c]() {
    auto& ga = g(ai);
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
  });
  return op.out;
}

Tensor add_scalar(const Tensor& a, double c) {
  OpBuilder op(a.shape(), {a});
  const auto da = a.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = da[i] + c;
  auto ai = a.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([ai, oi]() {
    auto& ga = g(ai);
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
  return op.out;
}

Tensor vexp(const Tensor& a) {
  OpBuilder op(a.shape(), {a});
  const auto da = a.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = std::exp(da[i]);
  auto ai = a.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([ai, oi]() {
    auto& ga = g(ai);
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * oi->data[i];
  });
  return op.out;
}

Tensor vtanh(const Tensor& a) {
  OpBuilder op(a.shape(), {a});
  const auto da = a.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = std::tanh(da[i]);
  auto ai = a.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([ai, oi]() {
    auto& ga = g(ai);
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i)
      ga[i] += go[i] * (1.0 - oi->data[i] * oi->data[i]);
  });
  return op.out;
}

Tensor relu(const Tensor& a) {
  OpBuilder op(a.shape(), {a});
  const auto da = a.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = da[i] > 0.0 ? da[i] : 0.0;
  auto ai = a.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([ai, oi]() {
    auto& ga = g(ai);
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i)
      if (ai->data[i] > 0.0) ga[i] += go[i];
  });
  return op.out;
}

Tensor sigmoid(const Tensor& a) {
  OpBuilder op(a.shape(), {a});
  const auto da = a.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-da[i]));
  auto ai = a.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([ai, oi]() {
    auto& ga = g(ai);
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i) {
      double s = oi->data[i];
      ga[i] += go[i] * s * (1.0 - s);
    }
  });
  return op.out;
}

Tensor clamp_scalar(const Tensor& a, double lo, double hi) {
  OpBuilder op(a.shape(), {a});
  const auto da = a.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = std::clamp(da[i], lo, hi);
  auto ai = a.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([ai, oi, lo, hi]() {
    auto& ga = g(ai);
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i)
      if (ai->data[i] > lo && ai->data[i] < hi) ga[i] += go[i];
  });
  return op.out;
}

Tensor clamp(const Tensor& a, const Tensor& lo, const Tensor& hi) {
  check_same_shape(a, lo, "clamp");
  check_same_shape(a, hi, "clamp");
  OpBuilder op(a.shape(), {a});
  const auto da = a.data(), dl = lo.data(), dh = hi.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = std::clamp(da[i], dl[i], dh[i]);
  auto ai = a.impl_ptr();
  auto li = lo.impl_ptr(), hi_ = hi.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([ai, li, hi_, oi]() {
    auto& ga = g(ai);
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i)
      if (ai->data[i] > li->data[i] && ai->data[i] < hi_->data[i]) ga[i] += go[i];
  });
  return op.out;
}

// ties route the gradient to the first argument, keeping backward deterministic
Tensor minimum(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "minimum");
  OpBuilder op(a.shape(), {a, b});
  const auto da = a.data(), db = b.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = da[i] <= db[i] ? da[i] : db[i];
  auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = op.out.impl_ptr();
  op.set_backward([ai, bi, oi]() {
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i) {
      if (ai->data[i] <= bi->data[i]) {
        if (wants(ai)) g(ai)[i] += go[i];
      } else if (wants(bi)) {
        g(bi)[i] += go[i];
      }
    }
  });
  return op.out;
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "maximum");
  OpBuilder op(a.shape(), {a, b});
  const auto da = a.data(), db = b.data();
  auto out = op.out.data();
  for (long i = 0; i < a.size(); ++i) out[i] = da[i] >= db[i] ? da[i] : db[i];
  auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = op.out.impl_ptr();
  op.set_backward([ai, bi, oi]() {
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i) {
      if (ai->data[i] >= bi->data[i]) {
        if (wants(ai)) g(ai)[i] += go[i];
      } else if (wants(bi)) {
        g(bi)[i] += go[i];
      }
    }
  });
  return op.out;
}

Tensor huber(const Tensor& err, double delta) {
  if (delta <= 0.0) throw std::invalid_argument("huber: delta must be > 0");
  OpBuilder op(err.shape(), {err});
  const auto de = err.data();
  auto out = op.out.data();
  for (long i = 0; i < err.size(); ++i) {
    double e = de[i];
    double a = std::abs(e);
    out[i] = a <= delta ? 0.5 * e * e : delta * (a - 0.5 * delta);
  }
  auto ei = err.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([ei, oi, delta]() {
    auto& ge = g(ei);
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i) {
      double e = ei->data[i];
      double d = std::abs(e) <= delta ? e : (e > 0 ? delta : -delta);
      ge[i] += go[i] * d;
    }
  });
  return op.out;
}

Tensor sum(const Tensor& a) {
  OpBuilder op(Shape{1}, {a});
  double s = 0.0;
  for (double v : a.data()) s += v;
  op.out.data()[0] = s;
  auto ai = a.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([ai, oi]() {
    auto& ga = g(ai);
    double go = oi->grad[0];
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += go;
  });
  return op.out;
}

Tensor row_sum(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("row_sum: expects 2-d tensor");
  long m = a.dim(0), n = a.dim(1);
  OpBuilder op(Shape{m}, {a});
  const auto da = a.data();
  auto out = op.out.data();
  for (long i = 0; i < m; ++i) {
    double s = 0.0;
    for (long j = 0; j < n; ++j) s += da[i * n + j];
    out[i] = s;
  }
  auto ai = a.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([ai, oi, m, n]() {
    auto& ga = g(ai);
    const auto& go = oi->grad;
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < n; ++j) ga[i * n + j] += go[i];
  });
  return op.out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: shape mismatch");
  long m = a.dim(0), k = a.dim(1), n = b.dim(1);
  OpBuilder op(Shape{m, n}, {a, b});
  CMapMat A(a.data().data(), m, k), B(b.data().data(), k, n);
  MapMat O(op.out.data().data(), m, n);
  O.noalias() = A * B;
  auto ai = a.impl_ptr(), bi = b.impl_ptr(), oi = op.out.impl_ptr();
  op.set_backward([ai, bi, oi, m, k, n]() {
    CMapMat GO(oi->grad.data(), m, n);
    if (wants(ai)) {
      MapMat GA(g(ai).data(), m, k);
      CMapMat B(bi->data.data(), k, n);
      GA.noalias() += GO * B.transpose();
    }
    if (wants(bi)) {
      MapMat GB(g(bi).data(), k, n);
      CMapMat A(ai->data.data(), m, k);
      GB.noalias() += A.transpose() * GO;
    }
  });
  return op.out;
}

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.ndim() != 2 || W.ndim() != 2 || x.dim(1) != W.dim(1))
    throw std::invalid_argument("linear: shape mismatch");
  long m = x.dim(0), in = x.dim(1), out_dim = W.dim(0);
  if (b.defined() && b.size() != out_dim)
    throw std::invalid_argument("linear: bias shape mismatch");
  OpBuilder op(Shape{m, out_dim}, {x, W, b});
  CMapMat X(x.data().data(), m, in), Wm(W.data().data(), out_dim, in);
  MapMat O(op.out.data().data(), m, out_dim);
  O.noalias() = X * Wm.transpose();
  if (b.defined()) {
    const auto db = b.data();
    auto o = op.out.data();
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < out_dim; ++j) o[i * out_dim + j] += db[j];
  }
  auto xi = x.impl_ptr(), wi = W.impl_ptr(), oi = op.out.impl_ptr();
  auto bi = b.defined() ? b.impl_ptr() : nullptr;
  op.set_backward([xi, wi, bi, oi, m, in, out_dim]() {
    CMapMat GO(oi->grad.data(), m, out_dim);
    if (wants(xi)) {
      MapMat GX(g(xi).data(), m, in);
      CMapMat Wm(wi->data.data(), out_dim, in);
      GX.noalias() += GO * Wm;
    }
    if (wants(wi)) {
      MapMat GW(g(wi).data(), out_dim, in);
      CMapMat X(xi->data.data(), m, in);
      GW.noalias() += GO.transpose() * X;
    }
    if (bi && wants(bi)) {
      auto& gb = g(bi);
      for (long i = 0; i < m; ++i)
        for (long j = 0; j < out_dim; ++j) gb[j] += oi->grad[i * out_dim + j];
    }
  });
  return op.out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.ndim() != 2) throw std::invalid_argument("layer_norm: expects 2-d input");
  long m = x.dim(0), n = x.dim(1);
  if (gain.size() != n || bias.size() != n)
    throw std::invalid_argument("layer_norm: parameter shape mismatch");
  constexpr double eps = 1e-5;
  OpBuilder op(Shape{m, n}, {x, gain, bias});
  const auto dx = x.data(), dg = gain.data(), db = bias.data();
  auto out = op.out.data();
  // cache per-row mean and inverse std for the backward pass
  auto stats = std::make_shared<std::vector<double>>(2 * m);
  for (long i = 0; i < m; ++i) {
    double mean = 0.0;
    for (long j = 0; j < n; ++j) mean += dx[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (long j = 0; j < n; ++j) {
      double d = dx[i * n + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double inv_std = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * i] = mean;
    (*stats)[2 * i + 1] = inv_std;
    for (long j = 0; j < n; ++j)
      out[i * n + j] = (dx[i * n + j] - mean) * inv_std * dg[j] + db[j];
  }
  auto xi = x.impl_ptr(), gi = gain.impl_ptr(), bi = bias.impl_ptr();
  auto oi = op.out.impl_ptr();
  op.set_backward([xi, gi, bi, oi, stats, m, n]() {
    const auto& go = oi->grad;
    for (long i = 0; i < m; ++i) {
      double mean = (*stats)[2 * i], inv_std = (*stats)[2 * i + 1];
      // xhat_j = (x_j - mean) * inv_std
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (long j = 0; j < n; ++j) {
        double xhat = (xi->data[i * n + j] - mean) * inv_std;
        double dy = go[i * n + j] * gi->data[j];
        sum_dy += dy;
        sum_dy_xhat += dy * xhat;
      }
      if (wants(gi) || wants(bi)) {
        for (long j = 0; j < n; ++j) {
          double xhat = (xi->data[i * n + j] - mean) * inv_std;
          if (wants(gi)) g(gi)[j] += go[i * n + j] * xhat;
          if (wants(bi)) g(bi)[j] += go[i * n + j];
        }
      }
      if (wants(xi)) {
        auto& gx = g(xi);
        double inv_n = 1.0 / static_cast<double>(n);
        for (long j = 0; j < n; ++j) {
          double xhat = (xi->data[i * n + j] - mean) * inv_std;
          double dy = go[i * n + j] * gi->data[j];
          gx[i * n + j] += inv_std * (dy - inv_n * sum_dy - inv_n * xhat * sum_dy_xhat);
        }
      }
    }
  });
  return op.out;
}

Tensor masked_log_softmax(const Tensor& logits, const Tensor& mask) {
  check_same_shape(logits, mask, "masked_log_softmax");
  if (logits.ndim() != 2)
    throw std::invalid_argument("masked_log_softmax: expects 2-d tensor");
  long m = logits.dim(0), n = logits.dim(1);
  constexpr double kMaskedLogProb = -1e9;
  OpBuilder op(Shape{m, n}, {logits});
  const auto dl = logits.data(), dm = mask.data();
  auto out = op.out.data();
  for (long i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (long j = 0; j < n; ++j)
      if (dm[i * n + j] != 0.0) {
        any = true;
        mx = std::max(mx, dl[i * n + j]);
      }
    if (!any)
      throw std::invalid_argument("masked_log_softmax: row with all actions masked");
    double z = 0.0;
    for (long j = 0; j < n; ++j)
      if (dm[i * n + j] != 0.0) z += std::exp(dl[i * n + j] - mx);
    double logz = mx + std::log(z);
    for (long j = 0; j < n; ++j)
      out[i * n + j] = dm[i * n + j] != 0.0 ? dl[i * n + j] - logz : kMaskedLogProb;
  }
  auto li = logits.impl_ptr(), mi = mask.impl_ptr(), oi = op.out.impl_ptr();
  op.set_backward([li, mi, oi, m, n]() {
    auto& gl = g(li);
    const auto& go = oi->grad;
    for (long i = 0; i < m; ++i) {
      double gsum = 0.0;
      for (long j = 0; j < n; ++j)
        if (mi->data[i * n + j] != 0.0) gsum += go[i * n + j];
      for (long j = 0; j < n; ++j) {
        if (mi->data[i * n + j] == 0.0) continue;
        double p = std::exp(oi->data[i * n + j]);
        gl[i * n + j] += go[i * n + j] - p * gsum;
      }
    }
  });
  return op.out;
}

Tensor gather_cols(const Tensor& logp, const std::vector<long>& ids) {
  if (logp.ndim() != 2) throw std::invalid_argument("gather_cols: expects 2-d tensor");
  long m = logp.dim(0), n = logp.dim(1);
  if (static_cast<long>(ids.size()) != m)
    throw std::invalid_argument("gather_cols: id count mismatch");
  OpBuilder op(Shape{m}, {logp});
  const auto dl = logp.data();
  auto out = op.out.data();
  for (long i = 0; i < m; ++i) {
    if (ids[i] < 0 || ids[i] >= n)
      throw std::out_of_range("gather_cols: index out of range");
    out[i] = dl[i * n + ids[i]];
  }
  auto li = logp.impl_ptr();
  auto oi = op.out.impl_ptr();
  auto ids_copy = std::make_shared<std::vector<long>>(ids);
  op.set_backward([li, oi, ids_copy, n]() {
    auto& gl = g(li);
    const auto& go = oi->grad;
    for (size_t i = 0; i < go.size(); ++i) gl[i * n + (*ids_copy)[i]] += go[i];
  });
  return op.out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  auto* root = loss.impl();
  if (!root->requires_grad)
    throw std::logic_error("backward: called on a detached tensor");

  // iterative post-order topological sort
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::TensorImpl* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
  // clear the tape
  for (auto* node : order) {
    node->backward_fn = nullptr;
    node->parents.clear();
  }
}

Tensor orthogonal_init(long rows, long cols, double gain, Rng& rng) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("orthogonal_init: degenerate shape");
  if (gain <= 0.0) throw std::invalid_argument("orthogonal_init: gain must be > 0");
  long big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd A(big, small);
  for (long i = 0; i < big; ++i)
    for (long j = 0; j < small; ++j) A(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  Eigen::MatrixXd R = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (long j = 0; j < small; ++j)
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);

  Tensor W = Tensor::zeros(Shape{rows, cols}, true);
  auto d = W.data();
  if (rows >= cols) {
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < cols; ++j) d[i * cols + j] = gain * Q(i, j);
  } else {
    for (long i = 0; i < rows; ++i)
      for (long j = 0; j < cols; ++j) d[i * cols + j] = gain * Q(j, i);
  }
  return W;
}

}  // namespace mappo
