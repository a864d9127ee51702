#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "mappo/tensor.hpp"

using namespace mappo;

namespace {

Tensor randn(const Shape& shape, Rng& rng, bool req = true) {
  long n = 1;
  for (long d : shape) n *= d;
  std::vector<double> data(static_cast<size_t>(n));
  for (auto& v : data) v = rng.normal();
  return Tensor::from_data(shape, std::move(data), req);
}

// central finite differences against the analytic gradient of a scalar loss
void check_grads(const std::vector<Tensor>& leaves, const std::function<Tensor()>& loss_fn,
                 double tol = 1e-4, double h = 1e-5) {
  Tensor loss = loss_fn();
  REQUIRE(loss.size() == 1);
  backward(loss);
  for (Tensor leaf : leaves) {
    auto g = leaf.grad();
    for (long i = 0; i < leaf.size(); ++i) {
      double saved = leaf.data()[static_cast<size_t>(i)];
      leaf.data()[static_cast<size_t>(i)] = saved + h;
      double up;
      {
        NoGradGuard ng;
        up = loss_fn().scalar();
      }
      leaf.data()[static_cast<size_t>(i)] = saved - h;
      double dn;
      {
        NoGradGuard ng;
        dn = loss_fn().scalar();
      }
      leaf.data()[static_cast<size_t>(i)] = saved;
      double fd = (up - dn) / (2 * h);
      double denom = std::max({std::abs(fd), std::abs(g[static_cast<size_t>(i)]), 1e-6});
      CHECK(std::abs(fd - g[static_cast<size_t>(i)]) / denom < tol);
    }
    leaf.zero_grad();
  }
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Tensor a = Tensor::from_data({3}, {1.0, -2.0, 0.5});
  Tensor b = Tensor::from_data({3}, {2.0, 3.0, -1.0});
  CHECK(add(a, b).data()[0] == 3.0);
  CHECK(sub(a, b).data()[1] == -5.0);
  CHECK(mul(a, b).data()[2] == -0.5);
  CHECK(scale(a, 2.0).data()[0] == 2.0);
  CHECK(add_scalar(a, 1.0).data()[1] == -1.0);
  CHECK(relu(a).data()[1] == 0.0);
  CHECK(relu(a).data()[0] == 1.0);
  CHECK(vexp(a).data()[0] == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
  CHECK(vtanh(a).data()[2] == doctest::Approx(std::tanh(0.5)).epsilon(1e-12));
  CHECK(sigmoid(a).data()[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(clamp_scalar(a, -1.0, 1.0).data()[1] == -1.0);
  CHECK(minimum(a, b).data()[0] == 1.0);
  CHECK(maximum(a, b).data()[1] == 3.0);
  CHECK(sum(a).scalar() == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("huber matches its piecewise definition") {
  Tensor e = Tensor::from_data({4}, {0.5, -0.5, 3.0, -3.0});
  Tensor h = huber(e, 1.0);
  CHECK(h.data()[0] == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(h.data()[1] == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(h.data()[2] == doctest::Approx(2.5).epsilon(1e-12));   // 1*(3-0.5)
  CHECK(h.data()[3] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("matmul against a naive triple loop") {
  Rng rng(11);
  Tensor a = randn({3, 5}, rng, false);
  Tensor b = randn({5, 4}, rng, false);
  Tensor c = matmul(a, b);
  for (long i = 0; i < 3; ++i)
    for (long j = 0; j < 4; ++j) {
      double acc = 0;
      for (long k = 0; k < 5; ++k)
        acc += a.data()[static_cast<size_t>(i * 5 + k)] * b.data()[static_cast<size_t>(k * 4 + j)];
      CHECK(c.data()[static_cast<size_t>(i * 4 + j)] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("linear forward examples") {
  Tensor x = Tensor::from_data({1, 2}, {1.0, 0.0});
  Tensor W = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor b = Tensor::from_data({2}, {0.0, 0.0});
  Tensor y = linear(x, W, b);
  CHECK(y.data()[0] == 1.0);
  CHECK(y.data()[1] == 0.0);
  Tensor x2 = Tensor::from_data({1, 2}, {1.0, 2.0});
  Tensor W2 = Tensor::from_data({1, 2}, {3.0, 4.0});
  Tensor b2 = Tensor::from_data({1}, {5.0});
  CHECK(linear(x2, W2, b2).scalar() == 16.0);
}

TEST_CASE("gradients of elementwise ops match finite differences") {
  Rng rng(7);
  Tensor a = randn({2, 3}, rng);
  Tensor b = randn({2, 3}, rng);
  check_grads({a, b}, [&] { return sum(mul(add(a, b), sub(a, b))); });
  check_grads({a}, [&] { return sum(vexp(scale(a, 0.3))); });
  check_grads({a}, [&] { return sum(vtanh(a)); });
  check_grads({a}, [&] { return sum(sigmoid(a)); });
  check_grads({a, b}, [&] { return sum(minimum(a, b)); });
  check_grads({a, b}, [&] { return sum(maximum(mul(a, a), mul(b, b))); });
  check_grads({a}, [&] { return sum(huber(a, 0.7)); });
  check_grads({a}, [&] { return sum(row_sum(mul(a, a))); });
}

TEST_CASE("clamp gradient is zero where the input was clipped") {
  Tensor a = Tensor::from_data({3}, {-2.0, 0.5, 2.0}, true);
  Tensor loss = sum(clamp_scalar(a, -1.0, 1.0));
  backward(loss);
  CHECK(a.grad()[0] == 0.0);
  CHECK(a.grad()[1] == 1.0);
  CHECK(a.grad()[2] == 0.0);
}

TEST_CASE("matmul / linear / layer_norm gradients match finite differences") {
  Rng rng(13);
  Tensor a = randn({3, 4}, rng);
  Tensor b = randn({4, 2}, rng);
  check_grads({a, b}, [&] { return sum(matmul(a, b)); });

  Tensor x = randn({3, 5}, rng);
  Tensor W = randn({2, 5}, rng);
  Tensor bias = randn({2}, rng);
  check_grads({x, W, bias}, [&] { return sum(mul(linear(x, W, bias), linear(x, W, bias))); });

  Tensor g = randn({5}, rng);
  Tensor be = randn({5}, rng);
  check_grads({x, g, be}, [&] { return sum(mul(layer_norm(x, g, be), layer_norm(x, g, be))); },
              1e-4, 1e-6);
}

TEST_CASE("masked log softmax: values, normalization, gradients") {
  Tensor logits = Tensor::from_data({1, 3}, {1.0, 2.0, 3.0}, true);
  Tensor mask = Tensor::from_data({1, 3}, {1.0, 1.0, 1.0});
  Tensor lp = masked_log_softmax(logits, mask);
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i)
    CHECK(lp.data()[static_cast<size_t>(i)] ==
          doctest::Approx(i + 1.0 - std::log(z)).epsilon(1e-12));
  double psum = 0;
  for (int i = 0; i < 3; ++i) psum += std::exp(lp.data()[static_cast<size_t>(i)]);
  CHECK(psum == doctest::Approx(1.0).epsilon(1e-12));

  // masked entries: probability exactly zero, no gradient flow
  Tensor m2 = Tensor::from_data({1, 3}, {0.0, 1.0, 1.0});
  Tensor lp2 = masked_log_softmax(logits, m2);
  CHECK(std::exp(lp2.data()[0]) == 0.0);
  backward(sum(lp2));
  CHECK(logits.grad()[0] == 0.0);
  logits.zero_grad();

  Rng rng(3);
  Tensor l3 = randn({4, 6}, rng);
  std::vector<double> md(24, 1.0);
  md[1] = md[7] = md[20] = 0.0;
  Tensor m3 = Tensor::from_data({4, 6}, md);
  check_grads({l3}, [&] { return sum(mul(masked_log_softmax(l3, m3), m3)); });

  Tensor none = Tensor::from_data({1, 3}, {0.0, 0.0, 0.0});
  CHECK_THROWS(masked_log_softmax(logits, none));
}

TEST_CASE("gather_cols picks the indexed log-probs and routes gradients") {
  Tensor lp = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor out = gather_cols(lp, {2, 0});
  CHECK(out.data()[0] == 3.0);
  CHECK(out.data()[1] == 4.0);
  backward(sum(out));
  CHECK(lp.grad()[2] == 1.0);
  CHECK(lp.grad()[3] == 1.0);
  CHECK(lp.grad()[0] == 0.0);
}

TEST_CASE("gradient accumulation and tape clearing") {
  Tensor a = Tensor::from_data({2}, {1.0, 2.0}, true);
  backward(sum(mul(a, a)));
  backward(sum(mul(a, a)));
  CHECK(a.grad()[0] == 4.0);  // two accumulated passes of 2a
  a.zero_grad();
  backward(sum(a));
  CHECK(a.grad()[0] == 1.0);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor a = Tensor::from_data({2}, {1.0, 2.0}, true);
  NoGradGuard ng;
  Tensor s = sum(mul(a, a));
  CHECK(s.scalar() == 5.0);
  CHECK_FALSE(s.requires_grad());
}

TEST_CASE("orthogonal init: shape, orthogonality, gain, determinism") {
  Rng rng(42);
  Tensor w1 = orthogonal_init(1, 1, 0.01, rng);
  CHECK(std::abs(std::abs(w1.scalar()) - 0.01) < 1e-15);

  Rng rng2(9);
  Tensor w = orthogonal_init(4, 4, 1.0, rng2);
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 4; ++j) {
      double acc = 0;
      for (long k = 0; k < 4; ++k)
        acc += w.data()[static_cast<size_t>(k * 4 + i)] * w.data()[static_cast<size_t>(k * 4 + j)];
      CHECK(std::abs(acc - (i == j ? 1.0 : 0.0)) < 1e-6);
    }

  // rows <= cols: W W^T = gain^2 I; also tall matrices have orthonormal columns
  Rng rng3(5);
  Tensor r = orthogonal_init(3, 7, 2.0, rng3);
  for (long i = 0; i < 3; ++i)
    for (long j = 0; j < 3; ++j) {
      double acc = 0;
      for (long k = 0; k < 7; ++k)
        acc += r.data()[static_cast<size_t>(i * 7 + k)] * r.data()[static_cast<size_t>(j * 7 + k)];
      CHECK(std::abs(acc - (i == j ? 4.0 : 0.0)) < 1e-6);
    }

  Rng ra(77), rb(77);
  Tensor wa = orthogonal_init(6, 6, 0.5, ra);
  Tensor wb = orthogonal_init(6, 6, 0.5, rb);
  for (long i = 0; i < wa.size(); ++i)
    CHECK(wa.data()[static_cast<size_t>(i)] == wb.data()[static_cast<size_t>(i)]);
}

TEST_CASE("shape mismatches are rejected") {
  Tensor a = Tensor::from_data({2}, {1, 2});
  Tensor b = Tensor::from_data({3}, {1, 2, 3});
  CHECK_THROWS(add(a, b));
  CHECK_THROWS(matmul(Tensor::from_data({2, 2}, {1, 2, 3, 4}),
                      Tensor::from_data({3, 1}, {1, 2, 3})));
}
