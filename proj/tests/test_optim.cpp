#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mappo/optim.hpp"

using namespace mappo;

TEST_CASE("adam first step matches the bias-corrected formula") {
  Tensor p = Tensor::from_data({1}, {1.0}, true);
  Adam opt({p}, 0.01, 1e-5);
  backward(scale(p, 0.5));  // grad = 0.5
  opt.step();
  double m_hat = 0.5;   // 0.1*0.5 / (1-0.9)
  double v_hat = 0.25;  // 0.001*0.25 / (1-0.999)
  double expect = 1.0 - 0.01 * m_hat / (std::sqrt(v_hat) + 1e-5);
  CHECK(p.data()[0] == doctest::Approx(expect).epsilon(1e-14));
  CHECK(opt.state().step_count == 1);
}

TEST_CASE("adam converges on a quadratic") {
  Tensor p = Tensor::from_data({2}, {5.0, -3.0}, true);
  Adam opt({p}, 0.1);
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    backward(sum(mul(p, p)));
    opt.step();
  }
  CHECK(std::abs(p.data()[0]) < 1e-3);
  CHECK(std::abs(p.data()[1]) < 1e-3);
}

TEST_CASE("weight decay shrinks parameters with zero gradient") {
  Tensor p = Tensor::from_data({1}, {2.0}, true);
  Adam opt({p}, 0.1, 1e-8, 0.5);
  p.grad();  // allocate zero grad
  opt.step();
  CHECK(p.data()[0] < 2.0);
}

TEST_CASE("adam rejects non-finite gradients") {
  Tensor p = Tensor::from_data({1}, {1.0}, true);
  Adam opt({p}, 0.01);
  p.grad()[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(opt.step());
}

TEST_CASE("gradient clipping rescales to the requested global norm") {
  Tensor a = Tensor::from_data({2}, {0.0, 0.0}, true);
  Tensor b = Tensor::from_data({1}, {0.0}, true);
  a.grad()[0] = 3.0;
  a.grad()[1] = 0.0;
  b.grad()[0] = 4.0;  // global norm 5
  std::vector<Tensor> ps = {a, b};
  CHECK(grad_norm(ps) == doctest::Approx(5.0).epsilon(1e-12));
  double s = clip_grad_norm(ps, 1.0);
  CHECK(s == doctest::Approx(0.2).epsilon(1e-9));
  CHECK(grad_norm(ps) == doctest::Approx(1.0).epsilon(1e-9));

  // under the cap: untouched
  double s2 = clip_grad_norm(ps, 10.0);
  CHECK(s2 == 1.0);
  CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-9));
}
