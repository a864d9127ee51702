#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "mappo/nn.hpp"

using namespace mappo;

namespace {

void check_grads(const std::vector<Tensor>& leaves, const std::function<Tensor()>& loss_fn,
                 double tol = 1e-4, double h = 1e-5) {
  Tensor loss = loss_fn();
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

void fill(Tensor t, double v) {
  for (auto& x : t.data()) x = v;
}

}  // namespace

TEST_CASE("gru cell: zero params and zero state give zero output") {
  Rng rng(1);
  GruCell cell(2, 3, rng);
  for (Tensor* t : {&cell.Wr, &cell.Wz, &cell.Wn, &cell.Ur, &cell.Uz, &cell.Un, &cell.br,
                    &cell.bz, &cell.bxn, &cell.bhn})
    fill(*t, 0.0);
  Tensor x = Tensor::from_data({1, 2}, {0.3, -0.7});
  GruState h = GruState::zeros(1, 3);
  GruState out = cell.forward(x, h);
  for (double v : out.hidden.data()) CHECK(v == 0.0);  // tanh(0) candidate, zero blend
}

TEST_CASE("gru cell: scalar recurrence matches a hand-set oracle") {
  Rng rng(2);
  GruCell cell(1, 1, rng);
  const double Wr = 0.5, Ur = 0.25, br = 0.1;
  const double Wz = -0.3, Uz = 0.2, bz = 0.05;
  const double Wn = 0.8, Un = -0.4, bxn = 0.2, bhn = 0.3;
  cell.Wr.data()[0] = Wr;
  cell.Ur.data()[0] = Ur;
  cell.br.data()[0] = br;
  cell.Wz.data()[0] = Wz;
  cell.Uz.data()[0] = Uz;
  cell.bz.data()[0] = bz;
  cell.Wn.data()[0] = Wn;
  cell.Un.data()[0] = Un;
  cell.bxn.data()[0] = bxn;
  cell.bhn.data()[0] = bhn;
  const double x = 0.7, h0 = 0.6;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  double r = sig(Wr * x + Ur * h0 + br);
  double z = sig(Wz * x + Uz * h0 + bz);
  double nc = std::tanh(Wn * x + bxn + r * (Un * h0 + bhn));
  double expect = (1.0 - z) * nc + z * h0;
  GruState out = cell.forward(Tensor::from_data({1, 1}, {x}),
                              GruState{Tensor::from_data({1, 1}, {h0})});
  CHECK(out.hidden.scalar() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("gru cell gradients match finite differences") {
  Rng rng(3);
  GruCell cell(3, 4, rng);
  Tensor x = Tensor::from_data({2, 3}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6}, true);
  Tensor h0 = Tensor::from_data({2, 4}, {0.1, 0.2, -0.1, 0.0, 0.3, -0.3, 0.2, 0.1}, true);
  std::vector<Tensor> leaves = {x,        h0,       cell.Wr, cell.Wz, cell.Wn, cell.Ur,
                                cell.Uz,  cell.Un,  cell.br, cell.bz, cell.bxn, cell.bhn};
  check_grads(leaves, [&] { return sum(cell.forward(x, GruState{h0}).hidden); });
}

TEST_CASE("full recurrent net gradients match finite differences") {
  Rng rng(5);
  NetConfig cfg;
  cfg.input_dim = 4;
  cfg.output_dim = 3;
  cfg.hidden_dim = 5;
  cfg.num_fc = 2;
  cfg.num_fc_after = 1;
  cfg.recurrent = true;
  cfg.feature_norm = true;
  cfg.act = Activation::Tanh;
  cfg.output_gain = 0.01;
  Net net(cfg, rng);
  Tensor x = Tensor::from_data({2, 4}, {0.3, -1.2, 0.5, 0.7, -0.4, 0.9, 1.1, -0.6});
  Tensor h = Tensor::from_data({2, 5}, std::vector<double>(10, 0.1));
  std::vector<Tensor> params = net.params();
  // two chained steps so gradients flow through the recurrent state
  check_grads(params, [&] {
    auto [y1, h1] = net.step(x, GruState{h});
    auto [y2, h2] = net.step(x, h1);
    return add(sum(mul(y1, y1)), sum(mul(y2, y2)));
  });
}

TEST_CASE("mlp net (relu, no feature norm) gradients match finite differences") {
  Rng rng(6);
  NetConfig cfg;
  cfg.input_dim = 3;
  cfg.output_dim = 2;
  cfg.hidden_dim = 4;
  cfg.num_fc = 2;
  cfg.num_fc_after = 0;
  cfg.recurrent = false;
  cfg.feature_norm = false;
  cfg.act = Activation::Relu;
  cfg.output_gain = 1.0;
  Net net(cfg, rng);
  Tensor x = Tensor::from_data({3, 3}, {0.3, -1.2, 0.5, 0.7, -0.4, 0.9, 1.1, -0.6, 0.2});
  GruState h = GruState::zeros(3, 4);
  check_grads(net.params(), [&] {
    auto [y, hn] = net.step(x, h);
    return sum(mul(y, y));
  });
}

TEST_CASE("categorical: uniform, forced and softmax-oracle cases") {
  // logits [0,0], all available -> p = [0.5,0.5], entropy ln 2
  Categorical u = Categorical::from_logits(Tensor::from_data({1, 2}, {0.0, 0.0}),
                                           Tensor::from_data({1, 2}, {1.0, 1.0}));
  CHECK(std::exp(u.logp.data()[0]) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(u.entropy().scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // logits [10,0], first masked -> forced second action, entropy exactly 0
  Categorical f = Categorical::from_logits(Tensor::from_data({1, 2}, {10.0, 0.0}),
                                           Tensor::from_data({1, 2}, {0.0, 1.0}));
  CHECK(std::exp(f.logp.data()[0]) == 0.0);
  CHECK(std::exp(f.logp.data()[1]) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.entropy().scalar() == 0.0);
  Rng rng(4);
  for (int i = 0; i < 20; ++i) CHECK(f.sample(rng)[0] == 1);
  CHECK(f.argmax()[0] == 1);

  Categorical s = Categorical::from_logits(Tensor::from_data({1, 3}, {1.0, 2.0, 3.0}),
                                           Tensor::from_data({1, 3}, {1.0, 1.0, 1.0}));
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i)
    CHECK(std::exp(s.logp.data()[static_cast<size_t>(i)]) ==
          doctest::Approx(std::exp(i + 1.0) / z).epsilon(1e-12));
}

TEST_CASE("categorical sampling follows the distribution") {
  Categorical c = Categorical::from_logits(
      Tensor::from_data({1, 3}, {std::log(0.2), std::log(0.5), std::log(0.3)}),
      Tensor::from_data({1, 3}, {1.0, 1.0, 1.0}));
  Rng rng(99);
  int counts[3] = {0, 0, 0};
  const int N = 20000;
  for (int i = 0; i < N; ++i) counts[c.sample(rng)[0]] += 1;
  CHECK(std::abs(counts[0] / double(N) - 0.2) < 0.02);
  CHECK(std::abs(counts[1] / double(N) - 0.5) < 0.02);
  CHECK(std::abs(counts[2] / double(N) - 0.3) < 0.02);
}

TEST_CASE("net construction wires the configured stack") {
  Rng rng(8);
  NetConfig cfg;
  cfg.input_dim = 10;
  cfg.output_dim = 7;
  cfg.hidden_dim = 64;
  cfg.num_fc = 2;
  cfg.num_fc_after = 1;
  cfg.recurrent = true;
  Net net(cfg, rng);
  // input norm (2) + 2 fc with norms (2*4) + gru (10) + gru norm (2) + after (2) + head (2)
  CHECK(net.named_params("n").size() == 2 + 8 + 10 + 2 + 2 + 2);
  Tensor x = Tensor::zeros({3, 10});
  auto [y, h] = net.step(x, GruState::zeros(3, 64));
  CHECK(y.dim(0) == 3);
  CHECK(y.dim(1) == 7);
  CHECK(h.hidden.dim(1) == 64);
}
