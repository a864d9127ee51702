#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "mappo/rng.hpp"
#include "mappo/valuenorm.hpp"

using namespace mappo;

TEST_CASE("identity before any update") {
  RunningMoments m;
  CHECK(m.mean() == 0.0);
  CHECK(m.var() == 1.0);
  CHECK(m.normalize(3.7) == 3.7);
  CHECK(m.denormalize(-1.2) == -1.2);
}

TEST_CASE("constant stream: mean converges, variance floors") {
  RunningMoments m(0.9);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> batch(16, 5.0);
    m.update(batch);
  }
  CHECK(m.mean() == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(m.var() == doctest::Approx(1e-8).epsilon(1e-6));  // floored, not zero
}

TEST_CASE("two-point batch {0,2}: mean 1, var 1") {
  RunningMoments m(0.99);
  std::vector<double> batch = {0.0, 2.0};
  for (int i = 0; i < 500; ++i) m.update(batch);
  CHECK(m.mean() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(m.var() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("debiasing: a single batch reproduces its own statistics") {
  RunningMoments m(0.99999);
  std::vector<double> batch = {1.0, 2.0, 3.0, 4.0};
  m.update(batch);
  // one EMA step then debias: exactly the batch mean / mean-square
  CHECK(m.mean() == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(m.var() == doctest::Approx(7.5 - 2.5 * 2.5).epsilon(1e-9));
}

TEST_CASE("monte-carlo N(5, 3^2) stream") {
  RunningMoments m(0.999);
  Rng rng(123);
  for (int i = 0; i < 3000; ++i) {
    std::vector<double> batch(64);
    for (auto& v : batch) v = 5.0 + 3.0 * rng.normal();
    m.update(batch);
  }
  CHECK(std::abs(m.mean() - 5.0) < 0.1);
  CHECK(std::abs(m.stddev() - 3.0) < 0.1);
}

TEST_CASE("denormalize is the inverse of normalize to 1e-9") {
  RunningMoments m(0.99);
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> batch(32);
    for (auto& v : batch) v = rng.uniform(-100.0, 100.0);
    m.update(batch);
  }
  for (int i = 0; i < 100; ++i) {
    double x = rng.uniform(-1000.0, 1000.0);
    CHECK(std::abs(m.denormalize(m.normalize(x)) - x) < 1e-9);
  }
  // span variants
  std::vector<double> xs = {-3.0, 0.0, 42.0};
  std::vector<double> ys = xs;
  m.normalize(std::span<double>(ys));
  m.denormalize(std::span<double>(ys));
  for (size_t i = 0; i < xs.size(); ++i) CHECK(std::abs(xs[i] - ys[i]) < 1e-9);
}

TEST_CASE("post-normalization whitening of a large batch") {
  RunningMoments m(0.99999);
  Rng rng(55);
  std::vector<double> batch(10000);
  for (auto& v : batch) v = -7.0 + 2.5 * rng.normal();
  m.update(batch);
  std::vector<double> normed = batch;
  m.normalize(std::span<double>(normed));
  double mu = 0, sq = 0;
  for (double v : normed) {
    mu += v;
    sq += v * v;
  }
  mu /= static_cast<double>(normed.size());
  sq /= static_cast<double>(normed.size());
  CHECK(std::abs(mu) < 0.05);
  CHECK(std::abs(std::sqrt(sq - mu * mu) - 1.0) < 0.05);
}

TEST_CASE("checkpoint round-trip restores behavior exactly") {
  RunningMoments m(0.9999);
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> batch(8);
    for (auto& v : batch) v = rng.normal() * 10.0;
    m.update(batch);
  }
  RunningMoments r;
  r.restore(m.raw_mean(), m.raw_mean_sq(), m.decay(), m.debias_accum());
  CHECK(r.mean() == m.mean());
  CHECK(r.var() == m.var());
  CHECK(r.normalize(17.3) == m.normalize(17.3));
}

TEST_CASE("rejects empty and non-finite updates") {
  RunningMoments m;
  CHECK_THROWS(m.update(std::vector<double>{}));
  std::vector<double> bad = {1.0, std::numeric_limits<double>::infinity()};
  CHECK_THROWS(m.update(bad));
}
