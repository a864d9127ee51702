#include "mappo/valuenorm.hpp"

#include <cmath>
#include <stdexcept>

namespace mappo {

namespace {
constexpr double kVarFloor = 1e-8;
}

void RunningMoments::update(std::span<const double> batch) {
  if (batch.empty()) throw std::invalid_argument("RunningMoments::update: empty batch");
  double bm = 0.0, bsq = 0.0;
  for (double v : batch) {
    if (!std::isfinite(v))
      throw std::invalid_argument("RunningMoments::update: non-finite value");
    bm += v;
    bsq += v * v;
  }
  double n = static_cast<double>(batch.size());
  bm /= n;
  bsq /= n;
  mean_ = decay_ * mean_ + (1.0 - decay_) * bm;
  mean_sq_ = decay_ * mean_sq_ + (1.0 - decay_) * bsq;
  debias_accum_ = decay_ * debias_accum_ + (1.0 - decay_);
}

double RunningMoments::mean() const {
  return initialized() ? mean_ / debias_accum_ : 0.0;
}

double RunningMoments::var() const {
  if (!initialized()) return 1.0;
  double m = mean_ / debias_accum_;
  double msq = mean_sq_ / debias_accum_;
  double v = msq - m * m;
  return v < kVarFloor ? kVarFloor : v;
}

double RunningMoments::stddev() const { return std::sqrt(var()); }

double RunningMoments::normalize(double x) const {
  return (x - mean()) / stddev();
}

double RunningMoments::denormalize(double y) const {
  return y * stddev() + mean();
}

void RunningMoments::normalize(std::span<double> xs) const {
  double m = mean(), s = stddev();
  for (double& x : xs) x = (x - m) / s;
}

void RunningMoments::denormalize(std::span<double> ys) const {
  double m = mean(), s = stddev();
  for (double& y : ys) y = y * s + m;
}

}  // namespace mappo
