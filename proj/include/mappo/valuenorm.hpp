#pragma once

#include <span>
#include <vector>

namespace mappo {

/// Debiased exponential running mean / second-moment pair used to standardize
/// value targets (and optionally rewards). Before the first update both
/// normalize and denormalize are the identity.
class RunningMoments {
 public:
  explicit RunningMoments(double decay = 0.99999) : decay_(decay) {}

  /// Batch update: EMA on the batch mean and mean-square, then debiasing.
  /// Order-insensitive within a batch.
  void update(std::span<const double> batch);

  double mean() const;
  double var() const;
  double stddev() const;
  bool initialized() const { return debias_accum_ > 0.0; }

  double normalize(double x) const;
  double denormalize(double y) const;
  void normalize(std::span<double> xs) const;
  void denormalize(std::span<double> ys) const;

  // checkpoint fields
  double raw_mean() const { return mean_; }
  double raw_mean_sq() const { return mean_sq_; }
  double decay() const { return decay_; }
  double debias_accum() const { return debias_accum_; }
  void restore(double mean, double mean_sq, double decay, double debias_accum) {
    mean_ = mean;
    mean_sq_ = mean_sq;
    decay_ = decay;
    debias_accum_ = debias_accum;
  }

 private:
  double mean_ = 0.0;      // EMA of batch means, undebiased
  double mean_sq_ = 0.0;   // EMA of batch mean-squares, undebiased
  double decay_ = 0.99999;
  double debias_accum_ = 0.0;
};

}  // namespace mappo
