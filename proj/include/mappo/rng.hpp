#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mappo {

// splitmix64: used to derive independent seed streams from one master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seeds for the three independent randomness sources of a run. Ablations can
// hold init fixed while varying env stochasticity.
struct SeedBundle {
  std::uint64_t env_seed;
  std::uint64_t init_seed;
  std::uint64_t sample_seed;

  static SeedBundle from_master(std::uint64_t master) {
    std::uint64_t s = master;
    SeedBundle b;
    b.env_seed = splitmix64(s);
    b.init_seed = splitmix64(s);
    b.sample_seed = splitmix64(s);
    return b;
  }
};

class Rng {
 public:
  Rng() : gen_(0) {}
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
  // inclusive bounds
  long randint(long lo, long hi) {
    return std::uniform_int_distribution<long>(lo, hi)(gen_);
  }
  std::mt19937_64& engine() { return gen_; }

  std::string serialize() const;
  void deserialize(const std::string& s);

 private:
  std::mt19937_64 gen_;
};

}  // namespace mappo
