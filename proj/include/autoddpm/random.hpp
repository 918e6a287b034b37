#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>

namespace autoddpm {

// Seeded source of uniform and standard-normal draws. One instance per
// worker; never shared across threads.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  template <class T>
  void fill_normal(std::span<T> out) {
    for (T& v : out) v = static_cast<T>(normal_(engine_));
  }

  std::mt19937_64& engine() noexcept { return engine_; }

  // Serialized engine + distribution state, for checkpointed resumption.
  std::string state() const;
  void restore(const std::string& state);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Stateless seed derivation (splitmix64 chain) so per-image / per-epoch
// streams do not depend on evaluation order.
std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);
std::uint64_t hash_string(const std::string& s);

}  // namespace autoddpm
