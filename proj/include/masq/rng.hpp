#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace masq {

/// Portable random source. std::mt19937_64 output is fixed by the standard;
/// the distributions below are written out so that sequences are identical
/// on every platform (std::normal_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::mt19937_64& engine() { return engine_; }
  const std::mt19937_64& engine() const { return engine_; }

  bool operator==(const Rng& other) const {
    return engine_ == other.engine_ && has_spare_ == other.has_spare_ &&
           (!has_spare_ || spare_ == other.spare_);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Child seed for stream `stream` of parent seed `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(seed ^ mix_seed(stream + 0x9E3779B97F4A7C15ULL));
}

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace masq
