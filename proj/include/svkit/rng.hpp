#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace svkit {

// Deterministic random source. The engine (mt19937_64) has a fully
// specified output stream; the distributions below are hand-rolled so
// generated corpora, samplers, and initializations are bit-reproducible
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Unbiased via rejection of the partial block.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    std::uint64_t x = 0, r = 0;
    do {
      x = next_u64();
      r = x % n;
    } while (x - r > UINT64_MAX - (n - 1));
    return r;
  }

  // Standard normal via Box-Muller; draws come in cached pairs.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double gaussian(double mean, double stddev) {
    return mean + stddev * gaussian();
  }

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& values) {
    if (values.size() < 2) return;
    for (std::size_t i = values.size() - 1; i > 0; --i) {
      const std::size_t j =
          static_cast<std::size_t>(uniform_int(static_cast<std::uint64_t>(i) + 1));
      std::swap(values[i], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace svkit
