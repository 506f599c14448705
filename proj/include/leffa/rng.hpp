#pragma once

#include <cmath>
#include <cstdint>
#include <random>

// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so
// sampled streams are identical across standard libraries.

namespace leffa {

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform() {  // [0,1)
    return double(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int64_t uniform_int(int64_t n) { return int64_t(uniform() * double(n)) % n; }

  double gaussian() {  // Box-Muller, one value per pair
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace leffa
