#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "densesr/common.hpp"

namespace densesr {

// Seeded generator with explicitly coded distributions so that draws are
// reproducible bit for bit and the whole state round-trips through text.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound), rejection sampled.
  std::uint64_t integer(std::uint64_t bound) {
    if (bound == 0) fail_config("integer() needs a positive bound");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  // Standard normal via Box-Muller. Draws two uniforms per call and keeps no
  // cached spare, so the engine state fully determines the stream.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[integer(i)]);
    }
  }

  // Derived generator for independent uses of one seed (init vs. batching).
  Rng fork(std::uint64_t stream) const {
    std::uint64_t z = seed_ ^ (0x9E3779B97F4A7C15ull * (stream + 1));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return Rng(z ^ (z >> 31));
  }

  std::string save_state() const {
    std::ostringstream oss;
    oss << engine_;
    return oss.str();
  }

  void load_state(const std::string& state) {
    std::istringstream iss(state);
    iss >> engine_;
    if (iss.fail()) fail_runtime("malformed rng state");
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace densesr
