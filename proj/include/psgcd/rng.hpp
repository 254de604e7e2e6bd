#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace psgcd {

// Seeded RNG with hand-rolled distributions so that sequences depend only on
// the mt19937_64 engine state. Streams serialize/restore exactly, which is
// what checkpoint resume relies on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1), 53-bit resolution.
  double uniform01() { return double(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller; draws two uniforms per call, keeps no spare state.
  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // [0, n), modulo rejection to keep it unbiased.
  int uniform_int(int n) {
    std::uint64_t bound = std::uint64_t(n);
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return int(x % bound);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = int(v.size()) - 1; i > 0; --i) std::swap(v[i], v[std::size_t(uniform_int(i + 1))]);
  }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from a root seed and a purpose tag, so
// that all randomness in a run flows from the single recorded root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

}  // namespace psgcd
