#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "dttnet/core.hpp"

namespace dttnet {

// Deterministic RNG. The engine is std::mt19937_64 (portable sequence); the
// transforms below are hand-pinned so the same seed yields the same stream of
// doubles on every build. Every random choice in the project flows from one
// of these, seeded from the run seed.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  real uniform() { return static_cast<real>(gen_() >> 11) * 0x1.0p-53; }

  real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  long below(long n) {
    check(n > 0, "Rng::below: n must be positive");
    // Rejection sampling keeps the draw unbiased.
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return static_cast<long>(x % un);
  }

  // Standard normal via Box-Muller (no cached spare; one draw per call pair).
  real normal() {
    real u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Independent child stream, e.g. per data worker or per pattern name.
  Rng derive(uint64_t stream) const {
    return Rng(splitmix(seed_state() ^ splitmix(stream)));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (long i = static_cast<long>(v.size()) - 1; i > 0; --i) {
      long j = below(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  std::string state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  // Stable 64-bit hash for deriving per-name streams.
  static uint64_t hash_name(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  // Distinct per-instance value for derive(); mt19937_64 has no seed getter,
  // so draw one word from a copy.
  uint64_t seed_state() const {
    std::mt19937_64 copy = gen_;
    return copy();
  }

  std::mt19937_64 gen_;
};

}  // namespace dttnet
