#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace lgd {

// All randomness in the library flows from one master seed through named
// sub-streams, so components (init / data order / augmentation / sketch
// tables) can be re-seeded independently without disturbing each other.
// The generator is self-contained: identical draws on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  // Derive an independent stream identified by a tag (and optional index).
  Rng derive(std::string_view tag) const {
    std::uint64_t h = state_;
    for (char c : tag) h = (h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c))) * 0x100000001b3ull;
    return Rng(splitmix(h));
  }
  Rng derive(std::string_view tag, std::uint64_t index) const {
    Rng r = derive(tag);
    r.state_ = splitmix(r.state_ ^ (0x9e3779b97f4a7c15ull * (index + 1)));
    return r;
  }

  std::uint64_t next_u64() {
    // xorshift* step on a splitmix-initialized state
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  std::int64_t uniform_int(std::int64_t n) {
    std::int64_t v = static_cast<std::int64_t>(uniform() * static_cast<double>(n));
    return v >= n ? n - 1 : v;
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(6.283185307179586476925286766559 * u2);
    have_spare_ = true;
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  bool coin() { return (next_u64() & 1ull) != 0; }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace lgd
