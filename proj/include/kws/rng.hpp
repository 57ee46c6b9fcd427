// kws/rng.hpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.

#ifndef KWS_RNG_HPP_
#define KWS_RNG_HPP_

#include <cmath>
#include <cstdint>

namespace kws {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// One-shot mix of two 64-bit values into one; used to derive per-object
// stream seeds so that outputs are pure functions of (seed, id, tag).
inline uint64_t mix64(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b * 0xff51afd7ed558ccdull + 0x2545f4914f6cdd1dull);
  return splitmix64(s);
}

// Deterministic stream generator. Hand-rolled distributions, so results do
// not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed), have_spare_(false), spare_(0.0) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  // Marsaglia polar method.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  // Fisher-Yates shuffle of an index container.
  template <typename Container>
  void shuffle(Container& c) {
    for (size_t i = c.size(); i > 1; --i) {
      size_t j = size_t(below(i));
      std::swap(c[i - 1], c[j]);
    }
  }

 private:
  uint64_t state_;
  bool have_spare_;
  double spare_;
};

// Stateless per-example uniform in [0, 1): a pure hash of (seed, id).
// Reproducible regardless of evaluation order.
inline double hash_uniform(uint64_t seed, uint64_t id) {
  return double(mix64(seed, id) >> 11) * 0x1.0p-53;
}

}  // namespace kws

#endif  // KWS_RNG_HPP_
