// Copyright 2026 The DPLM Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPLM_RNG_H_
#define DPLM_RNG_H_

#include <cmath>
#include <cstdint>
#include <random>

namespace dplm {

// splitmix64 finalizer; used to derive independent stream seeds from
// (seed, counter...) tuples.
inline uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t DeriveSeed(uint64_t seed, uint64_t a) {
  return SplitMix64(SplitMix64(seed) ^ SplitMix64(a + 0x1234567ULL));
}

inline uint64_t DeriveSeed(uint64_t seed, uint64_t a, uint64_t b) {
  return DeriveSeed(DeriveSeed(seed, a), b);
}

// Deterministic Gaussian stream. Box-Muller on top of mt19937_64 so the
// byte-for-byte output does not depend on the standard library's
// normal_distribution implementation.
class GaussianRng {
 public:
  explicit GaussianRng(uint64_t seed) : engine_(seed) {}

  double Uniform() {
    // 53-bit uniform in [0, 1).
    return (engine_() >> 11) * 0x1.0p-53;
  }

  double Gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = Uniform();
    double u2 = Uniform();
    // Avoid log(0).
    while (u1 <= 0.0) u1 = Uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dplm

#endif  // DPLM_RNG_H_
