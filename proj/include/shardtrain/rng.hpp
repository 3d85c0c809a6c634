// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace shardtrain {

// splitmix64 finalizer. Good avalanche behaviour, cheap, stateless.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Folds a tuple of integers into one key. Counter-based: the same words give
// the same key on every platform, which is what makes resume bit-exact.
constexpr std::uint64_t mix_key(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x853c49e6748fea9bULL;
  for (std::uint64_t w : words) {
    h = mix64(h ^ w);
  }
  return h;
}

// Distinguishes independent random streams derived from one run seed.
namespace streams {
constexpr std::uint64_t kDatasetMeans = 0x01;
constexpr std::uint64_t kDatasetSamples = 0x02;
constexpr std::uint64_t kInit = 0x03;
constexpr std::uint64_t kViews = 0x04;
constexpr std::uint64_t kBatch = 0x05;
constexpr std::uint64_t kProbeSplit = 0x06;
constexpr std::uint64_t kProbeShuffle = 0x07;
constexpr std::uint64_t kProbeInit = 0x08;
}  // namespace streams

// Small deterministic generator seeded by a mixed key. All draws are defined
// in terms of IEEE-754 double operations only.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : state_(key) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  // Uniform in [0, 1), 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in (0, 1]; safe as a log argument.
  double uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. The second value of each pair is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) {
      return 0;
    }
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) {
        return r % n;
      }
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace shardtrain
