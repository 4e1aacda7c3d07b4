// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace lodnerf {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: the stream is a pure function of
/// (seed, key_a, key_b) and the draw counter, so any ray or sample can be
/// regenerated independently of evaluation order.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t key_a, std::uint64_t key_b = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace lodnerf
