// Copyright 2026 The lodnerf Authors
// SPDX-License-Identifier: Apache-2.0

#include "lodnerf/rng.hpp"

namespace lodnerf {

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t key_a, std::uint64_t key_b)
    : key_(mix64(mix64(mix64(seed) ^ key_a) ^ (key_b * 0xd1b54a32d192ed03ULL))) {}

std::uint64_t CounterRng::next_u64() {
  return mix64(key_ ^ (counter_++ * 0x9e3779b97f4a7c15ULL));
}

double CounterRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

}  // namespace lodnerf
