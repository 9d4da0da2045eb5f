#pragma once

#include <cstdint>
#include <random>

namespace sed {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Independent stream keyed by (seed, a, b). Streams for different keys are
/// decorrelated, so per-sample / per-chain generation is order-independent.
Rng derive_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0);

}  // namespace sed
