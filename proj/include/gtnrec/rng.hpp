#pragma once

#include <cstdint>
#include <random>

namespace gtnrec {

/// Derives an independent stream seed from one root seed (splitmix64
/// finalizer). Every random draw in the project flows from a single root
/// seed through this function; there are no other entropy sources.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0);

// Stream ids reserved by the library so independent consumers of the same
// root seed never collide.
inline constexpr std::uint64_t kStreamFeatures = 1;
inline constexpr std::uint64_t kStreamSplit = 2;
inline constexpr std::uint64_t kStreamWeights = 3;
inline constexpr std::uint64_t kStreamEpochShuffle = 4;

}  // namespace gtnrec
