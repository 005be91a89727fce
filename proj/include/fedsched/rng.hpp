#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedsched {

using Rng = std::mt19937_64;

/// Independent reproducible stream for one stochastic concern ("channel",
/// "energy", "data", "policy", "sgd", ...). Same (seed, label) -> same stream.
Rng make_rng(std::uint64_t seed, std::string_view stream_label);

/// Derives a child seed, e.g. one per episode, without touching any stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace fedsched
