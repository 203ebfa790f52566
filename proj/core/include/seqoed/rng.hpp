#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace seqoed {

using Rng = std::mt19937_64;

/// Independent generator for a named substream of a root seed.
///
/// All randomness in a run is derived from one root seed; each consumer
/// (prior draws, observation noise, exploration, initialization) asks for its
/// own stream, optionally further indexed (iteration, episode). Streams with
/// different names or indices are statistically independent, and the draws in
/// one stream do not depend on how many draws were taken from another.
Rng substream(std::uint64_t root_seed, std::string_view name,
              std::initializer_list<std::uint64_t> indices = {});

/// Standard normal draw.
double standard_normal(Rng& rng);

}  // namespace seqoed
