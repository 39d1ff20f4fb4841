#pragma once

#include <cstdint>
#include <random>

namespace adaann {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream). Streams with different ids do not
/// depend on each other, so trial i is unaffected by the presence of trial j.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32), 0x41646141u};
  return Rng(seq);
}

}  // namespace adaann
