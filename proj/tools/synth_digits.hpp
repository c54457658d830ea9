#pragma once

#include <cstdint>

#include "disp/dataset.hpp"

namespace disp_tools {

/// Procedurally rendered digit glyphs in MNIST layout, for offline use.
/// Deterministic per (seed, index); heavy affine/warp/thickness jitter keeps
/// shape learning non-trivial.
disp::RawMnistSet synth_digit_corpus(std::size_t count, std::size_t side, std::uint64_t seed);

}  // namespace disp_tools
