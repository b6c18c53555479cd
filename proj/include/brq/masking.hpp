#pragma once

// Span masking over Mel frames: each frame independently starts a mask span
// with probability start_prob, covering itself and the following span-1
// frames. Covered rows are replaced by Gaussian noise; the mask is reduced to
// the stacked-frame rate (ANY over constituents) to select loss positions.

#include <cstdint>
#include <vector>

#include "brq/audio.hpp"
#include "brq/prng.hpp"

namespace brq {

using MaskVector = std::vector<std::uint8_t>;

struct MaskPolicy {
    double start_prob = 0.15;
    int span = 4;
    double noise_std = 0.1;
    double noise_mean = 0.0;
};

struct MaskSpec {
    MaskVector covered;              // length T, 1 where masked
    std::vector<std::size_t> starts; // ascending start indices
};

MaskSpec sample_mask(std::size_t frames, const MaskPolicy& policy, PrngState& rng);

// Marginal probability that an interior frame is covered: 1 - (1-p)^span.
double expected_coverage(const MaskPolicy& policy);

// Covered rows replaced entirely by N(noise_mean, noise_std) draws, row-major
// ascending; uncovered rows are bit-identical to the input.
MelSpectrogram apply_mask(const MelSpectrogram& mel, const MaskSpec& mask,
                          const MaskPolicy& policy, PrngState& rng);

// Stacked position t' is true iff any of its `stack` Mel frames is covered;
// the T mod stack tail is ignored, mirroring stack_frames.
MaskVector reduce_mask(const MaskSpec& mask, int stack);

} // namespace brq
