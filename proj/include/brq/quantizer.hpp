#pragma once

// Frozen random-projection quantizer. A seeded random linear map projects
// each stacked feature frame; the index of the nearest codebook entry under
// normalized Euclidean distance is the discrete training target. Neither the
// projection nor the codebook is ever updated.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "brq/audio.hpp"
#include "brq/matrix.hpp"

namespace brq {

struct QuantizerConfig {
    std::uint64_t seed = 0;
    int input_dim = 320;
    int code_dim = 16;
    int codebook_size = 8192;
};

struct Quantizer {
    Matrix projection; // D x code_dim, frozen
    Matrix codebook;   // K x code_dim, frozen
    QuantizerConfig config;
};

struct TargetSequence {
    std::vector<std::uint32_t> indices; // each in [0, K)
};

struct UtilizationStats {
    std::vector<std::uint64_t> histogram; // K counts, sums to total frames
    double normalized_entropy = 0.0;      // H / ln(K); 1.0 by convention for K == 1
    std::size_t distinct_codes = 0;
};

// Projection entries are Xavier-uniform on (-a, a) with a = sqrt(6/(D+code_dim)),
// codebook entries standard normal. All draws come from one stream seeded by
// config.seed, row-major, projection first.
Quantizer init_quantizer(const QuantizerConfig& config);

// argmin_k || p/|p| - c_k/|c_k| || per frame, distances accumulated in long
// double and compared exactly; ties break to the lowest index; a zero-norm
// projection is used unnormalized.
TargetSequence quantize(const Quantizer& q, const StackedFeatures& feats);

UtilizationStats codebook_utilization(const std::vector<std::uint32_t>& targets,
                                      int codebook_size);

// Text dump: one line per utterance, "id idx idx ...", LF-terminated.
void write_target_dump(const std::string& path,
                       const std::vector<std::pair<std::string, TargetSequence>>& utterances);

} // namespace brq
