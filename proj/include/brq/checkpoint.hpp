#pragma once

// Checkpoint container: 4-byte magic "BRQ1", little-endian uint32 length of a
// UTF-8 JSON header (configs plus tensor names/shapes/byte offsets), then the
// tensors as little-endian float32 in header order. Predictor tensors come
// first, the frozen quantizer (projection, codebook) alongside. Writes are
// atomic (temp file + rename).

#include <string>

#include "brq/predictor.hpp"
#include "brq/quantizer.hpp"

namespace brq {

struct Checkpoint {
    PredictorParams predictor;
    Quantizer quantizer;
    int stack = 4;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

} // namespace brq
