#include "brq/masking.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "brq/error.hpp"

namespace brq {

namespace {

void check_policy(const MaskPolicy& policy) {
    if (policy.start_prob < 0.0 || policy.start_prob > 1.0 || policy.span < 1 ||
        policy.noise_std < 0.0) {
        fail(ErrorKind::InvalidConfig, "invalid mask policy");
    }
}

} // namespace

MaskSpec sample_mask(std::size_t frames, const MaskPolicy& policy, PrngState& rng) {
    check_policy(policy);
    if (frames == 0) {
        fail(ErrorKind::EmptyInput, "cannot mask an empty sequence");
    }
    MaskSpec mask;
    mask.covered.assign(frames, 0);
    for (std::size_t t = 0; t < frames; ++t) {
        if (rng.bernoulli(policy.start_prob)) {
            mask.starts.push_back(t);
            const std::size_t end = std::min(frames, t + static_cast<std::size_t>(policy.span));
            for (std::size_t u = t; u < end; ++u) {
                mask.covered[u] = 1;
            }
        }
    }
    return mask;
}

double expected_coverage(const MaskPolicy& policy) {
    check_policy(policy);
    return 1.0 - std::pow(1.0 - policy.start_prob, static_cast<double>(policy.span));
}

MelSpectrogram apply_mask(const MelSpectrogram& mel, const MaskSpec& mask,
                          const MaskPolicy& policy, PrngState& rng) {
    check_policy(policy);
    if (mask.covered.size() != mel.frames.rows) {
        fail(ErrorKind::LengthMismatch,
             "mask length " + std::to_string(mask.covered.size()) + " != frame count " +
                 std::to_string(mel.frames.rows));
    }
    MelSpectrogram out = mel;
    for (std::size_t t = 0; t < mask.covered.size(); ++t) {
        if (!mask.covered[t]) {
            continue;
        }
        double* row = out.frames.row(t);
        for (std::size_t j = 0; j < out.frames.cols; ++j) {
            row[j] = rng.gaussian(policy.noise_mean, policy.noise_std);
        }
    }
    return out;
}

MaskVector reduce_mask(const MaskSpec& mask, int stack) {
    if (stack < 1) {
        fail(ErrorKind::InvalidConfig, "stack must be >= 1");
    }
    const std::size_t t_out = mask.covered.size() / static_cast<std::size_t>(stack);
    MaskVector reduced(t_out, 0);
    for (std::size_t t = 0; t < t_out; ++t) {
        for (int s = 0; s < stack; ++s) {
            if (mask.covered[t * stack + s]) {
                reduced[t] = 1;
                break;
            }
        }
    }
    return reduced;
}

} // namespace brq
