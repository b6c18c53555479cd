#pragma once

// Frozen-representation evaluation: per-utterance features are a learned
// softmax-weighted sum of the predictor's two hidden states, mean-pooled over
// frames, classified by a linear probe trained with full-batch gradient
// descent. The upstream predictor weights are never touched.

#include <array>
#include <cstdint>
#include <vector>

#include "brq/audio.hpp"
#include "brq/matrix.hpp"
#include "brq/predictor.hpp"
#include "brq/trainer.hpp"

namespace brq {

struct LayerWeights {
    std::array<double, 2> logits{0.0, 0.0}; // over (h1, h2)
    std::array<double, 2> effective() const; // softmax(logits), sums to 1
};

struct ProbeParams {
    Matrix w;               // H x class_count
    std::vector<double> b;  // class_count
    LayerWeights layer_weights;
};

// Mean-pooled hidden states of one utterance under clean (unmasked) features.
struct PooledStates {
    std::vector<double> h1; // length H
    std::vector<double> h2; // length H
};
PooledStates pooled_hidden_states(const PredictorParams& params, const AudioBuffer& audio,
                                  int stack);

// w1*pooled_h1 + w2*pooled_h2 with the given layer weights.
std::vector<double> extract_features(const PredictorParams& params,
                                     const LayerWeights& weights, const AudioBuffer& audio,
                                     int stack);

struct ProbeDataset {
    Matrix pooled_h1;        // N x H
    Matrix pooled_h2;        // N x H
    std::vector<int> labels; // N
};

struct ProbeTrainConfig {
    double lr = 0.5;
    int steps = 2000;
    std::uint64_t seed = 0; // recorded in reports; training itself is zero-init
};

// Joint full-batch gradient descent over the linear map, bias and layer
// weight logits under softmax cross-entropy.
ProbeParams train_probe(const ProbeDataset& train, int class_count,
                        const ProbeTrainConfig& config);

// Argmax-match fraction; ties break to the lowest class index.
double evaluate_probe(const ProbeParams& probe, const ProbeDataset& data);

// Pooled states for every manifest utterance under the given (frozen)
// upstream params.
ProbeDataset build_probe_dataset(const PredictorParams& params,
                                 const std::vector<ManifestEntry>& manifest,
                                 const std::vector<int>& labels, int stack);

// Deterministic shuffled split; the test side gets round(n * test_fraction).
std::pair<ProbeDataset, ProbeDataset> split_probe_dataset(const ProbeDataset& all,
                                                          double test_fraction,
                                                          std::uint64_t seed);

} // namespace brq
