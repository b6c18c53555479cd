#pragma once

// Trainable prediction head: a two-hidden-layer tanh network over a local
// context window of stacked frames, producing per-frame logits over the
// codebook. Loss is cross entropy averaged over masked positions only, with
// analytic gradients (fixed ascending-frame accumulation order).

#include <cstdint>
#include <string>
#include <vector>

#include "brq/masking.hpp"
#include "brq/matrix.hpp"
#include "brq/quantizer.hpp"

namespace brq {

struct PredictorConfig {
    int input_dim = 320;
    int hidden_dim = 256;
    int context_radius = 1; // stacked frames on each side
    int codebook_size = 8192;
    std::uint64_t seed = 0;
};

struct PredictorParams {
    Matrix w1;              // ((2r+1)*D) x H
    std::vector<double> b1; // H
    Matrix w2;              // H x H
    std::vector<double> b2; // H
    Matrix w_out;           // H x K
    std::vector<double> b_out; // K
    PredictorConfig config;
};

struct Activations {
    Matrix h1;     // T' x H, post-tanh
    Matrix h2;     // T' x H, post-tanh
    Matrix logits; // T' x K
};

struct Gradients {
    Matrix w1;
    std::vector<double> b1;
    Matrix w2;
    std::vector<double> b2;
    Matrix w_out;
    std::vector<double> b_out;
};

struct LossResult {
    double loss = 0.0;
    std::size_t masked_count = 0;
    std::vector<double> per_position; // -ln softmax[target] at masked rows, 0 elsewhere
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coordinates_checked = 0;
    int trials = 0;
};

// Named view over the parameter tensors in canonical order
// (W1, b1, W2, b2, W_out, b_out). Checkpoints and Adam both follow it.
struct TensorRef {
    const char* name;
    std::vector<double>* data;
    std::vector<std::size_t> shape;
};
struct ConstTensorRef {
    const char* name;
    const std::vector<double>* data;
    std::vector<std::size_t> shape;
};
std::vector<TensorRef> tensor_refs(PredictorParams& params);
std::vector<ConstTensorRef> tensor_refs(const PredictorParams& params);
std::vector<TensorRef> tensor_refs(Gradients& grads);
std::vector<ConstTensorRef> tensor_refs(const Gradients& grads);

// Xavier-uniform weights, zero biases, drawn from one stream seeded by
// config.seed in canonical tensor order.
PredictorParams init_predictor(const PredictorConfig& config);

Gradients zero_gradients(const PredictorParams& params);

// feats is T' x D (typically masked stacked features). Context windows are
// zero-padded at the sequence edges.
Activations forward(const PredictorParams& params, const Matrix& feats);

LossResult masked_ce_loss(const Matrix& logits, const TargetSequence& targets,
                          const MaskVector& loss_mask);

// Exact gradients of masked_ce_loss; requires activations produced by
// forward on (params, feats).
Gradients backward(const PredictorParams& params, const Matrix& feats,
                   const Activations& acts, const TargetSequence& targets,
                   const MaskVector& loss_mask);

// Compares backward against central finite differences of the loss for
// n_trials random instances. rel = |a-f| / max(|a|, |f|, 1e-8).
GradCheckReport grad_check(const PredictorConfig& config, int n_trials, double epsilon,
                           int frames = 3);

} // namespace brq
