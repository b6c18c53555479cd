#pragma once

// Deterministic pre-training loop: synthetic corpus generation, duration-
// capped dynamic batching, linear-warmup Adam, atomic checkpointing, and a
// metrics CSV. All randomness flows from the master seed through per-purpose
// sub-streams, so a fixed seed reproduces every artifact byte for byte.

#include <cstdint>
#include <string>
#include <vector>

#include "brq/masking.hpp"
#include "brq/predictor.hpp"
#include "brq/prng.hpp"
#include "brq/quantizer.hpp"

namespace brq {

struct TrainConfig {
    std::uint64_t seed = 0;
    int steps = 300;
    double peak_lr = 0.0008;
    int warmup_steps = 1000;
    double max_batch_seconds = 100.0;
    int checkpoint_every = 0; // 0: only initial, midpoint and final
    bool deterministic = true; // writes 0.000 in the CSV timing column
    int stack = 4;
    MaskPolicy mask;
    QuantizerConfig quantizer; // seed 0 means: derive from the master seed
    PredictorConfig predictor; // input_dim/codebook_size follow stack/quantizer
};

// JSON mirror of TrainConfig (snake_case keys, nested "mask"/"quantizer"/
// "predictor" objects). Absent keys keep their defaults.
TrainConfig train_config_from_json(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& config);
TrainConfig load_train_config(const std::string& path);

// Fills derived fields (dims from stack, codebook size, sub-seeds) and
// validates. pretrain applies this itself; exposed for tools.
TrainConfig resolve_train_config(const TrainConfig& config);

struct ManifestEntry {
    std::string id;
    std::string path; // resolved against the manifest directory on load
    double duration_s = 0.0;
};

// JSONL, one {"id","path","duration_s"} object per line.
std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);

// Labels CSV ("id,label" with header), matched to the manifest by id.
std::vector<int> load_labels_for(const std::vector<ManifestEntry>& manifest,
                                 const std::string& path);

struct CorpusSpec {
    int n_utts = 200;
    int class_count = 4;
    double dur_min_s = 2.0;
    double dur_max_s = 4.0;
    std::uint64_t seed = 0;
};

struct CorpusResult {
    std::vector<ManifestEntry> manifest; // paths resolved
    std::vector<int> labels;
    std::string manifest_path;
    std::string labels_path;
};

// Each utterance is a 3-harmonic tone whose fundamental lies in a class-
// dependent band [300+400k, 600+400k] Hz, peak-normalized to 0.5, plus white
// noise (std 0.01). Writes WAVs, a JSONL manifest and a labels CSV.
CorpusResult gen_synthetic_corpus(const CorpusSpec& spec, const std::string& out_dir);

struct BatchPlan {
    std::vector<std::vector<std::size_t>> batches; // indices into the manifest
    std::size_t oversized_singletons = 0;
};

// Greedy fill in the given order; an utterance longer than the cap forms a
// singleton batch and is counted as a warning.
BatchPlan greedy_batches(const std::vector<double>& durations, double max_batch_seconds);

// Shuffles utterance order with rng (one epoch), then fills greedily.
BatchPlan dynamic_batches(const std::vector<ManifestEntry>& manifest, double max_batch_seconds,
                          PrngState& rng);

// Linear warmup to peak_lr, constant afterward.
double lr_at(std::int64_t step, const TrainConfig& config);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m; // canonical tensor order
    std::vector<std::vector<double>> v;
};

AdamState init_adam(const PredictorParams& params);

// Standard Adam with bias correction, tensors updated in canonical order.
// Any non-finite gradient aborts before touching params or state.
void adam_step(PredictorParams& params, const Gradients& grads, AdamState& state, double lr);

// Fraction of masked positions whose argmax logit equals the target; argmax
// ties break to the lowest index.
double masked_accuracy(const Matrix& logits, const TargetSequence& targets,
                       const MaskVector& loss_mask);

struct RunArtifacts {
    std::string metrics_path;
    std::vector<std::string> checkpoint_paths;
    UtilizationStats final_utilization;
    std::size_t skipped_batches = 0;
    int steps_done = 0;
    int epochs_completed = 0;
    std::vector<double> step_losses;
    std::vector<double> step_accuracies;
    double quantize_mask_ms = 0.0;     // accumulated over all steps
    double forward_backward_ms = 0.0;  // accumulated over all steps
    double total_ms = 0.0;
};

// Runs the full loop and writes metrics.csv plus checkpoints/step_N.brq
// under out_dir. Targets always come from clean (pre-mask) features.
RunArtifacts pretrain(const std::vector<ManifestEntry>& manifest, const TrainConfig& config,
                      const std::string& out_dir);

} // namespace brq
