#include "brq/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "brq/audio.hpp"
#include "brq/checkpoint.hpp"
#include "brq/error.hpp"

namespace brq {

namespace fs = std::filesystem;
using nlohmann::json;

// ─── Config JSON ────────────────────────────────────────────────────────────

namespace {

template <typename T>
void get_if_present(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        out = obj.at(key).get<T>();
    }
}

} // namespace

TrainConfig train_config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        fail(ErrorKind::CorruptFile, "unparsable config JSON: " + std::string(e.what()));
    }
    TrainConfig c;
    try {
        get_if_present(j, "seed", c.seed);
        get_if_present(j, "steps", c.steps);
        get_if_present(j, "peak_lr", c.peak_lr);
        get_if_present(j, "warmup_steps", c.warmup_steps);
        get_if_present(j, "max_batch_seconds", c.max_batch_seconds);
        get_if_present(j, "checkpoint_every", c.checkpoint_every);
        get_if_present(j, "deterministic", c.deterministic);
        get_if_present(j, "stack", c.stack);
        if (j.contains("mask")) {
            const json& m = j.at("mask");
            get_if_present(m, "start_prob", c.mask.start_prob);
            get_if_present(m, "span", c.mask.span);
            get_if_present(m, "noise_std", c.mask.noise_std);
            get_if_present(m, "noise_mean", c.mask.noise_mean);
        }
        if (j.contains("quantizer")) {
            const json& q = j.at("quantizer");
            get_if_present(q, "seed", c.quantizer.seed);
            get_if_present(q, "code_dim", c.quantizer.code_dim);
            get_if_present(q, "codebook_size", c.quantizer.codebook_size);
        }
        if (j.contains("predictor")) {
            const json& p = j.at("predictor");
            get_if_present(p, "seed", c.predictor.seed);
            get_if_present(p, "hidden_dim", c.predictor.hidden_dim);
            get_if_present(p, "context_radius", c.predictor.context_radius);
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::InvalidConfig, "bad config value: " + std::string(e.what()));
    }
    return c;
}

std::string train_config_to_json(const TrainConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["steps"] = c.steps;
    j["peak_lr"] = c.peak_lr;
    j["warmup_steps"] = c.warmup_steps;
    j["max_batch_seconds"] = c.max_batch_seconds;
    j["checkpoint_every"] = c.checkpoint_every;
    j["deterministic"] = c.deterministic;
    j["stack"] = c.stack;
    j["mask"] = {{"start_prob", c.mask.start_prob},
                 {"span", c.mask.span},
                 {"noise_std", c.mask.noise_std},
                 {"noise_mean", c.mask.noise_mean}};
    j["quantizer"] = {{"seed", c.quantizer.seed},
                      {"code_dim", c.quantizer.code_dim},
                      {"codebook_size", c.quantizer.codebook_size}};
    j["predictor"] = {{"seed", c.predictor.seed},
                      {"hidden_dim", c.predictor.hidden_dim},
                      {"context_radius", c.predictor.context_radius}};
    return j.dump(2);
}

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open config: " + path);
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return train_config_from_json(buf.str());
}

TrainConfig resolve_train_config(const TrainConfig& in) {
    TrainConfig c = in;
    if (c.steps < 0 || c.peak_lr <= 0.0 || c.max_batch_seconds <= 0.0 || c.stack < 1 ||
        c.warmup_steps < 0 || c.checkpoint_every < 0) {
        fail(ErrorKind::InvalidConfig, "invalid training config");
    }
    c.quantizer.input_dim = kMelBins * c.stack;
    c.predictor.input_dim = kMelBins * c.stack;
    c.predictor.codebook_size = c.quantizer.codebook_size;
    if (c.quantizer.seed == 0) {
        c.quantizer.seed = derive_seed(c.seed, "quantizer");
    }
    if (c.predictor.seed == 0) {
        c.predictor.seed = derive_seed(c.seed, "predictor");
    }
    return c;
}

// ─── Manifest and labels ────────────────────────────────────────────────────

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open manifest: " + path);
    }
    const fs::path base = fs::path(path).parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
            ManifestEntry e;
            e.id = j.at("id").get<std::string>();
            e.path = j.at("path").get<std::string>();
            e.duration_s = j.at("duration_s").get<double>();
            if (fs::path(e.path).is_relative()) {
                e.path = (base / e.path).string();
            }
            entries.push_back(std::move(e));
        } catch (const json::exception& e) {
            fail(ErrorKind::CorruptFile,
                 "bad manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return entries;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorKind::IoError, "cannot open manifest for writing: " + path);
    }
    for (const auto& e : entries) {
        json j{{"id", e.id}, {"path", e.path}, {"duration_s", e.duration_s}};
        out << j.dump() << '\n';
    }
}

std::vector<int> load_labels_for(const std::vector<ManifestEntry>& manifest,
                                 const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        fail(ErrorKind::IoError, "cannot open labels: " + path);
    }
    std::map<std::string, int> by_id;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first) { // header
            first = false;
            continue;
        }
        if (line.empty()) {
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            fail(ErrorKind::CorruptFile, "bad labels line: " + line);
        }
        by_id[line.substr(0, comma)] = std::stoi(line.substr(comma + 1));
    }
    std::vector<int> labels;
    labels.reserve(manifest.size());
    for (const auto& e : manifest) {
        const auto it = by_id.find(e.id);
        if (it == by_id.end()) {
            fail(ErrorKind::CorruptFile, "no label for utterance " + e.id);
        }
        labels.push_back(it->second);
    }
    return labels;
}

// ─── Synthetic corpus ───────────────────────────────────────────────────────

CorpusResult gen_synthetic_corpus(const CorpusSpec& spec, const std::string& out_dir) {
    if (spec.n_utts < 1 || spec.class_count < 2 || spec.dur_min_s <= 0.0 ||
        spec.dur_max_s < spec.dur_min_s) {
        fail(ErrorKind::InvalidRange, "corpus spec needs n_utts>=1, classes>=2, 0<min<=max");
    }
    fs::create_directories(fs::path(out_dir) / "wav");
    PrngState rng(spec.seed);

    constexpr double kHarmonicAmps[3] = {1.0, 0.5, 0.25};
    constexpr double kNyquistGuardHz = 7600.0;
    constexpr double two_pi = 6.283185307179586476925286766559;

    CorpusResult result;
    std::vector<ManifestEntry> relative_entries;
    for (int i = 0; i < spec.n_utts; ++i) {
        char id_buf[32];
        std::snprintf(id_buf, sizeof id_buf, "utt_%05d", i);
        const std::string id = id_buf;
        const int label = i % spec.class_count;

        const double duration =
            spec.dur_min_s + (spec.dur_max_s - spec.dur_min_s) * rng.uniform53();
        const std::size_t n = static_cast<std::size_t>(std::llround(duration * kSampleRate));
        const double band_lo = 300.0 + 400.0 * label;
        const double f0 = band_lo + 300.0 * rng.uniform53();
        double phases[3];
        for (double& p : phases) {
            p = two_pi * rng.uniform53();
        }

        std::vector<double> samples(n, 0.0);
        double peak = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            double v = 0.0;
            for (int h = 0; h < 3; ++h) {
                const double freq = f0 * (h + 1);
                if (h > 0 && freq >= kNyquistGuardHz) {
                    continue;
                }
                v += kHarmonicAmps[h] * std::sin(two_pi * freq * t / kSampleRate + phases[h]);
            }
            samples[t] = v;
            peak = std::max(peak, std::fabs(v));
        }
        const double scale = (peak > 0.0) ? 0.5 / peak : 0.0;
        for (double& v : samples) {
            v = v * scale + 0.01 * rng.gaussian();
        }

        const std::string rel_path = "wav/" + id + ".wav";
        const std::string abs_path = (fs::path(out_dir) / rel_path).string();
        write_wav(abs_path, samples);

        const double actual_duration = static_cast<double>(n) / kSampleRate;
        relative_entries.push_back({id, rel_path, actual_duration});
        result.manifest.push_back({id, abs_path, actual_duration});
        result.labels.push_back(label);
    }

    result.manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
    save_manifest(result.manifest_path, relative_entries);

    result.labels_path = (fs::path(out_dir) / "labels.csv").string();
    std::ofstream labels(result.labels_path, std::ios::binary | std::ios::trunc);
    if (!labels) {
        fail(ErrorKind::IoError, "cannot open labels for writing: " + result.labels_path);
    }
    labels << "id,label\n";
    for (std::size_t i = 0; i < result.manifest.size(); ++i) {
        labels << result.manifest[i].id << ',' << result.labels[i] << '\n';
    }
    return result;
}

// ─── Batching ───────────────────────────────────────────────────────────────

BatchPlan greedy_batches(const std::vector<double>& durations, double max_batch_seconds) {
    if (durations.empty()) {
        fail(ErrorKind::EmptyManifest, "no utterances to batch");
    }
    if (max_batch_seconds <= 0.0) {
        fail(ErrorKind::InvalidConfig, "max_batch_seconds must be > 0");
    }
    BatchPlan plan;
    std::vector<std::size_t> current;
    double current_sum = 0.0;
    auto flush = [&] {
        if (!current.empty()) {
            plan.batches.push_back(std::move(current));
            current.clear();
            current_sum = 0.0;
        }
    };
    for (std::size_t i = 0; i < durations.size(); ++i) {
        const double d = durations[i];
        if (d <= 0.0) {
            fail(ErrorKind::InvalidRange, "utterance duration must be positive");
        }
        if (d > max_batch_seconds) {
            flush();
            plan.batches.push_back({i});
            ++plan.oversized_singletons;
            continue;
        }
        if (!current.empty() && current_sum + d > max_batch_seconds) {
            flush();
        }
        current.push_back(i);
        current_sum += d;
    }
    flush();
    return plan;
}

BatchPlan dynamic_batches(const std::vector<ManifestEntry>& manifest, double max_batch_seconds,
                          PrngState& rng) {
    if (manifest.empty()) {
        fail(ErrorKind::EmptyManifest, "empty manifest");
    }
    std::vector<std::size_t> order(manifest.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    // Fisher-Yates from the tail.
    for (std::size_t i = order.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
        std::swap(order[i], order[j]);
    }
    std::vector<double> durations(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        durations[i] = manifest[order[i]].duration_s;
    }
    BatchPlan shuffled = greedy_batches(durations, max_batch_seconds);
    for (auto& batch : shuffled.batches) {
        for (auto& idx : batch) {
            idx = order[idx];
        }
    }
    return shuffled;
}

// ─── Schedule and optimizer ─────────────────────────────────────────────────

double lr_at(std::int64_t step, const TrainConfig& config) {
    if (step < 0) {
        fail(ErrorKind::InvalidConfig, "step must be >= 0");
    }
    if (config.warmup_steps <= 0 || step >= config.warmup_steps) {
        return config.peak_lr;
    }
    return config.peak_lr * static_cast<double>(step) /
           static_cast<double>(config.warmup_steps);
}

AdamState init_adam(const PredictorParams& params) {
    AdamState state;
    for (const auto& ref : tensor_refs(params)) {
        state.m.emplace_back(ref.data->size(), 0.0);
        state.v.emplace_back(ref.data->size(), 0.0);
    }
    return state;
}

void adam_step(PredictorParams& params, const Gradients& grads, AdamState& state, double lr) {
    auto prefs = tensor_refs(params);
    auto grefs = tensor_refs(grads);
    if (state.m.size() != prefs.size() || state.v.size() != prefs.size()) {
        fail(ErrorKind::ShapeMismatch, "Adam state does not match parameter tensors");
    }
    for (std::size_t i = 0; i < prefs.size(); ++i) {
        if (grefs[i].data->size() != prefs[i].data->size() ||
            state.m[i].size() != prefs[i].data->size()) {
            fail(ErrorKind::ShapeMismatch, "gradient shape mismatch on " +
                                               std::string(prefs[i].name));
        }
        for (double g : *grefs[i].data) {
            if (!std::isfinite(g)) {
                fail(ErrorKind::NonFiniteGradient,
                     "non-finite gradient in " + std::string(prefs[i].name));
            }
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < prefs.size(); ++i) {
        std::vector<double>& p = *prefs[i].data;
        const std::vector<double>& g = *grefs[i].data;
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double m_hat = m[k] / bc1;
            const double v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

double masked_accuracy(const Matrix& logits, const TargetSequence& targets,
                       const MaskVector& loss_mask) {
    if (targets.indices.size() != logits.rows || loss_mask.size() != logits.rows) {
        fail(ErrorKind::LengthMismatch, "logits, targets and mask lengths disagree");
    }
    std::size_t masked = 0;
    std::size_t correct = 0;
    for (std::size_t t = 0; t < logits.rows; ++t) {
        if (!loss_mask[t]) {
            continue;
        }
        ++masked;
        const double* row = logits.row(t);
        std::size_t best = 0;
        for (std::size_t k = 1; k < logits.cols; ++k) {
            if (row[k] > row[best]) {
                best = k;
            }
        }
        if (best == targets.indices[t]) {
            ++correct;
        }
    }
    if (masked == 0) {
        fail(ErrorKind::EmptyMask, "no masked positions for accuracy");
    }
    return static_cast<double>(correct) / static_cast<double>(masked);
}

// ─── Pre-training loop ──────────────────────────────────────────────────────

namespace {

void accumulate_scaled(Gradients& acc, const Gradients& g, double weight) {
    auto accs = tensor_refs(acc);
    auto srcs = tensor_refs(g);
    for (std::size_t i = 0; i < accs.size(); ++i) {
        std::vector<double>& a = *accs[i].data;
        const std::vector<double>& s = *srcs[i].data;
        for (std::size_t k = 0; k < a.size(); ++k) {
            a[k] += weight * s[k];
        }
    }
}

double ms_between(std::chrono::steady_clock::time_point a,
                  std::chrono::steady_clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

} // namespace

RunArtifacts pretrain(const std::vector<ManifestEntry>& manifest, const TrainConfig& config_in,
                      const std::string& out_dir) {
    const TrainConfig cfg = resolve_train_config(config_in);
    if (manifest.empty()) {
        fail(ErrorKind::EmptyManifest, "empty manifest");
    }
    fs::create_directories(fs::path(out_dir) / "checkpoints");

    const auto run_start = std::chrono::steady_clock::now();

    // Features are deterministic per utterance; compute once and reuse across
    // epochs. Targets are recomputed per batch (the quantizer path is cheap).
    std::vector<MelSpectrogram> mels;
    mels.reserve(manifest.size());
    for (const auto& entry : manifest) {
        mels.push_back(log_mel_spectrogram(load_wav(entry.path)));
    }

    const Quantizer quant = init_quantizer(cfg.quantizer);
    PredictorParams params = init_predictor(cfg.predictor);
    AdamState adam = init_adam(params);

    PrngState rng_shuffle(derive_seed(cfg.seed, "shuffle"));
    PrngState rng_mask(derive_seed(cfg.seed, "mask"));

    RunArtifacts artifacts;

    std::set<int> checkpoint_steps;
    if (cfg.steps > 0) {
        checkpoint_steps.insert(cfg.steps);
        const int mid = cfg.steps / 2;
        if (mid > 0 && mid < cfg.steps) {
            checkpoint_steps.insert(mid);
        }
        if (cfg.checkpoint_every > 0) {
            for (int s = cfg.checkpoint_every; s <= cfg.steps; s += cfg.checkpoint_every) {
                checkpoint_steps.insert(s);
            }
        }
    }
    auto save_at = [&](int step) {
        const std::string path =
            (fs::path(out_dir) / "checkpoints" / ("step_" + std::to_string(step) + ".brq"))
                .string();
        save_checkpoint(path, Checkpoint{params, quant, cfg.stack});
        artifacts.checkpoint_paths.push_back(path);
    };
    save_at(0);

    std::string metrics = "step,lr,loss,masked_acc,util_entropy,ms_per_step,skipped_batches\n";

    int step = 0;
    int epoch = 0;
    while (step < cfg.steps) {
        ++epoch;
        const int step_at_epoch_start = step;
        const BatchPlan plan = dynamic_batches(manifest, cfg.max_batch_seconds, rng_shuffle);
        for (const auto& batch : plan.batches) {
            if (step >= cfg.steps) {
                break;
            }
            const auto batch_start = std::chrono::steady_clock::now();

            std::vector<StackedFeatures> clean(batch.size());
            for (std::size_t u = 0; u < batch.size(); ++u) {
                clean[u] = stack_frames(mels[batch[u]], cfg.stack);
            }

            // Target generation plus masking: the gradient-free half of the step.
            const auto qm_start = std::chrono::steady_clock::now();
            std::vector<TargetSequence> targets(batch.size());
            for (std::size_t u = 0; u < batch.size(); ++u) {
                targets[u] = quantize(quant, clean[u]);
            }
            std::vector<MelSpectrogram> masked_mels(batch.size());
            std::vector<MaskVector> loss_masks(batch.size());
            for (std::size_t u = 0; u < batch.size(); ++u) {
                const MelSpectrogram& mel = mels[batch[u]];
                const MaskSpec mask = sample_mask(mel.frames.rows, cfg.mask, rng_mask);
                masked_mels[u] = apply_mask(mel, mask, cfg.mask, rng_mask);
                loss_masks[u] = reduce_mask(mask, cfg.stack);
            }
            const auto qm_end = std::chrono::steady_clock::now();
            artifacts.quantize_mask_ms += ms_between(qm_start, qm_end);

            std::vector<StackedFeatures> masked(batch.size());
            std::size_t total_masked = 0;
            for (std::size_t u = 0; u < batch.size(); ++u) {
                masked[u] = stack_frames(masked_mels[u], cfg.stack);
                for (std::uint8_t m : loss_masks[u]) {
                    total_masked += m ? 1 : 0;
                }
            }
            if (total_masked == 0) {
                ++artifacts.skipped_batches;
                continue;
            }

            // Forward, loss and backward; per-utterance gradients are scaled by
            // their share of the batch's masked positions so the batch loss is
            // the mean over all masked positions.
            const auto fb_start = std::chrono::steady_clock::now();
            Gradients grad_acc = zero_gradients(params);
            double batch_loss = 0.0;
            double batch_acc = 0.0;
            for (std::size_t u = 0; u < batch.size(); ++u) {
                std::size_t masked_u = 0;
                for (std::uint8_t m : loss_masks[u]) {
                    masked_u += m ? 1 : 0;
                }
                if (masked_u == 0) {
                    continue;
                }
                const double weight =
                    static_cast<double>(masked_u) / static_cast<double>(total_masked);
                const Activations acts = forward(params, masked[u].frames);
                const LossResult loss = masked_ce_loss(acts.logits, targets[u], loss_masks[u]);
                batch_loss += weight * loss.loss;
                batch_acc += weight * masked_accuracy(acts.logits, targets[u], loss_masks[u]);
                const Gradients g = backward(params, masked[u].frames, acts, targets[u],
                                             loss_masks[u]);
                accumulate_scaled(grad_acc, g, weight);
            }
            const auto fb_end = std::chrono::steady_clock::now();
            artifacts.forward_backward_ms += ms_between(fb_start, fb_end);

            ++step;
            const double lr = lr_at(step, cfg);
            adam_step(params, grad_acc, adam, lr);

            std::vector<std::uint32_t> batch_targets;
            for (const auto& t : targets) {
                batch_targets.insert(batch_targets.end(), t.indices.begin(), t.indices.end());
            }
            const double entropy =
                codebook_utilization(batch_targets, cfg.quantizer.codebook_size)
                    .normalized_entropy;

            const double step_ms =
                cfg.deterministic
                    ? 0.0
                    : ms_between(batch_start, std::chrono::steady_clock::now());
            char row[192];
            std::snprintf(row, sizeof row, "%d,%.10g,%.10g,%.10g,%.10g,%.3f,%zu\n", step, lr,
                          batch_loss, batch_acc, entropy, step_ms, artifacts.skipped_batches);
            metrics += row;

            artifacts.step_losses.push_back(batch_loss);
            artifacts.step_accuracies.push_back(batch_acc);

            if (checkpoint_steps.count(step) > 0) {
                save_at(step);
            }
        }
        if (step == step_at_epoch_start && step < cfg.steps) {
            fail(ErrorKind::EmptyMask,
                 "every batch in an epoch produced zero masked positions");
        }
    }
    artifacts.steps_done = step;
    artifacts.epochs_completed = epoch;

    artifacts.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
    {
        std::ofstream out(artifacts.metrics_path, std::ios::binary | std::ios::trunc);
        if (!out) {
            fail(ErrorKind::IoError, "cannot open metrics for writing: " + artifacts.metrics_path);
        }
        out << metrics;
    }

    // Corpus-wide target utilization with the frozen quantizer.
    std::vector<std::uint32_t> all_targets;
    for (const auto& mel : mels) {
        const TargetSequence t = quantize(quant, stack_frames(mel, cfg.stack));
        all_targets.insert(all_targets.end(), t.indices.begin(), t.indices.end());
    }
    artifacts.final_utilization = codebook_utilization(all_targets, cfg.quantizer.codebook_size);

    artifacts.total_ms = ms_between(run_start, std::chrono::steady_clock::now());
    return artifacts;
}

} // namespace brq
