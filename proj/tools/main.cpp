// Command-line front end for the masked-prediction pre-training lab.
//
// Subcommands: gen-corpus | pretrain | quantize | mask-stats | grad-check |
//              probe | ablate
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric
// failure (non-finite gradients or a failed gradient check).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "brq/ablate.hpp"
#include "brq/audio.hpp"
#include "brq/checkpoint.hpp"
#include "brq/error.hpp"
#include "brq/masking.hpp"
#include "brq/predictor.hpp"
#include "brq/probe.hpp"
#include "brq/quantizer.hpp"
#include "brq/trainer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct SeedFlag {
    std::uint64_t value = 0;
    bool set = false;
};

using brq::TrainConfig;

TrainConfig load_config_or_default(const std::string& config_path, const SeedFlag& seed) {
    TrainConfig cfg;
    if (!config_path.empty()) {
        cfg = brq::load_train_config(config_path);
    }
    if (seed.set) {
        cfg.seed = seed.value;
    }
    return cfg;
}

int cmd_gen_corpus(const std::string& out, std::uint64_t seed, int n_utts, int classes,
                   double dur_min, double dur_max) {
    brq::CorpusSpec spec;
    spec.n_utts = n_utts;
    spec.class_count = classes;
    spec.dur_min_s = dur_min;
    spec.dur_max_s = dur_max;
    spec.seed = seed;
    const brq::CorpusResult corpus = brq::gen_synthetic_corpus(spec, out);
    std::printf("wrote %zu utterances, manifest %s, labels %s\n", corpus.manifest.size(),
                corpus.manifest_path.c_str(), corpus.labels_path.c_str());
    return kExitOk;
}

int cmd_pretrain(const std::string& manifest_path, const std::string& config_path,
                 const SeedFlag& seed, const std::string& out) {
    const TrainConfig cfg = load_config_or_default(config_path, seed);
    const auto manifest = brq::load_manifest(manifest_path);
    const brq::RunArtifacts artifacts = brq::pretrain(manifest, cfg, out);
    std::printf("steps=%d epochs=%d skipped_batches=%zu\n", artifacts.steps_done,
                artifacts.epochs_completed, artifacts.skipped_batches);
    if (!artifacts.step_losses.empty()) {
        std::printf("final_loss=%.6f final_masked_acc=%.6f\n", artifacts.step_losses.back(),
                    artifacts.step_accuracies.back());
    }
    std::printf("util_entropy=%.6f distinct_codes=%zu\n",
                artifacts.final_utilization.normalized_entropy,
                artifacts.final_utilization.distinct_codes);
    std::printf("quantize+mask %.1f ms, forward+backward %.1f ms, total %.1f ms\n",
                artifacts.quantize_mask_ms, artifacts.forward_backward_ms, artifacts.total_ms);
    std::printf("metrics: %s\n", artifacts.metrics_path.c_str());
    return kExitOk;
}

int cmd_quantize(const std::string& manifest_path, const std::string& config_path,
                 const SeedFlag& seed, const std::string& out, bool dump_features) {
    TrainConfig cfg = load_config_or_default(config_path, seed);
    cfg = brq::resolve_train_config(cfg);
    const auto manifest = brq::load_manifest(manifest_path);
    if (manifest.empty()) {
        brq::fail(brq::ErrorKind::EmptyManifest, "empty manifest");
    }
    fs::create_directories(out);
    if (dump_features) {
        fs::create_directories(fs::path(out) / "features");
    }
    const brq::Quantizer quant = brq::init_quantizer(cfg.quantizer);
    std::vector<std::pair<std::string, brq::TargetSequence>> dump;
    std::vector<std::uint32_t> all;
    for (const auto& entry : manifest) {
        const brq::MelSpectrogram mel = brq::log_mel_spectrogram(brq::load_wav(entry.path));
        if (dump_features) {
            brq::write_feature_dump(
                (fs::path(out) / "features" / (entry.id + ".mel80")).string(), mel);
        }
        brq::TargetSequence targets =
            brq::quantize(quant, brq::stack_frames(mel, cfg.stack));
        all.insert(all.end(), targets.indices.begin(), targets.indices.end());
        dump.emplace_back(entry.id, std::move(targets));
    }
    const std::string targets_path = (fs::path(out) / "targets.txt").string();
    brq::write_target_dump(targets_path, dump);
    const brq::UtilizationStats stats =
        brq::codebook_utilization(all, cfg.quantizer.codebook_size);
    std::printf("frames=%zu codebook=%d distinct=%zu normalized_entropy=%.6f\n", all.size(),
                cfg.quantizer.codebook_size, stats.distinct_codes, stats.normalized_entropy);
    std::printf("targets: %s\n", targets_path.c_str());
    return kExitOk;
}

int cmd_mask_stats(const std::string& out, std::uint64_t seed,
                   std::vector<double> start_probs, int span, int frames) {
    if (start_probs.empty()) {
        start_probs = {0.01, 0.05, 0.10, 0.12, 0.15};
    }
    std::string csv = "start_prob,span,analytic_coverage,empirical_coverage,n_frames\n";
    for (double p : start_probs) {
        brq::MaskPolicy policy;
        policy.start_prob = p;
        policy.span = span;
        brq::PrngState rng(brq::derive_seed(seed, "mask-stats"));
        const brq::MaskSpec mask =
            brq::sample_mask(static_cast<std::size_t>(frames), policy, rng);
        // Interior frames only: the first span-1 frames have fewer possible
        // start positions and sit below the stationary coverage.
        std::size_t covered = 0;
        std::size_t interior = 0;
        for (std::size_t t = static_cast<std::size_t>(policy.span - 1);
             t < mask.covered.size(); ++t) {
            ++interior;
            covered += mask.covered[t] ? 1 : 0;
        }
        const double empirical =
            interior > 0 ? static_cast<double>(covered) / static_cast<double>(interior) : 0.0;
        char row[128];
        std::snprintf(row, sizeof row, "%.10g,%d,%.10g,%.10g,%d\n", p, span,
                      brq::expected_coverage(policy), empirical, frames);
        csv += row;
    }
    if (out.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        fs::create_directories(out);
        const std::string path = (fs::path(out) / "mask_stats.csv").string();
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) {
            brq::fail(brq::ErrorKind::IoError, "cannot write " + path);
        }
        f << csv;
        std::printf("mask stats: %s\n", path.c_str());
    }
    return kExitOk;
}

int cmd_grad_check(std::uint64_t seed, int trials, double epsilon, double tolerance,
                   int input_dim, int hidden_dim, int codebook_size, int radius, int frames) {
    brq::PredictorConfig cfg;
    cfg.input_dim = input_dim;
    cfg.hidden_dim = hidden_dim;
    cfg.codebook_size = codebook_size;
    cfg.context_radius = radius;
    cfg.seed = seed;
    const brq::GradCheckReport report = brq::grad_check(cfg, trials, epsilon, frames);
    std::printf("trials=%d coordinates=%zu max_rel_error=%.3e tolerance=%.1e\n", report.trials,
                report.coordinates_checked, report.max_rel_error, tolerance);
    if (report.max_rel_error >= tolerance) {
        std::fprintf(stderr, "gradient check failed: %.3e >= %.1e\n", report.max_rel_error,
                     tolerance);
        return kExitNumeric;
    }
    std::printf("gradient check passed\n");
    return kExitOk;
}

int cmd_probe(const std::string& manifest_path, const std::string& labels_path,
              const std::string& checkpoint_path, const SeedFlag& seed, const std::string& out,
              double test_fraction, int steps, double lr) {
    const auto manifest = brq::load_manifest(manifest_path);
    const auto labels = brq::load_labels_for(manifest, labels_path);
    const brq::Checkpoint ckpt = brq::load_checkpoint(checkpoint_path);
    int class_count = 0;
    for (int label : labels) {
        class_count = std::max(class_count, label + 1);
    }
    const std::uint64_t probe_seed = seed.set ? seed.value : 0;
    const brq::ProbeDataset all =
        brq::build_probe_dataset(ckpt.predictor, manifest, labels, ckpt.stack);
    const auto [train, test] = brq::split_probe_dataset(all, test_fraction, probe_seed);
    const brq::ProbeParams probe =
        brq::train_probe(train, class_count, brq::ProbeTrainConfig{lr, steps, probe_seed});
    const double train_acc = brq::evaluate_probe(probe, train);
    const double test_acc = brq::evaluate_probe(probe, test);
    const auto w = probe.layer_weights.effective();

    fs::create_directories(out);
    const std::string csv_path = (fs::path(out) / "probe.csv").string();
    const bool fresh = !fs::exists(csv_path);
    std::ofstream csv(csv_path, std::ios::binary | std::ios::app);
    if (!csv) {
        brq::fail(brq::ErrorKind::IoError, "cannot write " + csv_path);
    }
    if (fresh) {
        csv << "checkpoint,seed,train_acc,test_acc,w_h1,w_h2\n";
    }
    char row[512];
    std::snprintf(row, sizeof row, "%s,%llu,%.10g,%.10g,%.10g,%.10g\n", checkpoint_path.c_str(),
                  static_cast<unsigned long long>(probe_seed), train_acc, test_acc, w[0], w[1]);
    csv << row;
    std::printf("train_acc=%.4f test_acc=%.4f w_h1=%.4f w_h2=%.4f\n", train_acc, test_acc, w[0],
                w[1]);
    std::printf("probe report: %s\n", csv_path.c_str());
    return kExitOk;
}

int cmd_ablate(const std::string& manifest_path, const std::string& labels_path,
               const std::string& config_path, const SeedFlag& seed, const std::string& out,
               const std::string& grid_name, int seeds_per_cell) {
    const TrainConfig base = load_config_or_default(config_path, seed);
    const auto manifest = brq::load_manifest(manifest_path);
    const auto labels = brq::load_labels_for(manifest, labels_path);
    brq::AblationGrid grid;
    if (grid_name == "report") {
        grid = brq::default_report_grid();
    } else if (grid_name == "trend") {
        grid = brq::trend_grid();
    } else {
        brq::fail(brq::ErrorKind::InvalidGrid, "unknown grid: " + grid_name);
    }
    grid.seeds_per_cell = seeds_per_cell;
    const brq::SweepResult sweep = brq::ablate(grid, base, manifest, labels, out);
    for (const auto& cell : sweep.cells) {
        std::printf("p=%.4f cb=%d %s masked_acc=%.4f probe_acc=%.4f entropy=%.4f\n",
                    cell.cell.start_prob, cell.cell.codebook_size,
                    cell.failed ? "FAILED" : "ok", cell.masked_acc_mean, cell.probe_acc_mean,
                    cell.util_entropy_mean);
    }
    std::printf("sweep: %s\n", sweep.csv_path.c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-prediction pre-training lab with a frozen random-projection quantizer"};
    app.require_subcommand(1);

    SeedFlag seed;
    std::string config_path, manifest_path, labels_path, checkpoint_path, out;

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic tone corpus");
    int n_utts = 200, classes = 4;
    double dur_min = 2.0, dur_max = 4.0;
    std::uint64_t gen_seed = 1;
    gen->add_option("--out", out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "corpus seed");
    gen->add_option("--n-utts", n_utts, "number of utterances");
    gen->add_option("--classes", classes, "number of classes");
    gen->add_option("--dur-min", dur_min, "minimum duration (s)");
    gen->add_option("--dur-max", dur_max, "maximum duration (s)");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "run masked-prediction pre-training");
    pre->add_option("--manifest", manifest_path, "corpus manifest (JSONL)")->required();
    pre->add_option("--config", config_path, "training config JSON");
    pre->add_option("--out", out, "output directory")->required();
    auto* pre_seed =
        pre->add_option("--seed", seed.value, "master seed (overrides config)");

    // quantize
    auto* quant = app.add_subcommand("quantize", "dump frozen-quantizer targets");
    bool dump_features = false;
    quant->add_option("--manifest", manifest_path, "corpus manifest (JSONL)")->required();
    quant->add_option("--config", config_path, "training config JSON");
    quant->add_option("--out", out, "output directory")->required();
    auto* quant_seed = quant->add_option("--seed", seed.value, "master seed");
    quant->add_flag("--dump-features", dump_features, "also write MEL80 feature dumps");

    // mask-stats
    auto* mask = app.add_subcommand("mask-stats", "analytic vs empirical mask coverage");
    std::vector<double> start_probs;
    int span = 4, mask_frames = 100000;
    std::uint64_t mask_seed = 1;
    mask->add_option("--out", out, "output directory (stdout if omitted)");
    mask->add_option("--seed", mask_seed, "sampling seed");
    mask->add_option("--start-prob", start_probs, "start probabilities to evaluate");
    mask->add_option("--span", span, "mask span");
    mask->add_option("--frames", mask_frames, "frames per estimate");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "analytic vs finite-difference gradients");
    std::uint64_t gc_seed = 0;
    int gc_trials = 10, gc_d = 6, gc_h = 4, gc_k = 5, gc_r = 1, gc_frames = 3;
    double gc_eps = 1e-5, gc_tol = 1e-4;
    gc->add_option("--seed", gc_seed, "seed");
    gc->add_option("--trials", gc_trials, "number of random instances");
    gc->add_option("--epsilon", gc_eps, "finite-difference step");
    gc->add_option("--tolerance", gc_tol, "max relative error allowed");
    gc->add_option("--input-dim", gc_d, "feature dim");
    gc->add_option("--hidden-dim", gc_h, "hidden dim");
    gc->add_option("--codebook-size", gc_k, "codebook size");
    gc->add_option("--radius", gc_r, "context radius");
    gc->add_option("--frames", gc_frames, "frames per instance");

    // probe
    auto* probe = app.add_subcommand("probe", "train a frozen linear probe");
    double test_fraction = 0.5, probe_lr = 0.5;
    int probe_steps = 2000;
    probe->add_option("--manifest", manifest_path, "corpus manifest (JSONL)")->required();
    probe->add_option("--labels", labels_path, "labels CSV")->required();
    probe->add_option("--checkpoint", checkpoint_path, "checkpoint to probe")->required();
    probe->add_option("--out", out, "output directory")->required();
    auto* probe_seed = probe->add_option("--seed", seed.value, "split/report seed");
    probe->add_option("--test-fraction", test_fraction, "held-out fraction");
    probe->add_option("--steps", probe_steps, "probe GD steps");
    probe->add_option("--lr", probe_lr, "probe learning rate");

    // ablate
    auto* abl = app.add_subcommand("ablate", "sweep mask ratio x codebook size");
    std::string grid_name = "report";
    int seeds_per_cell = 3;
    abl->add_option("--manifest", manifest_path, "corpus manifest (JSONL)")->required();
    abl->add_option("--labels", labels_path, "labels CSV")->required();
    abl->add_option("--config", config_path, "base training config JSON");
    abl->add_option("--out", out, "output directory")->required();
    auto* abl_seed = abl->add_option("--seed", seed.value, "base seed (overrides config)");
    abl->add_option("--grid", grid_name, "report | trend");
    abl->add_option("--seeds-per-cell", seeds_per_cell, "seeds per grid cell");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) { // --help
            return app.exit(e);
        }
        app.exit(e); // prints the message and usage
        return kExitUsage;
    }

    try {
        if (gen->parsed()) {
            return cmd_gen_corpus(out, gen_seed, n_utts, classes, dur_min, dur_max);
        }
        if (pre->parsed()) {
            seed.set = pre_seed->count() > 0;
            return cmd_pretrain(manifest_path, config_path, seed, out);
        }
        if (quant->parsed()) {
            seed.set = quant_seed->count() > 0;
            return cmd_quantize(manifest_path, config_path, seed, out, dump_features);
        }
        if (mask->parsed()) {
            return cmd_mask_stats(out, mask_seed, start_probs, span, mask_frames);
        }
        if (gc->parsed()) {
            return cmd_grad_check(gc_seed, gc_trials, gc_eps, gc_tol, gc_d, gc_h, gc_k, gc_r,
                                  gc_frames);
        }
        if (probe->parsed()) {
            seed.set = probe_seed->count() > 0;
            return cmd_probe(manifest_path, labels_path, checkpoint_path, seed, out,
                             test_fraction, probe_steps, probe_lr);
        }
        if (abl->parsed()) {
            seed.set = abl_seed->count() > 0;
            return cmd_ablate(manifest_path, labels_path, config_path, seed, out, grid_name,
                              seeds_per_cell);
        }
    } catch (const brq::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.kind() == brq::ErrorKind::NonFiniteGradient ? kExitNumeric : kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return kExitUsage;
}
