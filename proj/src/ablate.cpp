#include "brq/ablate.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "brq/checkpoint.hpp"
#include "brq/error.hpp"
#include "brq/probe.hpp"

namespace brq {

namespace fs = std::filesystem;

AblationGrid default_report_grid() {
    AblationGrid grid;
    for (double p : {0.01, 0.05, 0.10, 0.12}) {
        for (int k : {1024, 8192}) {
            grid.cells.push_back({p, k});
        }
    }
    return grid;
}

AblationGrid trend_grid() {
    AblationGrid grid;
    grid.cells.push_back({0.01, 64});
    grid.cells.push_back({0.10, 64});
    return grid;
}

std::uint64_t ablation_cell_seed(std::uint64_t base_seed, const AblationCell& cell,
                                 int seed_index) {
    std::uint64_t h = mix64(std::bit_cast<std::uint64_t>(cell.start_prob));
    h = mix64(h ^ static_cast<std::uint64_t>(cell.codebook_size));
    h = mix64(h ^ static_cast<std::uint64_t>(seed_index));
    return mix64(base_seed ^ h);
}

namespace {

struct Moments {
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation
};

Moments moments(const std::vector<double>& xs) {
    Moments m;
    if (xs.empty()) {
        return m;
    }
    for (double x : xs) {
        m.mean += x;
    }
    m.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double acc = 0.0;
        for (double x : xs) {
            acc += (x - m.mean) * (x - m.mean);
        }
        m.stddev = std::sqrt(acc / static_cast<double>(xs.size() - 1));
    }
    return m;
}

std::string sanitize(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '\n' || c == '\r') {
            c = ';';
        }
    }
    return s;
}

} // namespace

SweepResult ablate(const AblationGrid& grid, const TrainConfig& base,
                   const std::vector<ManifestEntry>& manifest, const std::vector<int>& labels,
                   const std::string& out_dir) {
    if (grid.cells.empty() || grid.seeds_per_cell < 1) {
        fail(ErrorKind::InvalidGrid, "ablation grid must be non-empty with seeds >= 1");
    }
    for (const auto& cell : grid.cells) {
        if (cell.start_prob < 0.0 || cell.start_prob > 1.0 || cell.codebook_size < 1) {
            fail(ErrorKind::InvalidGrid, "ablation cell out of range");
        }
    }
    fs::create_directories(fs::path(out_dir) / "cells");

    int class_count = 0;
    for (int label : labels) {
        class_count = std::max(class_count, label + 1);
    }

    SweepResult result;
    for (const auto& cell : grid.cells) {
        CellResult row;
        row.cell = cell;
        std::vector<double> accs, losses, probe_accs, entropies;
        try {
            for (int s = 0; s < grid.seeds_per_cell; ++s) {
                TrainConfig cfg = base;
                cfg.seed = ablation_cell_seed(base.seed, cell, s);
                cfg.mask.start_prob = cell.start_prob;
                cfg.quantizer.codebook_size = cell.codebook_size;
                cfg.quantizer.seed = 0; // re-derive per cell seed
                cfg.predictor.seed = 0;

                char dir_buf[96];
                std::snprintf(dir_buf, sizeof dir_buf, "p%.4f_cb%d_s%d", cell.start_prob,
                              cell.codebook_size, s);
                const std::string run_dir = (fs::path(out_dir) / "cells" / dir_buf).string();
                const RunArtifacts artifacts = pretrain(manifest, cfg, run_dir);
                if (artifacts.step_losses.empty()) {
                    fail(ErrorKind::InvalidConfig, "ablation cell ran zero steps");
                }
                accs.push_back(artifacts.step_accuracies.back());
                losses.push_back(artifacts.step_losses.back());
                entropies.push_back(artifacts.final_utilization.normalized_entropy);

                const Checkpoint final_ckpt =
                    load_checkpoint(artifacts.checkpoint_paths.back());
                const ProbeDataset all =
                    build_probe_dataset(final_ckpt.predictor, manifest, labels, cfg.stack);
                const auto [train, test] = split_probe_dataset(all, 0.5, cfg.seed);
                const ProbeParams probe =
                    train_probe(train, class_count, ProbeTrainConfig{0.5, 1500, cfg.seed});
                probe_accs.push_back(evaluate_probe(probe, test));
            }
            const Moments acc_m = moments(accs);
            const Moments loss_m = moments(losses);
            const Moments probe_m = moments(probe_accs);
            const Moments entropy_m = moments(entropies);
            row.masked_acc_mean = acc_m.mean;
            row.masked_acc_std = acc_m.stddev;
            row.final_loss_mean = loss_m.mean;
            row.final_loss_std = loss_m.stddev;
            row.probe_acc_mean = probe_m.mean;
            row.probe_acc_std = probe_m.stddev;
            row.util_entropy_mean = entropy_m.mean;
            row.util_entropy_std = entropy_m.stddev;
        } catch (const Error& e) {
            row.failed = true;
            row.error = e.what();
        }
        result.cells.push_back(std::move(row));
    }

    result.csv_path = (fs::path(out_dir) / "sweep.csv").string();
    std::ofstream csv(result.csv_path, std::ios::binary | std::ios::trunc);
    if (!csv) {
        fail(ErrorKind::IoError, "cannot open sweep CSV for writing: " + result.csv_path);
    }
    csv << "start_prob,codebook_size,n_seeds,masked_acc_mean,masked_acc_std,"
           "final_loss_mean,final_loss_std,probe_acc_mean,probe_acc_std,"
           "util_entropy_mean,util_entropy_std,status\n";
    for (const auto& row : result.cells) {
        char buf[320];
        std::snprintf(buf, sizeof buf,
                      "%.10g,%d,%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,",
                      row.cell.start_prob, row.cell.codebook_size, grid.seeds_per_cell,
                      row.masked_acc_mean, row.masked_acc_std, row.final_loss_mean,
                      row.final_loss_std, row.probe_acc_mean, row.probe_acc_std,
                      row.util_entropy_mean, row.util_entropy_std);
        csv << buf << (row.failed ? "failed: " + sanitize(row.error) : std::string("ok"))
            << '\n';
    }
    return result;
}

} // namespace brq
