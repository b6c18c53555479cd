#pragma once

// Ablation sweep over (mask start probability, codebook size). Each cell runs
// full pre-training plus a frozen probe for several derived seeds; cell seeds
// depend only on (base seed, cell, seed index), so grid order never changes
// results and a failed cell never affects another.

#include <cstdint>
#include <string>
#include <vector>

#include "brq/trainer.hpp"

namespace brq {

struct AblationCell {
    double start_prob = 0.15;
    int codebook_size = 8192;
};

struct AblationGrid {
    std::vector<AblationCell> cells;
    int seeds_per_cell = 3;
};

// {0.01, 0.05, 0.10, 0.12} x {1024, 8192} for reporting.
AblationGrid default_report_grid();
// {0.01, 0.10} x {64}: the pair whose accuracy ordering is asserted.
AblationGrid trend_grid();

std::uint64_t ablation_cell_seed(std::uint64_t base_seed, const AblationCell& cell,
                                 int seed_index);

struct CellResult {
    AblationCell cell;
    bool failed = false;
    std::string error;
    double masked_acc_mean = 0.0;
    double masked_acc_std = 0.0;
    double final_loss_mean = 0.0;
    double final_loss_std = 0.0;
    double probe_acc_mean = 0.0;
    double probe_acc_std = 0.0;
    double util_entropy_mean = 0.0;
    double util_entropy_std = 0.0;
};

struct SweepResult {
    std::vector<CellResult> cells;
    std::string csv_path;
};

// Writes sweep.csv under out_dir (one row per cell) and leaves per-run
// artifacts in out_dir/cells/.
SweepResult ablate(const AblationGrid& grid, const TrainConfig& base,
                   const std::vector<ManifestEntry>& manifest, const std::vector<int>& labels,
                   const std::string& out_dir);

} // namespace brq
