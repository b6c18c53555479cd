#include "brq/quantizer.hpp"

#include <cmath>
#include <fstream>

#include "brq/error.hpp"
#include "brq/prng.hpp"

namespace brq {

Quantizer init_quantizer(const QuantizerConfig& config) {
    if (config.input_dim < 1 || config.code_dim < 1 || config.codebook_size < 1) {
        fail(ErrorKind::InvalidConfig, "quantizer dims must all be >= 1");
    }
    PrngState rng(config.seed);
    Quantizer q;
    q.config = config;

    const double bound = std::sqrt(6.0 / (config.input_dim + config.code_dim));
    q.projection = Matrix(static_cast<std::size_t>(config.input_dim),
                          static_cast<std::size_t>(config.code_dim));
    for (double& v : q.projection.data) {
        v = rng.uniform_open(-bound, bound);
    }
    q.codebook = Matrix(static_cast<std::size_t>(config.codebook_size),
                        static_cast<std::size_t>(config.code_dim));
    for (double& v : q.codebook.data) {
        v = rng.gaussian();
    }
    return q;
}

TargetSequence quantize(const Quantizer& q, const StackedFeatures& feats) {
    const std::size_t dim = q.projection.rows;
    const std::size_t code_dim = q.projection.cols;
    const std::size_t n_codes = q.codebook.rows;
    if (feats.frames.cols != dim) {
        fail(ErrorKind::DimensionMismatch,
             "feature dim " + std::to_string(feats.frames.cols) +
                 " does not match quantizer input dim " + std::to_string(dim));
    }

    // Normalized codebook, precomputed once per call in extended precision.
    std::vector<long double> codes(n_codes * code_dim);
    for (std::size_t k = 0; k < n_codes; ++k) {
        const double* row = q.codebook.row(k);
        long double norm_sq = 0.0L;
        for (std::size_t j = 0; j < code_dim; ++j) {
            norm_sq += static_cast<long double>(row[j]) * row[j];
        }
        const long double norm = std::sqrt(norm_sq);
        for (std::size_t j = 0; j < code_dim; ++j) {
            codes[k * code_dim + j] =
                (norm == 0.0L) ? static_cast<long double>(row[j]) : row[j] / norm;
        }
    }

    TargetSequence targets;
    targets.indices.reserve(feats.frames.rows);
    std::vector<long double> projected(code_dim);
    for (std::size_t t = 0; t < feats.frames.rows; ++t) {
        const double* x = feats.frames.row(t);
        for (std::size_t j = 0; j < code_dim; ++j) {
            long double acc = 0.0L;
            for (std::size_t d = 0; d < dim; ++d) {
                acc += static_cast<long double>(x[d]) * q.projection(d, j);
            }
            projected[j] = acc;
        }
        long double norm_sq = 0.0L;
        for (std::size_t j = 0; j < code_dim; ++j) {
            norm_sq += projected[j] * projected[j];
        }
        const long double norm = std::sqrt(norm_sq);
        if (norm != 0.0L) {
            for (std::size_t j = 0; j < code_dim; ++j) {
                projected[j] /= norm;
            }
        }

        std::uint32_t best = 0;
        long double best_dist = 0.0L;
        for (std::size_t k = 0; k < n_codes; ++k) {
            const long double* c = codes.data() + k * code_dim;
            long double dist = 0.0L;
            for (std::size_t j = 0; j < code_dim; ++j) {
                const long double diff = projected[j] - c[j];
                dist += diff * diff;
            }
            if (k == 0 || dist < best_dist) {
                best_dist = dist;
                best = static_cast<std::uint32_t>(k);
            }
        }
        targets.indices.push_back(best);
    }
    return targets;
}

UtilizationStats codebook_utilization(const std::vector<std::uint32_t>& targets,
                                      int codebook_size) {
    if (codebook_size < 1) {
        fail(ErrorKind::InvalidConfig, "codebook_size must be >= 1");
    }
    UtilizationStats stats;
    stats.histogram.assign(static_cast<std::size_t>(codebook_size), 0);
    for (std::uint32_t idx : targets) {
        if (idx >= static_cast<std::uint32_t>(codebook_size)) {
            fail(ErrorKind::IndexOutOfRange,
                 "target index " + std::to_string(idx) + " >= K=" + std::to_string(codebook_size));
        }
        ++stats.histogram[idx];
    }
    for (std::uint64_t count : stats.histogram) {
        if (count > 0) {
            ++stats.distinct_codes;
        }
    }
    if (codebook_size == 1) {
        stats.normalized_entropy = 1.0;
        return stats;
    }
    const double total = static_cast<double>(targets.size());
    if (total == 0.0) {
        stats.normalized_entropy = 0.0;
        return stats;
    }
    double entropy = 0.0;
    for (std::uint64_t count : stats.histogram) {
        if (count > 0) {
            const double p = static_cast<double>(count) / total;
            entropy -= p * std::log(p);
        }
    }
    stats.normalized_entropy = entropy / std::log(static_cast<double>(codebook_size));
    return stats;
}

void write_target_dump(const std::string& path,
                       const std::vector<std::pair<std::string, TargetSequence>>& utterances) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorKind::IoError, "cannot open file for writing: " + path);
    }
    for (const auto& [id, targets] : utterances) {
        out << id;
        for (std::uint32_t idx : targets.indices) {
            out << ' ' << idx;
        }
        out << '\n';
    }
    if (!out) {
        fail(ErrorKind::IoError, "short write: " + path);
    }
}

} // namespace brq
