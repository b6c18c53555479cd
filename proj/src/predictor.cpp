#include "brq/predictor.hpp"

#include <cmath>
#include <cstring>

#include "brq/error.hpp"
#include "brq/prng.hpp"

namespace brq {

namespace {

void check_config(const PredictorConfig& c) {
    if (c.input_dim < 1 || c.hidden_dim < 1 || c.context_radius < 0 || c.codebook_size < 2) {
        fail(ErrorKind::InvalidConfig, "predictor needs D>=1, H>=1, r>=0, K>=2");
    }
}

std::size_t context_dim(const PredictorConfig& c) {
    return static_cast<std::size_t>(2 * c.context_radius + 1) *
           static_cast<std::size_t>(c.input_dim);
}

// Concatenation of rows t-r..t+r, zero-padded past the edges.
void build_context(const Matrix& feats, std::size_t t, int radius, std::vector<double>& ctx) {
    const std::size_t dim = feats.cols;
    std::fill(ctx.begin(), ctx.end(), 0.0);
    for (int o = -radius; o <= radius; ++o) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + o;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(feats.rows)) {
            continue;
        }
        std::memcpy(ctx.data() + static_cast<std::size_t>(o + radius) * dim,
                    feats.row(static_cast<std::size_t>(src)), dim * sizeof(double));
    }
}

// out[j] = bias[j] + sum_i in[i] * w(i, j); w rows are contiguous.
void affine(const std::vector<double>& in, const Matrix& w, const std::vector<double>& bias,
            std::vector<double>& out) {
    out = bias;
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double v = in[i];
        const double* wrow = w.row(i);
        for (std::size_t j = 0; j < w.cols; ++j) {
            out[j] += v * wrow[j];
        }
    }
}

// Stable softmax of a logit row (max subtraction).
void softmax_row(const double* logits, std::size_t n, std::vector<double>& out) {
    double max_logit = logits[0];
    for (std::size_t k = 1; k < n; ++k) {
        max_logit = std::max(max_logit, logits[k]);
    }
    double denom = 0.0;
    out.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        out[k] = std::exp(logits[k] - max_logit);
        denom += out[k];
    }
    for (std::size_t k = 0; k < n; ++k) {
        out[k] /= denom;
    }
}

} // namespace

std::vector<TensorRef> tensor_refs(PredictorParams& p) {
    return {
        {"W1", &p.w1.data, {p.w1.rows, p.w1.cols}},
        {"b1", &p.b1, {p.b1.size()}},
        {"W2", &p.w2.data, {p.w2.rows, p.w2.cols}},
        {"b2", &p.b2, {p.b2.size()}},
        {"W_out", &p.w_out.data, {p.w_out.rows, p.w_out.cols}},
        {"b_out", &p.b_out, {p.b_out.size()}},
    };
}

std::vector<ConstTensorRef> tensor_refs(const PredictorParams& p) {
    return {
        {"W1", &p.w1.data, {p.w1.rows, p.w1.cols}},
        {"b1", &p.b1, {p.b1.size()}},
        {"W2", &p.w2.data, {p.w2.rows, p.w2.cols}},
        {"b2", &p.b2, {p.b2.size()}},
        {"W_out", &p.w_out.data, {p.w_out.rows, p.w_out.cols}},
        {"b_out", &p.b_out, {p.b_out.size()}},
    };
}

std::vector<TensorRef> tensor_refs(Gradients& g) {
    return {
        {"W1", &g.w1.data, {g.w1.rows, g.w1.cols}},
        {"b1", &g.b1, {g.b1.size()}},
        {"W2", &g.w2.data, {g.w2.rows, g.w2.cols}},
        {"b2", &g.b2, {g.b2.size()}},
        {"W_out", &g.w_out.data, {g.w_out.rows, g.w_out.cols}},
        {"b_out", &g.b_out, {g.b_out.size()}},
    };
}

std::vector<ConstTensorRef> tensor_refs(const Gradients& g) {
    return {
        {"W1", &g.w1.data, {g.w1.rows, g.w1.cols}},
        {"b1", &g.b1, {g.b1.size()}},
        {"W2", &g.w2.data, {g.w2.rows, g.w2.cols}},
        {"b2", &g.b2, {g.b2.size()}},
        {"W_out", &g.w_out.data, {g.w_out.rows, g.w_out.cols}},
        {"b_out", &g.b_out, {g.b_out.size()}},
    };
}

PredictorParams init_predictor(const PredictorConfig& config) {
    check_config(config);
    const std::size_t ctx = context_dim(config);
    const std::size_t hidden = static_cast<std::size_t>(config.hidden_dim);
    const std::size_t codes = static_cast<std::size_t>(config.codebook_size);

    PredictorParams p;
    p.config = config;
    p.w1 = Matrix(ctx, hidden);
    p.b1.assign(hidden, 0.0);
    p.w2 = Matrix(hidden, hidden);
    p.b2.assign(hidden, 0.0);
    p.w_out = Matrix(hidden, codes);
    p.b_out.assign(codes, 0.0);

    PrngState rng(config.seed);
    auto fill_xavier = [&rng](Matrix& w) {
        const double bound = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
        for (double& v : w.data) {
            v = rng.uniform_open(-bound, bound);
        }
    };
    fill_xavier(p.w1);
    fill_xavier(p.w2);
    fill_xavier(p.w_out);
    return p;
}

Gradients zero_gradients(const PredictorParams& p) {
    Gradients g;
    g.w1 = Matrix(p.w1.rows, p.w1.cols);
    g.b1.assign(p.b1.size(), 0.0);
    g.w2 = Matrix(p.w2.rows, p.w2.cols);
    g.b2.assign(p.b2.size(), 0.0);
    g.w_out = Matrix(p.w_out.rows, p.w_out.cols);
    g.b_out.assign(p.b_out.size(), 0.0);
    return g;
}

Activations forward(const PredictorParams& params, const Matrix& feats) {
    const PredictorConfig& cfg = params.config;
    if (feats.cols != static_cast<std::size_t>(cfg.input_dim)) {
        fail(ErrorKind::DimensionMismatch,
             "feature dim " + std::to_string(feats.cols) + " != predictor input dim " +
                 std::to_string(cfg.input_dim));
    }
    const std::size_t frames = feats.rows;
    const std::size_t hidden = static_cast<std::size_t>(cfg.hidden_dim);
    const std::size_t codes = static_cast<std::size_t>(cfg.codebook_size);

    Activations acts;
    acts.h1 = Matrix(frames, hidden);
    acts.h2 = Matrix(frames, hidden);
    acts.logits = Matrix(frames, codes);

    std::vector<double> ctx(context_dim(cfg));
    std::vector<double> pre1, pre2, out, row1, row2;
    for (std::size_t t = 0; t < frames; ++t) {
        build_context(feats, t, cfg.context_radius, ctx);
        affine(ctx, params.w1, params.b1, pre1);
        row1.resize(hidden);
        for (std::size_t h = 0; h < hidden; ++h) {
            row1[h] = std::tanh(pre1[h]);
            acts.h1(t, h) = row1[h];
        }
        affine(row1, params.w2, params.b2, pre2);
        row2.resize(hidden);
        for (std::size_t h = 0; h < hidden; ++h) {
            row2[h] = std::tanh(pre2[h]);
            acts.h2(t, h) = row2[h];
        }
        affine(row2, params.w_out, params.b_out, out);
        std::memcpy(acts.logits.row(t), out.data(), codes * sizeof(double));
    }
    return acts;
}

LossResult masked_ce_loss(const Matrix& logits, const TargetSequence& targets,
                          const MaskVector& loss_mask) {
    if (targets.indices.size() != logits.rows || loss_mask.size() != logits.rows) {
        fail(ErrorKind::LengthMismatch, "logits, targets and mask lengths disagree");
    }
    LossResult result;
    result.per_position.assign(logits.rows, 0.0);
    double total = 0.0;
    for (std::size_t t = 0; t < logits.rows; ++t) {
        if (!loss_mask[t]) {
            continue;
        }
        const std::uint32_t target = targets.indices[t];
        if (target >= logits.cols) {
            fail(ErrorKind::IndexOutOfRange, "target index exceeds logit width");
        }
        const double* row = logits.row(t);
        double max_logit = row[0];
        for (std::size_t k = 1; k < logits.cols; ++k) {
            max_logit = std::max(max_logit, row[k]);
        }
        double denom = 0.0;
        for (std::size_t k = 0; k < logits.cols; ++k) {
            denom += std::exp(row[k] - max_logit);
        }
        const double loss_t = std::log(denom) - (row[target] - max_logit);
        result.per_position[t] = loss_t;
        total += loss_t;
        ++result.masked_count;
    }
    if (result.masked_count == 0) {
        fail(ErrorKind::EmptyMask, "no masked positions in loss");
    }
    result.loss = total / static_cast<double>(result.masked_count);
    return result;
}

Gradients backward(const PredictorParams& params, const Matrix& feats, const Activations& acts,
                   const TargetSequence& targets, const MaskVector& loss_mask) {
    const PredictorConfig& cfg = params.config;
    const std::size_t frames = feats.rows;
    const std::size_t hidden = static_cast<std::size_t>(cfg.hidden_dim);
    const std::size_t codes = static_cast<std::size_t>(cfg.codebook_size);
    if (acts.h1.rows != frames || acts.h2.rows != frames || acts.logits.rows != frames ||
        acts.logits.cols != codes || targets.indices.size() != frames ||
        loss_mask.size() != frames) {
        fail(ErrorKind::ShapeMismatch, "activations do not match feats/targets/mask");
    }
    std::size_t masked = 0;
    for (std::uint8_t m : loss_mask) {
        masked += m ? 1 : 0;
    }
    if (masked == 0) {
        fail(ErrorKind::EmptyMask, "no masked positions in backward");
    }
    const double inv_masked = 1.0 / static_cast<double>(masked);

    Gradients g = zero_gradients(params);
    std::vector<double> dlogits(codes), dh2(hidden), da2(hidden), dh1(hidden), da1(hidden);
    std::vector<double> softmax;
    std::vector<double> ctx(context_dim(cfg));

    for (std::size_t t = 0; t < frames; ++t) {
        if (!loss_mask[t]) {
            continue; // dlogits is zero on unmasked rows
        }
        softmax_row(acts.logits.row(t), codes, softmax);
        for (std::size_t k = 0; k < codes; ++k) {
            dlogits[k] = softmax[k] * inv_masked;
        }
        dlogits[targets.indices[t]] -= inv_masked;

        // Output layer.
        for (std::size_t k = 0; k < codes; ++k) {
            g.b_out[k] += dlogits[k];
        }
        for (std::size_t h = 0; h < hidden; ++h) {
            const double a = acts.h2(t, h);
            double* grow = g.w_out.row(h);
            const double* wrow = params.w_out.row(h);
            double acc = 0.0;
            for (std::size_t k = 0; k < codes; ++k) {
                grow[k] += a * dlogits[k];
                acc += wrow[k] * dlogits[k];
            }
            dh2[h] = acc;
        }

        // Second hidden layer, tanh' = 1 - h^2.
        for (std::size_t h = 0; h < hidden; ++h) {
            const double a = acts.h2(t, h);
            da2[h] = dh2[h] * (1.0 - a * a);
            g.b2[h] += da2[h];
        }
        for (std::size_t h = 0; h < hidden; ++h) {
            const double a = acts.h1(t, h);
            double* grow = g.w2.row(h);
            const double* wrow = params.w2.row(h);
            double acc = 0.0;
            for (std::size_t j = 0; j < hidden; ++j) {
                grow[j] += a * da2[j];
                acc += wrow[j] * da2[j];
            }
            dh1[h] = acc;
        }

        // First hidden layer.
        for (std::size_t h = 0; h < hidden; ++h) {
            const double a = acts.h1(t, h);
            da1[h] = dh1[h] * (1.0 - a * a);
            g.b1[h] += da1[h];
        }
        build_context(feats, t, cfg.context_radius, ctx);
        for (std::size_t c = 0; c < ctx.size(); ++c) {
            const double v = ctx[c];
            if (v == 0.0) {
                continue; // zero-padded context contributes nothing
            }
            double* grow = g.w1.row(c);
            for (std::size_t h = 0; h < hidden; ++h) {
                grow[h] += v * da1[h];
            }
        }
    }
    return g;
}

GradCheckReport grad_check(const PredictorConfig& config, int n_trials, double epsilon,
                           int frames) {
    check_config(config);
    if (epsilon <= 0.0) {
        fail(ErrorKind::InvalidEpsilon, "epsilon must be > 0");
    }
    if (n_trials < 1 || frames < 1) {
        fail(ErrorKind::InvalidConfig, "grad_check needs n_trials >= 1 and frames >= 1");
    }
    const std::size_t ctx = context_dim(config);
    const std::size_t hidden = static_cast<std::size_t>(config.hidden_dim);
    const std::size_t codes = static_cast<std::size_t>(config.codebook_size);
    const std::size_t total_params = ctx * hidden + hidden + hidden * hidden + hidden +
                                     hidden * codes + codes;
    if (total_params > 10000) {
        fail(ErrorKind::InvalidConfig, "grad_check limited to <= 1e4 parameters");
    }

    PrngState rng(config.seed);
    GradCheckReport report;
    report.trials = n_trials;

    for (int trial = 0; trial < n_trials; ++trial) {
        PredictorConfig trial_cfg = config;
        trial_cfg.seed = rng.next_u64();
        PredictorParams params = init_predictor(trial_cfg);

        Matrix feats(static_cast<std::size_t>(frames),
                     static_cast<std::size_t>(config.input_dim));
        for (double& v : feats.data) {
            v = rng.gaussian();
        }
        TargetSequence targets;
        for (int t = 0; t < frames; ++t) {
            targets.indices.push_back(static_cast<std::uint32_t>(rng.next_below(codes)));
        }
        MaskVector mask(static_cast<std::size_t>(frames), 0);
        bool any = false;
        for (auto& m : mask) {
            m = rng.bernoulli(0.5) ? 1 : 0;
            any = any || m;
        }
        if (!any) {
            mask[0] = 1;
        }

        const Activations acts = forward(params, feats);
        const Gradients analytic = backward(params, feats, acts, targets, mask);

        auto loss_of = [&](const PredictorParams& p) {
            return masked_ce_loss(forward(p, feats).logits, targets, mask).loss;
        };

        auto prefs = tensor_refs(params);
        auto grefs = tensor_refs(analytic);
        for (std::size_t tensor = 0; tensor < prefs.size(); ++tensor) {
            std::vector<double>& values = *prefs[tensor].data;
            const std::vector<double>& grads = *grefs[tensor].data;
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double saved = values[i];
                values[i] = saved + epsilon;
                const double plus = loss_of(params);
                values[i] = saved - epsilon;
                const double minus = loss_of(params);
                values[i] = saved;
                const double fd = (plus - minus) / (2.0 * epsilon);
                const double a = grads[i];
                const double rel =
                    std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-8});
                report.max_rel_error = std::max(report.max_rel_error, rel);
                ++report.coordinates_checked;
            }
        }
    }
    return report;
}

} // namespace brq
