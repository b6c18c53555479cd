#include "brq/probe.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "brq/error.hpp"

namespace brq {

std::array<double, 2> LayerWeights::effective() const {
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m);
    const double e1 = std::exp(logits[1] - m);
    const double denom = e0 + e1;
    return {e0 / denom, e1 / denom};
}

PooledStates pooled_hidden_states(const PredictorParams& params, const AudioBuffer& audio,
                                  int stack) {
    const MelSpectrogram mel = log_mel_spectrogram(audio);
    const StackedFeatures feats = stack_frames(mel, stack);
    const Activations acts = forward(params, feats.frames);

    const std::size_t hidden = acts.h1.cols;
    const double inv_frames = 1.0 / static_cast<double>(acts.h1.rows);
    PooledStates pooled;
    pooled.h1.assign(hidden, 0.0);
    pooled.h2.assign(hidden, 0.0);
    for (std::size_t t = 0; t < acts.h1.rows; ++t) {
        for (std::size_t h = 0; h < hidden; ++h) {
            pooled.h1[h] += acts.h1(t, h);
            pooled.h2[h] += acts.h2(t, h);
        }
    }
    for (std::size_t h = 0; h < hidden; ++h) {
        pooled.h1[h] *= inv_frames;
        pooled.h2[h] *= inv_frames;
    }
    return pooled;
}

std::vector<double> extract_features(const PredictorParams& params, const LayerWeights& weights,
                                     const AudioBuffer& audio, int stack) {
    const PooledStates pooled = pooled_hidden_states(params, audio, stack);
    const auto w = weights.effective();
    std::vector<double> feature(pooled.h1.size());
    for (std::size_t h = 0; h < feature.size(); ++h) {
        feature[h] = w[0] * pooled.h1[h] + w[1] * pooled.h2[h];
    }
    return feature;
}

namespace {

void check_dataset(const ProbeDataset& data) {
    if (data.labels.empty() || data.pooled_h1.rows != data.labels.size() ||
        !data.pooled_h1.same_shape(data.pooled_h2)) {
        fail(ErrorKind::ShapeMismatch, "probe dataset rows/labels disagree");
    }
}

} // namespace

ProbeParams train_probe(const ProbeDataset& train, int class_count,
                        const ProbeTrainConfig& config) {
    check_dataset(train);
    if (class_count < 2 || config.steps < 0 || config.lr <= 0.0) {
        fail(ErrorKind::InvalidConfig, "probe needs class_count>=2, steps>=0, lr>0");
    }
    std::set<int> distinct(train.labels.begin(), train.labels.end());
    if (distinct.size() < 2) {
        fail(ErrorKind::DegenerateLabels, "training labels contain a single class");
    }
    for (int label : train.labels) {
        if (label < 0 || label >= class_count) {
            fail(ErrorKind::IndexOutOfRange, "label outside [0, class_count)");
        }
    }

    const std::size_t n = train.labels.size();
    const std::size_t hidden = train.pooled_h1.cols;
    const std::size_t classes = static_cast<std::size_t>(class_count);

    ProbeParams probe;
    probe.w = Matrix(hidden, classes);
    probe.b.assign(classes, 0.0);

    std::vector<double> feature(hidden), logits(classes), softmax(classes);
    std::vector<double> dfeature(hidden);
    Matrix grad_w(hidden, classes);
    std::vector<double> grad_b(classes);

    for (int iter = 0; iter < config.steps; ++iter) {
        const auto w = probe.layer_weights.effective();
        std::fill(grad_w.data.begin(), grad_w.data.end(), 0.0);
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        double grad_lw[2] = {0.0, 0.0}; // d loss / d effective weight

        for (std::size_t u = 0; u < n; ++u) {
            const double* p1 = train.pooled_h1.row(u);
            const double* p2 = train.pooled_h2.row(u);
            for (std::size_t h = 0; h < hidden; ++h) {
                feature[h] = w[0] * p1[h] + w[1] * p2[h];
            }
            for (std::size_t c = 0; c < classes; ++c) {
                double acc = probe.b[c];
                for (std::size_t h = 0; h < hidden; ++h) {
                    acc += feature[h] * probe.w(h, c);
                }
                logits[c] = acc;
            }
            double max_logit = logits[0];
            for (std::size_t c = 1; c < classes; ++c) {
                max_logit = std::max(max_logit, logits[c]);
            }
            double denom = 0.0;
            for (std::size_t c = 0; c < classes; ++c) {
                softmax[c] = std::exp(logits[c] - max_logit);
                denom += softmax[c];
            }
            for (std::size_t c = 0; c < classes; ++c) {
                softmax[c] /= denom;
            }

            // dlogits = (softmax - onehot) / N
            const double inv_n = 1.0 / static_cast<double>(n);
            std::fill(dfeature.begin(), dfeature.end(), 0.0);
            for (std::size_t c = 0; c < classes; ++c) {
                double d = softmax[c] * inv_n;
                if (c == static_cast<std::size_t>(train.labels[u])) {
                    d -= inv_n;
                }
                grad_b[c] += d;
                for (std::size_t h = 0; h < hidden; ++h) {
                    grad_w(h, c) += feature[h] * d;
                    dfeature[h] += probe.w(h, c) * d;
                }
            }
            for (std::size_t h = 0; h < hidden; ++h) {
                grad_lw[0] += dfeature[h] * p1[h];
                grad_lw[1] += dfeature[h] * p2[h];
            }
        }

        // Through the softmax over layer-weight logits.
        const double mix = w[0] * grad_lw[0] + w[1] * grad_lw[1];
        const double dlogit0 = w[0] * (grad_lw[0] - mix);
        const double dlogit1 = w[1] * (grad_lw[1] - mix);

        for (std::size_t i = 0; i < probe.w.data.size(); ++i) {
            probe.w.data[i] -= config.lr * grad_w.data[i];
        }
        for (std::size_t c = 0; c < classes; ++c) {
            probe.b[c] -= config.lr * grad_b[c];
        }
        probe.layer_weights.logits[0] -= config.lr * dlogit0;
        probe.layer_weights.logits[1] -= config.lr * dlogit1;
    }
    return probe;
}

ProbeDataset build_probe_dataset(const PredictorParams& params,
                                 const std::vector<ManifestEntry>& manifest,
                                 const std::vector<int>& labels, int stack) {
    if (manifest.size() != labels.size()) {
        fail(ErrorKind::LengthMismatch, "manifest and labels sizes disagree");
    }
    if (manifest.empty()) {
        fail(ErrorKind::EmptyManifest, "empty manifest");
    }
    const std::size_t hidden = static_cast<std::size_t>(params.config.hidden_dim);
    ProbeDataset data;
    data.pooled_h1 = Matrix(manifest.size(), hidden);
    data.pooled_h2 = Matrix(manifest.size(), hidden);
    data.labels = labels;
    for (std::size_t u = 0; u < manifest.size(); ++u) {
        const PooledStates pooled =
            pooled_hidden_states(params, load_wav(manifest[u].path), stack);
        std::copy(pooled.h1.begin(), pooled.h1.end(), data.pooled_h1.row(u));
        std::copy(pooled.h2.begin(), pooled.h2.end(), data.pooled_h2.row(u));
    }
    return data;
}

std::pair<ProbeDataset, ProbeDataset> split_probe_dataset(const ProbeDataset& all,
                                                          double test_fraction,
                                                          std::uint64_t seed) {
    check_dataset(all);
    if (test_fraction < 0.0 || test_fraction > 1.0) {
        fail(ErrorKind::InvalidRange, "test_fraction must be in [0, 1]");
    }
    const std::size_t n = all.labels.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    PrngState rng(derive_seed(seed, "probe-split"));
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
        std::swap(order[i], order[j]);
    }
    const std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * n));

    const std::size_t hidden = all.pooled_h1.cols;
    auto take = [&](std::size_t begin, std::size_t count) {
        ProbeDataset part;
        part.pooled_h1 = Matrix(count, hidden);
        part.pooled_h2 = Matrix(count, hidden);
        part.labels.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t src = order[begin + i];
            std::copy(all.pooled_h1.row(src), all.pooled_h1.row(src) + hidden,
                      part.pooled_h1.row(i));
            std::copy(all.pooled_h2.row(src), all.pooled_h2.row(src) + hidden,
                      part.pooled_h2.row(i));
            part.labels[i] = all.labels[src];
        }
        return part;
    };
    return {take(n_test, n - n_test), take(0, n_test)};
}

double evaluate_probe(const ProbeParams& probe, const ProbeDataset& data) {
    if (data.labels.empty()) {
        fail(ErrorKind::EmptyEval, "empty evaluation set");
    }
    check_dataset(data);
    const std::size_t hidden = probe.w.rows;
    const std::size_t classes = probe.w.cols;
    if (data.pooled_h1.cols != hidden) {
        fail(ErrorKind::DimensionMismatch, "probe width does not match features");
    }
    const auto w = probe.layer_weights.effective();
    std::size_t correct = 0;
    std::vector<double> feature(hidden), logits(classes);
    for (std::size_t u = 0; u < data.labels.size(); ++u) {
        const double* p1 = data.pooled_h1.row(u);
        const double* p2 = data.pooled_h2.row(u);
        for (std::size_t h = 0; h < hidden; ++h) {
            feature[h] = w[0] * p1[h] + w[1] * p2[h];
        }
        std::size_t best = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            double acc = probe.b[c];
            for (std::size_t h = 0; h < hidden; ++h) {
                acc += feature[h] * probe.w(h, c);
            }
            logits[c] = acc;
            if (c > 0 && logits[c] > logits[best]) {
                best = c;
            }
        }
        if (best == static_cast<std::size_t>(data.labels[u])) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.labels.size());
}

} // namespace brq
