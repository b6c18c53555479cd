#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "brq/audio.hpp"
#include "brq/checkpoint.hpp"
#include "brq/error.hpp"
#include "brq/trainer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace brq;

namespace {

std::vector<char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

TrainConfig tiny_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.steps = 6;
    cfg.warmup_steps = 4;
    cfg.max_batch_seconds = 4.0;
    cfg.quantizer.codebook_size = 32;
    cfg.predictor.hidden_dim = 16;
    return cfg;
}

} // namespace

TEST_CASE("config JSON round trip") {
    TrainConfig cfg = tiny_config(77);
    cfg.mask.start_prob = 0.07;
    cfg.checkpoint_every = 3;
    const TrainConfig back = train_config_from_json(train_config_to_json(cfg));
    CHECK(back.seed == 77);
    CHECK(back.steps == 6);
    CHECK(back.warmup_steps == 4);
    CHECK(back.max_batch_seconds == 4.0);
    CHECK(back.mask.start_prob == 0.07);
    CHECK(back.checkpoint_every == 3);
    CHECK(back.quantizer.codebook_size == 32);
    CHECK(back.predictor.hidden_dim == 16);

    CHECK_THROWS_AS(train_config_from_json("{nope"), Error);
}

TEST_CASE("synthetic corpus") {
    SUBCASE("bad specs rejected") {
        CorpusSpec spec;
        spec.n_utts = 0;
        try {
            gen_synthetic_corpus(spec, make_temp_dir("corpus_bad"));
            FAIL("expected InvalidRange");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::InvalidRange);
        }
        spec.n_utts = 4;
        spec.class_count = 1;
        CHECK_THROWS_AS(gen_synthetic_corpus(spec, make_temp_dir("corpus_bad")), Error);
        spec.class_count = 4;
        spec.dur_min_s = 2.0;
        spec.dur_max_s = 1.0;
        CHECK_THROWS_AS(gen_synthetic_corpus(spec, make_temp_dir("corpus_bad")), Error);
    }
    SUBCASE("same seed gives a byte-identical corpus") {
        CorpusSpec spec;
        spec.n_utts = 6;
        spec.class_count = 3;
        spec.dur_min_s = 0.5;
        spec.dur_max_s = 1.0;
        spec.seed = 42;
        const std::string dir_a = make_temp_dir("corpus_a");
        const std::string dir_b = make_temp_dir("corpus_b");
        const CorpusResult a = gen_synthetic_corpus(spec, dir_a);
        const CorpusResult b = gen_synthetic_corpus(spec, dir_b);
        CHECK(slurp(a.manifest_path) == slurp(b.manifest_path));
        CHECK(slurp(a.labels_path) == slurp(b.labels_path));
        for (std::size_t i = 0; i < a.manifest.size(); ++i) {
            CHECK(slurp(a.manifest[i].path) == slurp(b.manifest[i].path));
        }
    }
    SUBCASE("manifest loads back with resolved paths and labels align") {
        CorpusSpec spec;
        spec.n_utts = 5;
        spec.class_count = 2;
        spec.dur_min_s = 0.5;
        spec.dur_max_s = 0.8;
        spec.seed = 9;
        const std::string dir = make_temp_dir("corpus_rt");
        const CorpusResult made = gen_synthetic_corpus(spec, dir);
        const auto loaded = load_manifest(made.manifest_path);
        REQUIRE(loaded.size() == 5);
        for (std::size_t i = 0; i < loaded.size(); ++i) {
            CHECK(loaded[i].id == made.manifest[i].id);
            CHECK(std::filesystem::exists(loaded[i].path));
            CHECK(loaded[i].duration_s == doctest::Approx(made.manifest[i].duration_s));
        }
        const auto labels = load_labels_for(loaded, made.labels_path);
        CHECK(labels == made.labels);
        // Round-robin assignment.
        CHECK(labels[0] == 0);
        CHECK(labels[1] == 1);
        CHECK(labels[2] == 0);
    }
    SUBCASE("distant classes occupy distinct dominant mel bins") {
        CorpusSpec spec;
        spec.n_utts = 16;
        spec.class_count = 4;
        spec.dur_min_s = 1.0;
        spec.dur_max_s = 1.5;
        spec.seed = 4;
        const std::string dir = make_temp_dir("corpus_bins");
        const CorpusResult corpus = gen_synthetic_corpus(spec, dir);

        std::array<std::vector<double>, 2> hist = {std::vector<double>(80, 0.0),
                                                   std::vector<double>(80, 0.0)};
        std::array<double, 2> totals = {0.0, 0.0};
        for (std::size_t u = 0; u < corpus.manifest.size(); ++u) {
            const int label = corpus.labels[u];
            if (label != 0 && label != 3) {
                continue;
            }
            const int which = (label == 0) ? 0 : 1;
            const MelSpectrogram mel =
                log_mel_spectrogram(load_wav(corpus.manifest[u].path));
            for (std::size_t t = 0; t < mel.frames.rows; ++t) {
                const double* row = mel.frames.row(t);
                std::size_t argmax = 0;
                for (std::size_t m = 1; m < 80; ++m) {
                    if (row[m] > row[argmax]) {
                        argmax = m;
                    }
                }
                hist[which][argmax] += 1.0;
                totals[which] += 1.0;
            }
        }
        double overlap = 0.0;
        for (int m = 0; m < 80; ++m) {
            overlap += std::min(hist[0][m] / totals[0], hist[1][m] / totals[1]);
        }
        // Observed 0.0 with this seed; the spec'd bound is 5%.
        CHECK(overlap <= 0.05);
    }
}

TEST_CASE("greedy batching") {
    SUBCASE("fills until the cap, then starts over") {
        const BatchPlan plan = greedy_batches({40.0, 50.0, 30.0}, 100.0);
        REQUIRE(plan.batches.size() == 2);
        CHECK(plan.batches[0] == std::vector<std::size_t>{0, 1});
        CHECK(plan.batches[1] == std::vector<std::size_t>{2});
        CHECK(plan.oversized_singletons == 0);
    }
    SUBCASE("oversized utterance becomes a flagged singleton") {
        const BatchPlan plan = greedy_batches({120.0}, 100.0);
        REQUIRE(plan.batches.size() == 1);
        CHECK(plan.batches[0] == std::vector<std::size_t>{0});
        CHECK(plan.oversized_singletons == 1);
    }
    SUBCASE("empty input rejected") {
        try {
            greedy_batches({}, 100.0);
            FAIL("expected EmptyManifest");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::EmptyManifest);
        }
    }
}

TEST_CASE("dynamic batches partition the manifest under the cap") {
    PrngState meta(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + meta.next_below(40);
        std::vector<ManifestEntry> manifest(n);
        for (std::size_t i = 0; i < n; ++i) {
            manifest[i].id = "u" + std::to_string(i);
            manifest[i].duration_s = 0.5 + 12.0 * meta.uniform53();
        }
        const double cap = 10.0;
        PrngState rng(trial);
        const BatchPlan plan = dynamic_batches(manifest, cap, rng);

        std::vector<int> seen(n, 0);
        for (const auto& batch : plan.batches) {
            CHECK(!batch.empty());
            double total = 0.0;
            for (std::size_t idx : batch) {
                REQUIRE(idx < n);
                ++seen[idx];
                total += manifest[idx].duration_s;
            }
            if (batch.size() > 1) {
                CHECK(total <= cap + 1e-9);
            }
        }
        for (int count : seen) {
            CHECK(count == 1);
        }
    }
}

TEST_CASE("learning-rate schedule") {
    TrainConfig cfg;
    cfg.warmup_steps = 1000;
    CHECK(lr_at(0, cfg) == 0.0);
    CHECK(lr_at(1000, cfg) == doctest::Approx(0.0008).epsilon(1e-15));
    CHECK(lr_at(2000, cfg) == doctest::Approx(0.0008).epsilon(1e-15));
    CHECK(lr_at(500, cfg) == doctest::Approx(0.0004).epsilon(1e-12));
    cfg.warmup_steps = 0;
    CHECK(lr_at(0, cfg) == doctest::Approx(0.0008));
}

TEST_CASE("adam") {
    PredictorConfig pcfg;
    pcfg.input_dim = 6;
    pcfg.hidden_dim = 4;
    pcfg.context_radius = 0;
    pcfg.codebook_size = 5;
    pcfg.seed = 3;

    SUBCASE("first step moves by about -lr * sign(g)") {
        PredictorParams params = init_predictor(pcfg);
        const PredictorParams before = params;
        Gradients grads = zero_gradients(params);
        for (auto& ref : tensor_refs(grads)) {
            double fill = 0.5;
            for (double& v : *ref.data) {
                v = fill;
                fill = -fill; // alternate signs, constant magnitude
            }
        }
        AdamState state = init_adam(params);
        const double lr = 1e-3;
        adam_step(params, grads, state, lr);
        auto prefs = tensor_refs(params);
        auto brefs = tensor_refs(before);
        auto grefs = tensor_refs(grads);
        for (std::size_t t = 0; t < prefs.size(); ++t) {
            for (std::size_t i = 0; i < prefs[t].data->size(); ++i) {
                const double delta = (*prefs[t].data)[i] - (*brefs[t].data)[i];
                const double expected = -lr * ((*grefs[t].data)[i] > 0 ? 1.0 : -1.0);
                CHECK(std::fabs(delta - expected) <= lr * 1e-6);
            }
        }
        CHECK(state.step == 1);
    }
    SUBCASE("zero gradients leave parameters untouched") {
        PredictorParams params = init_predictor(pcfg);
        const std::vector<double> w1_before = params.w1.data;
        const Gradients grads = zero_gradients(params);
        AdamState state = init_adam(params);
        adam_step(params, grads, state, 0.01);
        CHECK(params.w1.data == w1_before);
        CHECK(state.step == 1);
    }
    SUBCASE("hundred random steps match a plain reference") {
        PredictorParams params = init_predictor(pcfg);
        AdamState state = init_adam(params);

        // Flatten for the reference.
        auto flatten = [&](PredictorParams& p) {
            std::vector<double> flat;
            for (auto& ref : tensor_refs(p)) {
                flat.insert(flat.end(), ref.data->begin(), ref.data->end());
            }
            return flat;
        };
        std::vector<double> ref_params = flatten(params);
        oracle::AdamRef reference(ref_params.size());

        PrngState rng(8);
        for (int step = 0; step < 100; ++step) {
            Gradients grads = zero_gradients(params);
            std::vector<double> flat_grads;
            for (auto& ref : tensor_refs(grads)) {
                for (double& v : *ref.data) {
                    v = rng.gaussian();
                    flat_grads.push_back(v);
                }
            }
            const double lr = 1e-3 * (1.0 + 0.5 * rng.uniform53());
            adam_step(params, grads, state, lr);
            reference.step(ref_params, flat_grads, lr);
        }
        const std::vector<double> flat_after = flatten(params);
        for (std::size_t i = 0; i < flat_after.size(); ++i) {
            const double rel = std::fabs(flat_after[i] - ref_params[i]) /
                               std::max({std::fabs(flat_after[i]),
                                         std::fabs(ref_params[i]), 1e-12});
            CHECK(rel < 1e-10);
        }
    }
    SUBCASE("non-finite gradients abort untouched") {
        PredictorParams params = init_predictor(pcfg);
        const std::vector<double> w1_before = params.w1.data;
        Gradients grads = zero_gradients(params);
        grads.w2.data[3] = std::nan("");
        AdamState state = init_adam(params);
        try {
            adam_step(params, grads, state, 0.01);
            FAIL("expected NonFiniteGradient");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::NonFiniteGradient);
        }
        CHECK(params.w1.data == w1_before);
        CHECK(state.step == 0);
    }
}

TEST_CASE("masked accuracy") {
    SUBCASE("perfect logits score 1") {
        Matrix logits(3, 4, 0.0);
        logits(0, 2) = 5.0;
        logits(1, 0) = 5.0;
        logits(2, 3) = 5.0;
        TargetSequence targets;
        targets.indices = {2, 0, 3};
        CHECK(masked_accuracy(logits, targets, {1, 1, 1}) == 1.0);
    }
    SUBCASE("uniform logits predict class 0 by the tie rule") {
        Matrix logits(4, 8, 1.5);
        TargetSequence targets;
        targets.indices = {0, 1, 0, 7};
        CHECK(masked_accuracy(logits, targets, {1, 1, 1, 1}) == 0.5);
    }
    SUBCASE("random logits sit near chance") {
        PrngState rng(13);
        const std::size_t n = 10000;
        Matrix logits(n, 4);
        for (double& v : logits.data) {
            v = rng.gaussian();
        }
        TargetSequence targets;
        for (std::size_t i = 0; i < n; ++i) {
            targets.indices.push_back(static_cast<std::uint32_t>(rng.next_below(4)));
        }
        const double acc = masked_accuracy(logits, targets, MaskVector(n, 1));
        CHECK(std::fabs(acc - 0.25) <= 0.02);
    }
    SUBCASE("needs at least one masked position") {
        Matrix logits(2, 4, 0.0);
        TargetSequence targets;
        targets.indices = {0, 1};
        CHECK_THROWS_AS(masked_accuracy(logits, targets, {0, 0}), Error);
    }
}

TEST_CASE("pretrain") {
    CorpusSpec spec;
    spec.n_utts = 10;
    spec.class_count = 2;
    spec.dur_min_s = 0.6;
    spec.dur_max_s = 1.2;
    spec.seed = 100;
    const CorpusResult corpus = gen_synthetic_corpus(spec, make_temp_dir("pretrain_corpus"));

    SUBCASE("zero steps leave an empty metrics body and the initial checkpoint") {
        TrainConfig cfg = tiny_config(5);
        cfg.steps = 0;
        const std::string out = make_temp_dir("pretrain_zero");
        const RunArtifacts artifacts = pretrain(corpus.manifest, cfg, out);
        const auto metrics = slurp(artifacts.metrics_path);
        const std::string expected =
            "step,lr,loss,masked_acc,util_entropy,ms_per_step,skipped_batches\n";
        CHECK(std::string(metrics.begin(), metrics.end()) == expected);
        REQUIRE(artifacts.checkpoint_paths.size() == 1);
        CHECK(artifacts.checkpoint_paths[0].find("step_0.brq") != std::string::npos);
        CHECK(artifacts.steps_done == 0);
    }
    SUBCASE("fixed seed reproduces metrics and checkpoints byte for byte") {
        const TrainConfig cfg = tiny_config(21);
        const std::string out_a = make_temp_dir("pretrain_a");
        const std::string out_b = make_temp_dir("pretrain_b");
        const RunArtifacts a = pretrain(corpus.manifest, cfg, out_a);
        const RunArtifacts b = pretrain(corpus.manifest, cfg, out_b);
        CHECK(slurp(a.metrics_path) == slurp(b.metrics_path));
        REQUIRE(a.checkpoint_paths.size() == b.checkpoint_paths.size());
        for (std::size_t i = 0; i < a.checkpoint_paths.size(); ++i) {
            CHECK(slurp(a.checkpoint_paths[i]) == slurp(b.checkpoint_paths[i]));
        }
        CHECK(a.steps_done == 6);
        // Midpoint and final checkpoints exist alongside the initial one.
        CHECK(a.checkpoint_paths.size() == 3);
    }
    SUBCASE("different seeds diverge") {
        const std::string out_a = make_temp_dir("pretrain_s1");
        const std::string out_b = make_temp_dir("pretrain_s2");
        const RunArtifacts a = pretrain(corpus.manifest, tiny_config(1), out_a);
        const RunArtifacts b = pretrain(corpus.manifest, tiny_config(2), out_b);
        CHECK(slurp(a.metrics_path) != slurp(b.metrics_path));
    }
    SUBCASE("a mask that never fires aborts instead of spinning") {
        TrainConfig cfg = tiny_config(5);
        cfg.mask.start_prob = 0.0;
        try {
            pretrain(corpus.manifest, cfg, make_temp_dir("pretrain_nomask"));
            FAIL("expected EmptyMask");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::EmptyMask);
        }
    }
    SUBCASE("empty manifest rejected") {
        CHECK_THROWS_AS(pretrain({}, tiny_config(5), make_temp_dir("pretrain_empty")), Error);
    }
    SUBCASE("quantizer stays frozen through training") {
        TrainConfig cfg = tiny_config(33);
        const std::string out = make_temp_dir("pretrain_frozen");
        const RunArtifacts artifacts = pretrain(corpus.manifest, cfg, out);
        // The quantizer tensors in the first and last checkpoints agree bit
        // for bit; only predictor tensors may move.
        const Checkpoint first = load_checkpoint(artifacts.checkpoint_paths.front());
        const Checkpoint last = load_checkpoint(artifacts.checkpoint_paths.back());
        CHECK(first.quantizer.projection.data == last.quantizer.projection.data);
        CHECK(first.quantizer.codebook.data == last.quantizer.codebook.data);
        CHECK(first.predictor.w_out.data != last.predictor.w_out.data);
    }
}
