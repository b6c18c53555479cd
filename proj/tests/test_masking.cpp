#include <doctest.h>

#include <cmath>

#include "brq/error.hpp"
#include "brq/masking.hpp"

using namespace brq;

namespace {

MelSpectrogram random_mel(std::size_t frames, PrngState& rng) {
    MelSpectrogram mel;
    mel.frames = Matrix(frames, 80);
    for (double& v : mel.frames.data) {
        v = rng.gaussian(-5.0, 3.0);
    }
    return mel;
}

double coverage_interior(const MaskSpec& mask, int span) {
    std::size_t covered = 0, interior = 0;
    for (std::size_t t = static_cast<std::size_t>(span - 1); t < mask.covered.size(); ++t) {
        ++interior;
        covered += mask.covered[t] ? 1 : 0;
    }
    return static_cast<double>(covered) / static_cast<double>(interior);
}

} // namespace

TEST_CASE("degenerate start probabilities") {
    PrngState rng(1);
    MaskPolicy policy;
    SUBCASE("zero probability masks nothing") {
        policy.start_prob = 0.0;
        const MaskSpec mask = sample_mask(500, policy, rng);
        CHECK(mask.starts.empty());
        for (auto c : mask.covered) {
            CHECK(c == 0);
        }
    }
    SUBCASE("probability one masks everything") {
        policy.start_prob = 1.0;
        const MaskSpec mask = sample_mask(500, policy, rng);
        CHECK(mask.starts.size() == 500);
        for (auto c : mask.covered) {
            CHECK(c == 1);
        }
    }
}

TEST_CASE("covered/starts consistency on random masks") {
    PrngState rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        MaskPolicy policy;
        policy.start_prob = 0.05 + 0.2 * rng.uniform53();
        policy.span = 1 + static_cast<int>(rng.next_below(6));
        const std::size_t frames = 50 + rng.next_below(200);
        const MaskSpec mask = sample_mask(frames, policy, rng);
        MaskVector expected(frames, 0);
        for (std::size_t s : mask.starts) {
            for (std::size_t t = s; t < std::min(frames, s + policy.span); ++t) {
                expected[t] = 1;
            }
        }
        CHECK(mask.covered == expected);
        for (std::size_t i = 1; i < mask.starts.size(); ++i) {
            CHECK(mask.starts[i - 1] < mask.starts[i]);
        }
    }
}

TEST_CASE("expected_coverage closed forms") {
    MaskPolicy policy;
    policy.start_prob = 0.15;
    policy.span = 4;
    CHECK(expected_coverage(policy) == doctest::Approx(0.47799375).epsilon(1e-12));
    policy.start_prob = 0.01;
    CHECK(expected_coverage(policy) == doctest::Approx(0.03940399).epsilon(1e-10));
    policy.span = 1;
    policy.start_prob = 0.37;
    CHECK(expected_coverage(policy) == doctest::Approx(0.37).epsilon(1e-15));
}

TEST_CASE("empirical interior coverage matches the analytic value") {
    MaskPolicy policy;
    policy.span = 4;
    SUBCASE("p = 0.15") {
        policy.start_prob = 0.15;
        PrngState rng(3);
        const MaskSpec mask = sample_mask(100000, policy, rng);
        CHECK(coverage_interior(mask, policy.span) ==
              doctest::Approx(expected_coverage(policy)).epsilon(0.025));
    }
    SUBCASE("p = 0.01") {
        policy.start_prob = 0.01;
        PrngState rng(4);
        const MaskSpec mask = sample_mask(100000, policy, rng);
        CHECK(std::fabs(coverage_interior(mask, policy.span) - expected_coverage(policy)) <
              0.005);
    }
}

TEST_CASE("apply_mask replaces exactly the covered rows") {
    PrngState rng(5);
    const MelSpectrogram mel = random_mel(120, rng);
    MaskPolicy policy;
    policy.start_prob = 0.2;

    SUBCASE("empty mask is the identity") {
        MaskSpec mask;
        mask.covered.assign(120, 0);
        const MelSpectrogram out = apply_mask(mel, mask, policy, rng);
        CHECK(out.frames.data == mel.frames.data);
    }
    SUBCASE("unmasked rows are bit-identical, masked rows change") {
        const MaskSpec mask = sample_mask(120, policy, rng);
        const MelSpectrogram out = apply_mask(mel, mask, policy, rng);
        for (std::size_t t = 0; t < 120; ++t) {
            for (std::size_t j = 0; j < 80; ++j) {
                if (!mask.covered[t]) {
                    CHECK(out.frames(t, j) == mel.frames(t, j));
                }
            }
        }
    }
    SUBCASE("zero noise std pins masked rows to the mean") {
        MaskPolicy quiet = policy;
        quiet.noise_std = 0.0;
        quiet.noise_mean = -4.5;
        MaskSpec mask;
        mask.covered.assign(120, 0);
        mask.covered[3] = 1;
        mask.covered[77] = 1;
        const MelSpectrogram out = apply_mask(mel, mask, quiet, rng);
        for (std::size_t j = 0; j < 80; ++j) {
            CHECK(out.frames(3, j) == -4.5);
            CHECK(out.frames(77, j) == -4.5);
        }
    }
    SUBCASE("full-mask noise has the configured spread") {
        const MelSpectrogram big = random_mel(1500, rng); // 1500*80 = 120k draws
        MaskSpec mask;
        mask.covered.assign(1500, 1);
        const MelSpectrogram out = apply_mask(big, mask, policy, rng);
        double sum = 0.0, sq = 0.0;
        for (double v : out.frames.data) {
            sum += v;
            sq += v * v;
        }
        const double n = static_cast<double>(out.frames.data.size());
        const double mean = sum / n;
        const double stddev = std::sqrt(sq / n - mean * mean);
        CHECK(std::fabs(stddev - policy.noise_std) <= 0.05 * policy.noise_std);
    }
    SUBCASE("length mismatch rejected") {
        MaskSpec mask;
        mask.covered.assign(119, 0);
        try {
            apply_mask(mel, mask, policy, rng);
            FAIL("expected LengthMismatch");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::LengthMismatch);
        }
    }
}

TEST_CASE("reduce_mask ANY semantics") {
    SUBCASE("no coverage reduces to no coverage") {
        MaskSpec mask;
        mask.covered.assign(40, 0);
        const MaskVector reduced = reduce_mask(mask, 4);
        CHECK(reduced.size() == 10);
        for (auto r : reduced) {
            CHECK(r == 0);
        }
    }
    SUBCASE("single covered mel frame lights one stacked position") {
        MaskSpec mask;
        mask.covered.assign(40, 0);
        mask.covered[5] = 1;
        const MaskVector reduced = reduce_mask(mask, 4);
        for (std::size_t i = 0; i < reduced.size(); ++i) {
            CHECK(reduced[i] == (i == 1 ? 1 : 0));
        }
    }
    SUBCASE("stacked coverage dominates mel coverage") {
        PrngState rng(6);
        MaskPolicy policy;
        policy.start_prob = 0.1;
        for (int trial = 0; trial < 30; ++trial) {
            const std::size_t frames = 40 + rng.next_below(200);
            const MaskSpec mask = sample_mask(frames, policy, rng);
            const MaskVector reduced = reduce_mask(mask, 4);
            const std::size_t usable = reduced.size() * 4;
            std::size_t mel_covered = 0;
            for (std::size_t t = 0; t < usable; ++t) {
                mel_covered += mask.covered[t] ? 1 : 0;
            }
            std::size_t stacked_covered = 0;
            for (auto r : reduced) {
                stacked_covered += r ? 1 : 0;
            }
            CHECK(static_cast<double>(stacked_covered) / reduced.size() >=
                  static_cast<double>(mel_covered) / usable);
        }
    }
}
