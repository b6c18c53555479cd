#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "test_util.hpp"

// End-to-end checks through the installed binary; BRQ_CLI_PATH is injected by
// the build.

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(BRQ_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string capture(const std::string& args, const std::string& dir) {
    const std::string out_file = dir + "/stdout.txt";
    const std::string cmd = std::string(BRQ_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
    const int status = std::system(cmd.c_str());
    (void)status;
    std::ifstream f(out_file);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("usage errors exit 1") {
    CHECK(run("definitely-not-a-subcommand") == 1);
    CHECK(run("") == 1);
    CHECK(run("pretrain --no-such-flag x") == 1);
}

TEST_CASE("missing inputs exit 2") {
    const std::string dir = make_temp_dir("cli_err");
    CHECK(run("pretrain --manifest " + dir + "/absent.jsonl --out " + dir) == 2);
    CHECK(run("gen-corpus --out " + dir + "/c --n-utts 0") == 2);
}

TEST_CASE("grad-check exits 0 and reports a tight error bound") {
    const std::string dir = make_temp_dir("cli_gc");
    const std::string out = capture("grad-check --seed 7", dir);
    CHECK(out.find("gradient check passed") != std::string::npos);
    CHECK(run("grad-check --seed 7") == 0);
}

TEST_CASE("mask-stats emits the documented CSV schema") {
    const std::string dir = make_temp_dir("cli_mask");
    const std::string out =
        capture("mask-stats --frames 20000 --start-prob 0.15 --seed 3", dir);
    CHECK(out.find("start_prob,span,analytic_coverage,empirical_coverage,n_frames\n") !=
          std::string::npos);
    CHECK(out.find("0.15,4,0.47799375,") != std::string::npos);
}

TEST_CASE("full pipeline through the CLI is deterministic") {
    const std::string dir = make_temp_dir("cli_pipe");
    REQUIRE(run("gen-corpus --out " + dir +
                "/corpus --seed 3 --n-utts 8 --classes 2 --dur-min 0.6 --dur-max 1.0") == 0);

    std::ofstream cfg(dir + "/cfg.json");
    cfg << R"({"steps": 4, "warmup_steps": 2, "max_batch_seconds": 3,
               "quantizer": {"codebook_size": 32}, "predictor": {"hidden_dim": 16}})";
    cfg.close();

    const std::string manifest = dir + "/corpus/manifest.jsonl";
    REQUIRE(run("pretrain --manifest " + manifest + " --config " + dir +
                "/cfg.json --seed 5 --out " + dir + "/run1") == 0);
    REQUIRE(run("pretrain --manifest " + manifest + " --config " + dir +
                "/cfg.json --seed 5 --out " + dir + "/run2") == 0);
    CHECK(slurp(dir + "/run1/metrics.csv") == slurp(dir + "/run2/metrics.csv"));
    CHECK(slurp(dir + "/run1/checkpoints/step_4.brq") ==
          slurp(dir + "/run2/checkpoints/step_4.brq"));

    SUBCASE("quantize dumps targets and utilization") {
        REQUIRE(run("quantize --manifest " + manifest + " --config " + dir +
                    "/cfg.json --seed 5 --out " + dir + "/q --dump-features") == 0);
        const auto targets = slurp(dir + "/q/targets.txt");
        const std::string text(targets.begin(), targets.end());
        CHECK(text.find("utt_00000 ") == 0);
        CHECK(std::filesystem::exists(dir + "/q/features/utt_00003.mel80"));
    }
    SUBCASE("probe writes its report row") {
        REQUIRE(run("probe --manifest " + manifest + " --labels " + dir +
                    "/corpus/labels.csv --checkpoint " + dir +
                    "/run1/checkpoints/step_4.brq --seed 2 --steps 300 --out " + dir +
                    "/probe") == 0);
        const auto report = slurp(dir + "/probe/probe.csv");
        const std::string text(report.begin(), report.end());
        CHECK(text.find("checkpoint,seed,train_acc,test_acc,w_h1,w_h2\n") == 0);
        CHECK(text.find("step_4.brq,2,") != std::string::npos);
    }
    SUBCASE("ablate produces the sweep CSV on the trend grid") {
        std::ofstream abl_cfg(dir + "/abl.json");
        abl_cfg << R"({"steps": 3, "warmup_steps": 2, "max_batch_seconds": 3,
                       "predictor": {"hidden_dim": 8}})";
        abl_cfg.close();
        REQUIRE(run("ablate --manifest " + manifest + " --labels " + dir +
                    "/corpus/labels.csv --config " + dir +
                    "/abl.json --seed 4 --grid trend --seeds-per-cell 1 --out " + dir +
                    "/sweep") == 0);
        const auto csv = slurp(dir + "/sweep/sweep.csv");
        const std::string text(csv.begin(), csv.end());
        CHECK(text.find("start_prob,codebook_size,n_seeds,") == 0);
        CHECK(text.find("\n0.01,64,1,") != std::string::npos);
        CHECK(text.find("\n0.1,64,1,") != std::string::npos);
    }
}
