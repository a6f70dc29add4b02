#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;  // stdout and stderr interleaved
};

Run run(const std::string& args) {
    const std::string cmd = std::string("\"") + THGCL_CLI_PATH + "\" " + args + " 2>&1";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

const fs::path& dataset() {
    static const fs::path dir = [] {
        const auto d = thgcl::testing::scratch_dir("cli_data");
        const Run r = run("synth --out " + d.string() +
                          " --classes 3 --train 20 --eval 8 --clip-ms 4000 --audio-dim 6 --video-dim 10"
                          " --event-len-ms 1000 --seed 5");
        REQUIRE(r.code == 0);
        return d;
    }();
    return dir;
}

fs::path tiny_config(const fs::path& dir) {
    const fs::path p = dir / "tiny.cfg";
    std::ofstream(p) << "hidden = 8\nd = 4\nlayers = 1\nbatch_size = 4\nmax_iterations = 6\neval_every = 3\n";
    return p;
}

}  // namespace

TEST_CASE("synth writes manifests and describe summarizes them") {
    const fs::path& d = dataset();
    CHECK(fs::exists(d / "train.tsv"));
    CHECK(fs::exists(d / "eval.tsv"));
    CHECK(fs::exists(d / "events.tsv"));
    CHECK(fs::exists(d / "features/train00000.audio.thgf"));
    const Run r = run("describe --manifest " + (d / "train.tsv").string());
    CHECK(r.code == 0);
    CHECK(r.out.find("clips=20\n") != std::string::npos);
    CHECK(r.out.find("audio_segments.4=20\n") != std::string::npos);
    CHECK(r.out.find("video_segments.16=20\n") != std::string::npos);
}

TEST_CASE("build-graph dumps a parseable edge list") {
    const fs::path& d = dataset();
    const Run r = run("build-graph --manifest " + (d / "train.tsv").string() + " --clip train00001");
    REQUIRE(r.code == 0);
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    CHECK(line == "# thgcl-graph num_audio=4 num_video=16");
    std::map<std::string, int> kinds;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string kind;
        std::size_t i, j;
        double raw, norm;
        REQUIRE(static_cast<bool>(ss >> kind >> i >> j >> raw >> norm));
        CHECK(raw > 0);
        CHECK(norm > 0);
        CHECK(norm <= 1.0);
        ++kinds[kind];
    }
    CHECK(kinds["audio"] > 0);
    CHECK(kinds["video"] > 0);
    CHECK(kinds["inter"] > 0);

    const auto again = run("build-graph --manifest " + (d / "train.tsv").string() + " --clip train00001");
    CHECK(again.out == r.out);
    const auto gauss = run("build-graph --manifest " + (d / "train.tsv").string() +
                           " --clip train00001 --temporal-mode both_gau");
    CHECK(gauss.code == 0);
    CHECK(gauss.out != r.out);
    CHECK(run("build-graph --manifest " + (d / "train.tsv").string() + " --clip nope").code == 2);
}

TEST_CASE("train, then eval the checkpoint") {
    const fs::path& d = dataset();
    const auto out = thgcl::testing::scratch_dir("cli_train");
    const std::string base = "train --config " + tiny_config(out).string() + " --manifest " +
                             (d / "train.tsv").string() + " --eval-manifest " + (d / "eval.tsv").string() +
                             " --quiet --out ";
    const Run r = run(base + (out / "a").string());
    REQUIRE(r.code == 0);
    CHECK(r.out.find("iterations 6") != std::string::npos);
    CHECK(r.out.find("eval mAP") != std::string::npos);
    for (const char* f : {"config.txt", "checkpoint.thgc", "train_log.txt", "loss_curve.tsv", "eval_curve.tsv",
                          "metrics.txt", "metrics_summary.txt", "eval_metrics.txt", "eval_metrics_summary.txt"}) {
        CHECK_MESSAGE(fs::exists(out / "a" / f), f);
    }
    const std::string log = slurp(out / "a/train_log.txt");
    CHECK(log.rfind("iter=1 fl=", 0) == 0);
    CHECK(log.find("eval_iter=3 map=") != std::string::npos);

    // Same seed and config: identical log.
    REQUIRE(run(base + (out / "b").string()).code == 0);
    CHECK(slurp(out / "b/train_log.txt") == log);

    const Run e = run("eval --checkpoint " + (out / "a/checkpoint.thgc").string() + " --manifest " +
                      (d / "eval.tsv").string() + " --out " + (out / "ev").string());
    REQUIRE(e.code == 0);
    CHECK(slurp(out / "ev/metrics_summary.txt") == slurp(out / "a/eval_metrics_summary.txt"));

    const Run other = run(base + (out / "c").string() + " --loss-mode ce_only --seed 3");
    REQUIRE(other.code == 0);
    CHECK(slurp(out / "c/train_log.txt") != log);
    CHECK(slurp(out / "c/config.txt").find("loss_mode = ce_only") != std::string::npos);
}

TEST_CASE("configuration errors are reported") {
    const fs::path& d = dataset();
    const auto dir = thgcl::testing::scratch_dir("cli_bad");
    std::ofstream(dir / "bad.cfg") << "hidden = 8\nmomentum = 0.9\n";
    const Run r = run("train --config " + (dir / "bad.cfg").string() + " --manifest " + (d / "train.tsv").string() +
                      " --out " + (dir / "o").string());
    CHECK(r.code == 2);
    CHECK(r.out.find("unknown key 'momentum'") != std::string::npos);
    CHECK(run("train --manifest " + (d / "train.tsv").string() + " --out " + (dir / "o").string() +
              " --loss-mode nope")
              .code == 2);
    CHECK(run("eval --checkpoint " + (dir / "missing.thgc").string() + " --manifest " + (d / "eval.tsv").string())
              .code == 2);
}

TEST_CASE("gradcheck reports every parameter group") {
    const Run r = run("gradcheck");
    CHECK(r.code == 0);
    CHECK(r.out.find("classifier.weight") != std::string::npos);
    CHECK(r.out.find("max relative error") != std::string::npos);
    CHECK(run("gradcheck --tolerance 1e-30").code == 1);
}
