#include "doctest.h"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

std::string cli() {
    const char* p = std::getenv("CTXLOG_CLI");
    REQUIRE_MESSAGE(p != nullptr, "CTXLOG_CLI is not set");
    return p;
}

std::string tiny_config() { return std::string(CTXLOG_SOURCE_DIR) + "/configs/tiny.json"; }

Result run(const std::string& args) {
    Result r;
    const std::string cmd = cli() + " " + args + " 2>/dev/null";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::size_t line_count(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

struct WorkDir {
    fs::path path;
    explicit WorkDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("ctxlog_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
    }
    ~WorkDir() { fs::remove_all(path); }
    std::string args() const { return "--config " + tiny_config() + " --set work_dir=" + path.string(); }
};

// One JSON object on one line.
json summary(const Result& r) {
    REQUIRE(!r.out.empty());
    CHECK(r.out.find('\n') == r.out.size() - 1);
    return json::parse(r.out);
}

} // namespace

TEST_CASE("full pipeline through the command line") {
    WorkDir w("full");
    const char* stages[] = {"synth",  "prepare",         "fit-tokenizer", "train",      "calibrate",
                            "score",  "evaluate",        "ablate",        "sweep-threshold", "perturb",
                            "contaminate", "sweep-reference", "cache-stats"};
    for (const char* s : stages) {
        const auto r = run(std::string(s) + " " + w.args());
        INFO("stage " << s << ": " << r.out);
        REQUIRE(r.code == 0);
        const auto j = summary(r);
        CHECK(j["status"] == "ok");
        CHECK(j["command"] == s);
    }
    CHECK(line_count(w.path / "ablation.csv") == 16);
    CHECK(line_count(w.path / "thresholds.csv") == 8);
    const auto metrics = json::parse(slurp(w.path / "metrics.json"));
    CHECK(metrics["overall"].contains("f1"));
    CHECK(metrics["length_buckets"].size() == 2);
    const auto cal = json::parse(slurp(w.path / "calibration.json"));
    CHECK(cal["percentile"] == 95.0);
    for (const char* f : {"dataset.jsonl", "splits.json", "vocab.json", "model.ckpt", "train_log.csv",
                          "reference.emb", "test_scores.csv", "roc.csv", "length_buckets.csv", "perturb.csv",
                          "contamination.csv", "reference_sweep.csv", "cache_stats.json"})
        CHECK_MESSAGE(fs::exists(w.path / f), f);
    // No temp files left behind by the atomic writer.
    for (const auto& e : fs::directory_iterator(w.path)) CHECK(e.path().filename().string().find(".tmp") == std::string::npos);
}

TEST_CASE("same seed gives identical artifacts") {
    WorkDir a("seed_a"), b("seed_b");
    for (const auto* w : {&a, &b})
        for (const char* s : {"synth", "prepare", "fit-tokenizer"}) REQUIRE(run(std::string(s) + " " + w->args()).code == 0);
    CHECK(slurp(a.path / "dataset.jsonl") == slurp(b.path / "dataset.jsonl"));
    CHECK(slurp(a.path / "splits.json") == slurp(b.path / "splits.json"));
    CHECK(slurp(a.path / "vocab.json") == slurp(b.path / "vocab.json"));

    WorkDir c("seed_c");
    REQUIRE(run("synth " + c.args() + " --seed 99").code == 0);
    CHECK(slurp(a.path / "synth" / "synthetic.log") != slurp(c.path / "synth" / "synthetic.log"));
}

TEST_CASE("validation errors exit with 1") {
    WorkDir w("invalid");
    auto r = run("synth " + w.args() + " --set model.nonsense=3");
    CHECK(r.code == 1);
    auto j = summary(r);
    CHECK(j["status"] == "error");
    CHECK(j["message"].get<std::string>().find("model.nonsense") != std::string::npos);

    CHECK(run("synth " + w.args() + " --set train.max_epochs=\"many\"").code == 1);
    CHECK(run("synth " + w.args() + " --set synth.anomaly_mix.novel_template=0.5").code == 1);
    CHECK(run("synth --config /nonexistent/cfg.json").code == 1);
    CHECK(run("synth " + w.args() + " --workers 0").code == 1);
    CHECK(run("").code == 1);
    CHECK(run("bogus-command").code == 1);

    // Stage inputs missing: the message names the path.
    r = run("score " + w.args());
    CHECK(r.code == 1);
    j = summary(r);
    CHECK(j["message"].get<std::string>().find("missing") != std::string::npos);
}

TEST_CASE("runtime errors exit with 2") {
    WorkDir w("runtime");
    fs::create_directories(w.path);
    std::ofstream(w.path / "dataset.jsonl") << "{not json\n";
    std::ofstream(w.path / "splits.json") << "{}";
    const auto r = run("fit-tokenizer " + w.args());
    CHECK(r.code == 2);
    CHECK(summary(r)["status"] == "error");
}
