// ctxlog command-line front end. Every subcommand prints one JSON line on
// stdout; exit status 0 ok, 1 validation error, 2 runtime error.

#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctxlog/errors.hpp"
#include "ctxlog/pipeline.hpp"
#include "json.hpp"

namespace {

using ctxlog::RunConfig;
using json = nlohmann::json;
using Stage = std::function<json(const RunConfig&)>;

int fail(const std::string& command, const std::string& kind, const std::string& message, int code) {
    std::cerr << "ctxlog " << command << ": " << message << "\n";
    std::cout << json{{"command", command}, {"status", "error"}, {"error", kind}, {"message", message}}.dump() << "\n";
    return code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Parser-free log anomaly detection"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    std::size_t workers = 0;
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "JSON run config");
    app.add_option("--set", overrides, "key=value override (repeatable)")->allow_extra_args(false);
    auto* workers_opt = app.add_option("--workers", workers, "worker threads for scoring")->check(CLI::PositiveNumber);
    auto* seed_opt = app.add_option("--seed", seed, "master seed");

    auto progress = [](const ctxlog::EpochStats& e) {
        std::cerr << "epoch " << e.epoch << " loss " << e.mean_loss << " val " << e.val_loss << " "
                  << e.duration_s << "s\n";
    };

    const std::map<std::string, std::pair<std::string, Stage>> stages{
        {"synth", {"generate the synthetic corpus", ctxlog::stage_synth}},
        {"prepare", {"parse logs into sequences and splits", ctxlog::stage_prepare}},
        {"fit-tokenizer", {"fit the byte-pair tokenizer", ctxlog::stage_fit_tokenizer}},
        {"train", {"train the encoders", [&](const RunConfig& c) { return ctxlog::stage_train(c, progress); }}},
        {"calibrate", {"build the reference index and fit calibration", ctxlog::stage_calibrate}},
        {"score", {"score the test split", ctxlog::stage_score}},
        {"evaluate", {"metrics, ROC and length buckets", ctxlog::stage_evaluate}},
        {"ablate", {"15-subset feature ablation", ctxlog::stage_ablate}},
        {"sweep-threshold", {"metrics across percentiles", ctxlog::stage_sweep_threshold}},
        {"perturb", {"score perturbed normal sequences", ctxlog::stage_perturb}},
        {"contaminate", {"retrain with flipped training labels", ctxlog::stage_contaminate}},
        {"sweep-reference", {"point-score F1 across reference sizes", ctxlog::stage_sweep_reference}},
        {"cache-stats", {"embedding cache counters on the test split", ctxlog::stage_cache_stats}},
    };
    for (const auto& [name, entry] : stages) app.add_subcommand(name, entry.first);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        if (*seed_opt) overrides.push_back("seed=" + std::to_string(seed));
        if (*workers_opt) overrides.push_back("workers=" + std::to_string(workers));
        const RunConfig cfg = ctxlog::load_run_config(config_path, overrides);
        const json out = stages.at(command).second(cfg);
        std::cout << out.dump() << "\n";
        return 0;
    } catch (const ctxlog::ConfigInvalid& e) {
        return fail(command, e.kind(), e.what(), 1);
    } catch (const ctxlog::InvalidSpec& e) {
        return fail(command, e.kind(), e.what(), 1);
    } catch (const ctxlog::Error& e) {
        return fail(command, e.kind(), e.what(), 2);
    } catch (const std::exception& e) {
        return fail(command, "Error", e.what(), 2);
    }
}
