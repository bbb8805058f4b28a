#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ctxlog/corpus.hpp"
#include "ctxlog/detection.hpp"
#include "ctxlog/evaluation.hpp"
#include "ctxlog/model.hpp"
#include "ctxlog/synth.hpp"
#include "ctxlog/training.hpp"
#include "json.hpp"

namespace ctxlog {

struct DatasetSection {
    std::string profile = "synthetic";
    std::filesystem::path log_path;     // empty: <work_dir>/synth/synthetic.log for the synthetic profile
    std::filesystem::path labels_path;  // session label table, when the profile uses one
    SplitRatios split_ratios = kDefaultSplitRatios;
    std::size_t max_sequence_len = 256;
    std::int64_t window_seconds = 60;
};

struct DetectionSection {
    double percentile = 95.0;
    double epsilon = 1e-6;
    FeatureMask features = FeatureMask::all();
    std::size_t n_reference = 2000;
    bool cache = true;
    std::size_t cache_capacity = 0;  // 0 = unbounded
};

struct ExperimentSection {
    std::vector<double> percentiles{80, 85, 90, 95, 97.5, 99, 100};
    std::vector<PerturbKind> perturb_kinds{PerturbKind::word_add_random};
    std::vector<std::size_t> perturb_magnitudes{0, 1, 5, 20};
    double perturb_message_fraction = 0.1;
    std::size_t perturb_sequences = 200;
    std::vector<double> contamination{0.0, 0.01, 0.02, 0.05};
    std::vector<std::size_t> reference_sizes{125, 500, 2000};
    std::vector<LengthBucket> length_buckets{{1, 10}, {11, 256}};
};

struct RunConfig {
    std::filesystem::path work_dir = "run";
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    DatasetSection dataset;
    SynthSpec synth;
    std::size_t vocab_size = 512;
    ModelConfig model;
    TrainConfig train;
    DetectionSection detection;
    ExperimentSection experiments;

    // Full default tree; the accepted key set.
    static nlohmann::json defaults_json();
    // Strict: unknown keys and wrong types raise ConfigInvalid naming the field.
    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    // Cross-field checks.
    void validate() const;

    // Canonical artifact location.
    std::filesystem::path artifact(const std::string& name) const { return work_dir / name; }
    std::filesystem::path log_path() const;
    std::filesystem::path labels_path() const;
    DatasetProfile profile() const;
};

// Applies "a.b.c=value" (value parsed as JSON, else taken as a string).
void apply_override(nlohmann::json& tree, const std::string& assignment);
// Defaults <- file (optional) <- overrides, then from_json + validate.
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

// Per-stage seed from the master seed.
std::uint64_t stage_seed(const RunConfig& cfg, const std::string& stage);

// Loaded model with its tokenizer.
struct TrainedModel {
    ModelConfig config;
    ParameterStore<float> params;
    BpeVocab vocab;
};

// Artifact loaders. A missing file raises ConfigInvalid naming the stage
// that produces it.
std::vector<Sequence> load_dataset(const RunConfig& cfg);
Splits load_splits(const RunConfig& cfg, const std::vector<Sequence>& dataset);
Splits load_splits(const RunConfig& cfg);
BpeVocab load_vocab(const RunConfig& cfg);
TrainedModel load_model(const RunConfig& cfg);
ReferenceIndex load_reference(const RunConfig& cfg);
CalibrationStats load_calibration(const RunConfig& cfg);

// All test sequences (normal and abnormal) in chronological order.
std::vector<Sequence> test_sequences(const Splits& splits);
std::vector<Label> labels_of(const std::vector<Sequence>& seqs);

// Stages. Each returns the JSON summary printed by the CLI and writes its
// artifacts under work_dir. Missing inputs raise ConfigInvalid.
nlohmann::json stage_synth(const RunConfig& cfg);
nlohmann::json stage_prepare(const RunConfig& cfg);
nlohmann::json stage_fit_tokenizer(const RunConfig& cfg);
nlohmann::json stage_train(const RunConfig& cfg, const std::function<void(const EpochStats&)>& on_epoch = {});
nlohmann::json stage_calibrate(const RunConfig& cfg);
nlohmann::json stage_score(const RunConfig& cfg);
nlohmann::json stage_evaluate(const RunConfig& cfg);
nlohmann::json stage_ablate(const RunConfig& cfg);
nlohmann::json stage_sweep_threshold(const RunConfig& cfg);
nlohmann::json stage_perturb(const RunConfig& cfg);
nlohmann::json stage_contaminate(const RunConfig& cfg);
nlohmann::json stage_sweep_reference(const RunConfig& cfg);
nlohmann::json stage_cache_stats(const RunConfig& cfg);

// In-memory building blocks shared by the stages and the experiments.
BpeVocab fit_tokenizer(const std::vector<Sequence>& train, std::size_t vocab_size, std::uint64_t seed);
TrainHistory train_model(const RunConfig& cfg, const BpeVocab& vocab, const Splits& splits,
                         ParameterStore<float>& params, const std::function<void(const EpochStats&)>& on_epoch = {});

struct DetectionRun {
    ReferenceIndex index;
    std::vector<ScoreVector> calibration_scores;
    CalibrationStats stats;
    std::vector<Sequence> test;
    std::vector<ScoreVector> test_scores;
    MetricRow metrics;
};

// Reference index, calibration and test scoring, metrics.
DetectionRun run_detection(const RunConfig& cfg, const TrainedModel& model, const Splits& splits,
                           EmbeddingCache* cache = nullptr);

// Marks a seeded `fraction` of the abnormal sequences outside the test
// slice as normal; the test slice is left untouched.
std::vector<Sequence> contaminate(const std::vector<Sequence>& dataset, const SplitRatios& ratios, double fraction,
                                  std::uint64_t seed, std::size_t* flipped = nullptr);

// Point-feature F1 per reference size, index rebuilt with the same seed.
std::vector<MetricRow> reference_size_sweep(const RunConfig& cfg, const TrainedModel& model, const Splits& splits,
                                            const std::vector<std::size_t>& sizes);

} // namespace ctxlog
