#include "ctxlog/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "ctxlog/checkpoint.hpp"
#include "ctxlog/errors.hpp"
#include "ctxlog/io.hpp"
#include "ctxlog/rng.hpp"
#include "ctxlog/scoring.hpp"
#include "ctxlog/tokenizer.hpp"

namespace ctxlog {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---- config ----

namespace {

// Objects whose keys are data rather than schema.
bool free_keys(const std::string& path) { return path == "synth.anomaly_mix"; }

void merge_strict(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) throw ConfigInvalid((path.empty() ? std::string("config") : path) + ": expected an object");
    for (const auto& [key, value] : user.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ConfigInvalid("unknown key '" + here + "'");
        json& slot = base[key];
        if (slot.is_object() && !free_keys(here)) {
            merge_strict(slot, value, here);
        } else {
            slot = value;
        }
    }
}

const json& field(const json& j, const std::string& path) {
    const json* cur = &j;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!cur->is_object() || !cur->contains(key)) throw ConfigInvalid("missing key '" + path + "'");
        cur = &(*cur)[key];
        if (dot == std::string::npos) return *cur;
        start = dot + 1;
    }
}

double get_real(const json& j, const std::string& path) {
    const json& v = field(j, path);
    if (!v.is_number()) throw ConfigInvalid(path + ": expected a number");
    return v.get<double>();
}

std::size_t as_count(const json& v, const std::string& path) {
    if (!v.is_number_unsigned()) throw ConfigInvalid(path + ": expected a non-negative integer");
    return v.get<std::size_t>();
}

std::size_t get_count(const json& j, const std::string& path) { return as_count(field(j, path), path); }

std::string get_string(const json& j, const std::string& path) {
    const json& v = field(j, path);
    if (!v.is_string()) throw ConfigInvalid(path + ": expected a string");
    return v.get<std::string>();
}

bool get_bool(const json& j, const std::string& path) {
    const json& v = field(j, path);
    if (!v.is_boolean()) throw ConfigInvalid(path + ": expected true or false");
    return v.get<bool>();
}

const json& get_array(const json& j, const std::string& path) {
    const json& v = field(j, path);
    if (!v.is_array()) throw ConfigInvalid(path + ": expected an array");
    return v;
}

std::vector<double> get_reals(const json& j, const std::string& path) {
    std::vector<double> out;
    for (const auto& v : get_array(j, path)) {
        if (!v.is_number()) throw ConfigInvalid(path + ": expected numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

std::vector<std::size_t> get_counts(const json& j, const std::string& path) {
    std::vector<std::size_t> out;
    for (const auto& v : get_array(j, path)) out.push_back(as_count(v, path));
    return out;
}

std::vector<std::string> get_strings(const json& j, const std::string& path) {
    std::vector<std::string> out;
    for (const auto& v : get_array(j, path)) {
        if (!v.is_string()) throw ConfigInvalid(path + ": expected strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

} // namespace

json RunConfig::defaults_json() {
    const RunConfig d;
    return d.to_json();
}

json RunConfig::to_json() const {
    json mix = json::object();
    for (const auto& [kind, share] : synth.anomaly_mix) mix[to_string(kind)] = share;
    json kinds = json::array();
    for (auto k : experiments.perturb_kinds) kinds.push_back(to_string(k));
    json buckets = json::array();
    for (const auto& b : experiments.length_buckets) buckets.push_back({b.lo, b.hi});
    return json{
        {"work_dir", work_dir.string()},
        {"seed", seed},
        {"workers", workers},
        {"dataset",
         {{"profile", dataset.profile},
          {"log_path", dataset.log_path.string()},
          {"labels_path", dataset.labels_path.string()},
          {"split_ratios", dataset.split_ratios},
          {"max_sequence_len", dataset.max_sequence_len},
          {"window_seconds", dataset.window_seconds}}},
        {"synth",
         {{"n_templates", synth.n_templates},
          {"params_per_template", synth.params_per_template},
          {"n_normal", synth.n_normal_sequences},
          {"n_abnormal", synth.n_abnormal_sequences},
          {"min_len", synth.sequence_len_range.first},
          {"max_len", synth.sequence_len_range.second},
          {"anomaly_mix", mix}}},
        {"tokenizer", {{"vocab_size", vocab_size}}},
        {"model",
         {{"vocab_size", model.vocab_size},
          {"token_embed_dim", model.token_embed_dim},
          {"d", model.d},
          {"n_layers", model.n_layers},
          {"n_heads", model.n_heads},
          {"max_message_len", model.max_message_len},
          {"max_sequence_len", model.max_sequence_len},
          {"feedforward_mult", model.feedforward_mult},
          {"dropout", model.dropout}}},
        {"train",
         {{"tau", train.tau},
          {"mask_ratio", train.mask_ratio},
          {"learning_rate", train.learning_rate},
          {"batch_size", train.batch_size},
          {"beta1", train.beta1},
          {"beta2", train.beta2},
          {"weight_decay", train.weight_decay},
          {"adam_eps", train.adam_eps},
          {"grad_clip_norm", train.grad_clip_norm},
          {"max_epochs", train.max_epochs},
          {"patience", train.patience},
          {"min_delta", train.min_delta},
          {"time_budget_s", train.time_budget_s}}},
        {"detection",
         {{"percentile", detection.percentile},
          {"epsilon", detection.epsilon},
          {"features", detection.features.names()},
          {"n_reference", detection.n_reference},
          {"cache", detection.cache},
          {"cache_capacity", detection.cache_capacity}}},
        {"experiments",
         {{"percentiles", experiments.percentiles},
          {"perturb_kinds", kinds},
          {"perturb_magnitudes", experiments.perturb_magnitudes},
          {"perturb_message_fraction", experiments.perturb_message_fraction},
          {"perturb_sequences", experiments.perturb_sequences},
          {"contamination", experiments.contamination},
          {"reference_sizes", experiments.reference_sizes},
          {"length_buckets", buckets}}},
    };
}

RunConfig RunConfig::from_json(const json& user) {
    json j = defaults_json();
    merge_strict(j, user, "");

    RunConfig c;
    c.work_dir = get_string(j, "work_dir");
    {
        const json& s = field(j, "seed");
        if (!s.is_number_unsigned()) throw ConfigInvalid("seed: expected a non-negative integer");
        c.seed = s.get<std::uint64_t>();
    }
    c.workers = get_count(j, "workers");

    c.dataset.profile = get_string(j, "dataset.profile");
    c.dataset.log_path = get_string(j, "dataset.log_path");
    c.dataset.labels_path = get_string(j, "dataset.labels_path");
    const auto ratios = get_reals(j, "dataset.split_ratios");
    if (ratios.size() != 4) throw ConfigInvalid("dataset.split_ratios: expected 4 numbers");
    std::copy(ratios.begin(), ratios.end(), c.dataset.split_ratios.begin());
    c.dataset.max_sequence_len = get_count(j, "dataset.max_sequence_len");
    {
        const json& w = field(j, "dataset.window_seconds");
        if (!w.is_number_integer()) throw ConfigInvalid("dataset.window_seconds: expected an integer");
        c.dataset.window_seconds = w.get<std::int64_t>();
    }

    c.synth.n_templates = get_count(j, "synth.n_templates");
    c.synth.params_per_template = get_count(j, "synth.params_per_template");
    c.synth.n_normal_sequences = get_count(j, "synth.n_normal");
    c.synth.n_abnormal_sequences = get_count(j, "synth.n_abnormal");
    c.synth.sequence_len_range = {get_count(j, "synth.min_len"), get_count(j, "synth.max_len")};
    c.synth.anomaly_mix.clear();
    for (const auto& [name, share] : field(j, "synth.anomaly_mix").items()) {
        DefectKind kind;
        try {
            kind = defect_from_string(name);
        } catch (const Error&) {
            throw ConfigInvalid("synth.anomaly_mix: unknown defect kind '" + name + "'");
        }
        if (!share.is_number()) throw ConfigInvalid("synth.anomaly_mix." + name + ": expected a number");
        c.synth.anomaly_mix[kind] = share.get<double>();
    }

    c.vocab_size = get_count(j, "tokenizer.vocab_size");

    c.model.vocab_size = get_count(j, "model.vocab_size");
    c.model.token_embed_dim = get_count(j, "model.token_embed_dim");
    c.model.d = get_count(j, "model.d");
    c.model.n_layers = get_count(j, "model.n_layers");
    c.model.n_heads = get_count(j, "model.n_heads");
    c.model.max_message_len = get_count(j, "model.max_message_len");
    c.model.max_sequence_len = get_count(j, "model.max_sequence_len");
    c.model.feedforward_mult = get_count(j, "model.feedforward_mult");
    c.model.dropout = get_real(j, "model.dropout");

    c.train.tau = get_real(j, "train.tau");
    c.train.mask_ratio = get_real(j, "train.mask_ratio");
    c.train.learning_rate = get_real(j, "train.learning_rate");
    c.train.batch_size = get_count(j, "train.batch_size");
    c.train.beta1 = get_real(j, "train.beta1");
    c.train.beta2 = get_real(j, "train.beta2");
    c.train.weight_decay = get_real(j, "train.weight_decay");
    c.train.adam_eps = get_real(j, "train.adam_eps");
    c.train.grad_clip_norm = get_real(j, "train.grad_clip_norm");
    c.train.max_epochs = get_count(j, "train.max_epochs");
    c.train.patience = get_count(j, "train.patience");
    c.train.min_delta = get_real(j, "train.min_delta");
    c.train.time_budget_s = get_real(j, "train.time_budget_s");

    c.detection.percentile = get_real(j, "detection.percentile");
    c.detection.epsilon = get_real(j, "detection.epsilon");
    c.detection.features = FeatureMask::from_names(get_strings(j, "detection.features"));
    c.detection.n_reference = get_count(j, "detection.n_reference");
    c.detection.cache = get_bool(j, "detection.cache");
    c.detection.cache_capacity = get_count(j, "detection.cache_capacity");

    c.experiments.percentiles = get_reals(j, "experiments.percentiles");
    c.experiments.perturb_kinds.clear();
    for (const auto& k : get_strings(j, "experiments.perturb_kinds"))
        c.experiments.perturb_kinds.push_back(perturb_kind_from_string(k));
    c.experiments.perturb_magnitudes = get_counts(j, "experiments.perturb_magnitudes");
    c.experiments.perturb_message_fraction = get_real(j, "experiments.perturb_message_fraction");
    c.experiments.perturb_sequences = get_count(j, "experiments.perturb_sequences");
    c.experiments.contamination = get_reals(j, "experiments.contamination");
    c.experiments.reference_sizes = get_counts(j, "experiments.reference_sizes");
    c.experiments.length_buckets.clear();
    for (const auto& b : get_array(j, "experiments.length_buckets")) {
        if (!b.is_array() || b.size() != 2)
            throw ConfigInvalid("experiments.length_buckets: expected [lo, hi] pairs");
        c.experiments.length_buckets.push_back(
            {as_count(b[0], "experiments.length_buckets"), as_count(b[1], "experiments.length_buckets")});
    }

    c.validate();
    return c;
}

void RunConfig::validate() const {
    auto wrap = [](auto&& check) {
        try {
            check();
        } catch (const ConfigInvalid&) {
            throw;
        } catch (const Error& e) {
            throw ConfigInvalid(e.what());
        }
    };
    if (work_dir.empty()) throw ConfigInvalid("work_dir: must not be empty");
    if (workers < 1) throw ConfigInvalid("workers: must be >= 1");
    wrap([&] { profile().validate(); });
    double total = 0.0;
    for (double r : dataset.split_ratios) {
        if (r < 0.0) throw ConfigInvalid("dataset.split_ratios: negative ratio");
        total += r;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigInvalid("dataset.split_ratios: must sum to 1");
    wrap([&] { synth.validate(); });
    if (vocab_size > model.vocab_size)
        throw ConfigInvalid("tokenizer.vocab_size (" + std::to_string(vocab_size) + ") exceeds model.vocab_size (" +
                            std::to_string(model.vocab_size) + ")");
    wrap([&] { model.validate(); });
    if (dataset.max_sequence_len > model.max_sequence_len)
        throw ConfigInvalid("dataset.max_sequence_len exceeds model.max_sequence_len");
    wrap([&] { train.validate(); });
    if (!(detection.percentile > 0.0 && detection.percentile < 100.0))
        throw ConfigInvalid("detection.percentile: must lie in (0, 100)");
    if (!(detection.epsilon > 0.0)) throw ConfigInvalid("detection.epsilon: must be positive");
    if (detection.features.empty()) throw ConfigInvalid("detection.features: select at least one feature");
    if (detection.n_reference < 1) throw ConfigInvalid("detection.n_reference: must be >= 1");
    for (double p : experiments.percentiles)
        if (!(p > 0.0 && p <= 100.0)) throw ConfigInvalid("experiments.percentiles: each must lie in (0, 100]");
    if (!(experiments.perturb_message_fraction > 0.0 && experiments.perturb_message_fraction <= 1.0))
        throw ConfigInvalid("experiments.perturb_message_fraction: must lie in (0, 1]");
    for (double f : experiments.contamination)
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigInvalid("experiments.contamination: fractions must lie in [0, 1]");
    for (auto s : experiments.reference_sizes)
        if (s < 1) throw ConfigInvalid("experiments.reference_sizes: sizes must be >= 1");
    for (const auto& b : experiments.length_buckets)
        if (b.lo > b.hi) throw ConfigInvalid("experiments.length_buckets: lo exceeds hi");
}

DatasetProfile RunConfig::profile() const {
    DatasetProfile p;
    try {
        p = DatasetProfile::by_name(dataset.profile);
    } catch (const Error&) {
        throw ConfigInvalid("dataset.profile: unknown profile '" + dataset.profile + "'");
    }
    p.max_sequence_len = dataset.max_sequence_len;
    p.window_seconds = dataset.window_seconds;
    return p;
}

fs::path RunConfig::log_path() const {
    if (!dataset.log_path.empty()) return dataset.log_path;
    if (dataset.profile == "synthetic") return work_dir / "synth" / "synthetic.log";
    throw ConfigInvalid("dataset.log_path: required for profile '" + dataset.profile + "'");
}

fs::path RunConfig::labels_path() const {
    if (!dataset.labels_path.empty()) return dataset.labels_path;
    if (dataset.profile == "synthetic") return work_dir / "synth" / "labels.csv";
    return {};
}

void apply_override(json& tree, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigInvalid("override '" + assignment + "': expected key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    json* cur = &tree;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigInvalid("override '" + assignment + "': empty key segment");
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        json& next = (*cur)[key];
        if (next.is_null()) next = json::object();
        if (!next.is_object()) throw ConfigInvalid("override '" + assignment + "': '" + key + "' is not an object");
        cur = &next;
        start = dot + 1;
    }
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
    json user = json::object();
    if (!path.empty()) {
        if (!fs::exists(path)) throw ConfigInvalid("config file not found: " + path.string());
        user = json::parse(read_file(path), nullptr, false);
        if (user.is_discarded()) throw ConfigInvalid("config file is not valid JSON: " + path.string());
    }
    for (const auto& o : overrides) apply_override(user, o);
    return RunConfig::from_json(user);
}

std::uint64_t stage_seed(const RunConfig& cfg, const std::string& stage) { return derive_seed(cfg.seed, stage); }

// ---- helpers ----

namespace {

void require_file(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw ConfigInvalid("missing " + what + ": " + p.string());
}

} // namespace

std::vector<Sequence> load_dataset(const RunConfig& cfg) {
    const auto path = cfg.artifact("dataset.jsonl");
    require_file(path, "dataset (run prepare)");
    return read_dataset(path);
}

Splits load_splits(const RunConfig& cfg, const std::vector<Sequence>& dataset) {
    const auto path = cfg.artifact("splits.json");
    require_file(path, "split manifest (run prepare)");
    return splits_from_manifest(read_file(path), dataset);
}

Splits load_splits(const RunConfig& cfg) { return load_splits(cfg, load_dataset(cfg)); }

BpeVocab load_vocab(const RunConfig& cfg) {
    const auto path = cfg.artifact("vocab.json");
    require_file(path, "tokenizer (run fit-tokenizer)");
    return BpeVocab::load(path);
}

TrainedModel load_model(const RunConfig& cfg) {
    TrainedModel m;
    m.config = cfg.model;
    m.vocab = load_vocab(cfg);
    const auto ckpt = cfg.artifact("model.ckpt");
    require_file(ckpt, "checkpoint (run train)");
    m.params = load_checkpoint(ckpt, cfg.model);
    return m;
}

ReferenceIndex load_reference(const RunConfig& cfg) {
    const auto path = cfg.artifact("reference.emb");
    require_file(path, "reference index (run calibrate)");
    ReferenceIndex idx;
    idx.vectors = load_embeddings(path);
    if (idx.vectors.cols() != cfg.model.d)
        throw ShapeMismatch("reference index width " + std::to_string(idx.vectors.cols()) + " != model.d " +
                            std::to_string(cfg.model.d));
    return idx;
}

CalibrationStats load_calibration(const RunConfig& cfg) {
    const auto path = cfg.artifact("calibration.json");
    require_file(path, "calibration (run calibrate)");
    return CalibrationStats::load(path);
}

namespace {

std::vector<ScoredSequence> load_scores(const RunConfig& cfg, const std::string& name, const std::string& stage) {
    const auto path = cfg.artifact(name);
    require_file(path, "scores (run " + stage + ")");
    return parse_scores_csv(read_file(path));
}

std::vector<ScoreVector> vectors_of(const std::vector<ScoredSequence>& rows) {
    std::vector<ScoreVector> out;
    for (const auto& r : rows) out.push_back(r.scores);
    return out;
}

std::vector<Label> labels_of(const std::vector<ScoredSequence>& rows) {
    std::vector<Label> out;
    for (const auto& r : rows) out.push_back(r.label);
    return out;
}

std::vector<ScoredSequence> scored(const std::vector<Sequence>& seqs, const std::vector<ScoreVector>& scores) {
    std::vector<ScoredSequence> out;
    for (std::size_t i = 0; i < seqs.size(); ++i) out.push_back({seqs[i].id, seqs[i].label, scores[i]});
    return out;
}

json metric_obj(const MetricRow& r) { return json::parse(metric_json(r)); }

json summary(const std::string& command) { return json{{"command", command}, {"status", "ok"}}; }

void ensure_work_dir(const RunConfig& cfg) { fs::create_directories(cfg.work_dir); }

} // namespace

std::vector<Sequence> test_sequences(const Splits& splits) {
    std::vector<Sequence> out = splits.test_normal;
    out.insert(out.end(), splits.test_abnormal.begin(), splits.test_abnormal.end());
    std::stable_sort(out.begin(), out.end(), [](const Sequence& a, const Sequence& b) { return a.start_ts < b.start_ts; });
    return out;
}

std::vector<Label> labels_of(const std::vector<Sequence>& seqs) {
    std::vector<Label> out;
    for (const auto& s : seqs) out.push_back(s.label);
    return out;
}

BpeVocab fit_tokenizer(const std::vector<Sequence>& train, std::size_t vocab_size, std::uint64_t seed) {
    std::vector<std::string> msgs;
    for (const auto& s : train) msgs.insert(msgs.end(), s.messages.begin(), s.messages.end());
    if (msgs.empty()) throw InsufficientData("training split has no messages");
    return fit_bpe(msgs, vocab_size, seed);
}

TrainHistory train_model(const RunConfig& cfg, const BpeVocab& vocab, const Splits& splits,
                         ParameterStore<float>& params, const std::function<void(const EpochStats&)>& on_epoch) {
    if (splits.train.empty()) throw InsufficientData("training split is empty");
    TrainConfig tc = cfg.train;
    tc.seed = stage_seed(cfg, "train");
    auto messages = [](const std::vector<Sequence>& seqs) {
        std::vector<std::vector<std::string>> out;
        for (const auto& s : seqs) out.push_back(s.messages);
        return out;
    };
    const auto train_data = tokenize_sequences(vocab, messages(splits.train), cfg.model.max_message_len);
    const auto val_data = tokenize_sequences(vocab, messages(splits.validation), cfg.model.max_message_len);
    Encoder<float> enc(cfg.model, params);
    return train(enc, train_data, val_data, tc, on_epoch);
}

DetectionRun run_detection(const RunConfig& cfg, const TrainedModel& model, const Splits& splits,
                           EmbeddingCache* cache) {
    DetectionRun run;
    Scorer scorer(model.config, model.params, model.vocab, cache);
    run.index = build_reference_index(scorer, splits.train, cfg.detection.n_reference, stage_seed(cfg, "reference"));
    run.calibration_scores = score_sequences(scorer, run.index, splits.calibration_reference, cfg.workers);
    run.stats = fit_calibration(run.calibration_scores, cfg.detection.percentile, cfg.detection.epsilon,
                                cfg.detection.features);
    run.test = test_sequences(splits);
    run.test_scores = score_sequences(scorer, run.index, run.test, cfg.workers);
    run.metrics = prf1(labels_of(run.test), predict(run.test_scores, run.stats), run.stats.mask.tag());
    return run;
}

std::vector<Sequence> contaminate(const std::vector<Sequence>& dataset, const SplitRatios& ratios, double fraction,
                                  std::uint64_t seed, std::size_t* flipped) {
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dataset[a].start_ts < dataset[b].start_ts; });
    const auto sizes = split_sizes(dataset.size(), ratios);
    const std::size_t test_begin = sizes[0] + sizes[1];
    const std::size_t test_end = test_begin + sizes[2];

    std::vector<std::size_t> candidates;
    for (std::size_t pos = 0; pos < order.size(); ++pos)
        if ((pos < test_begin || pos >= test_end) && dataset[order[pos]].label == Label::abnormal)
            candidates.push_back(order[pos]);
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(candidates.size())));

    std::vector<Sequence> out = dataset;
    Rng rng(derive_seed(seed, "flip"));
    for (auto i : rng.sample_without_replacement(candidates.size(), k)) out[candidates[i]].label = Label::normal;
    if (flipped) *flipped = k;
    return out;
}

std::vector<MetricRow> reference_size_sweep(const RunConfig& cfg, const TrainedModel& model, const Splits& splits,
                                            const std::vector<std::size_t>& sizes) {
    Scorer scorer(model.config, model.params, model.vocab, nullptr);
    auto embed_all = [&](const std::vector<Sequence>& seqs) {
        std::vector<Matrix<float>> out;
        for (const auto& s : seqs) out.push_back(scorer.embed(s.messages));
        return out;
    };
    const auto test = test_sequences(splits);
    const auto cal_emb = embed_all(splits.calibration_reference);
    const auto test_emb = embed_all(test);
    const auto labels = labels_of(test);
    const FeatureMask point_only = FeatureMask::from_names({"point_max", "point_mean"});

    auto point_vectors = [](const ReferenceIndex& idx, const std::vector<Matrix<float>>& embs) {
        std::vector<ScoreVector> out;
        for (const auto& e : embs) {
            const auto pt = point_scores(idx, e);
            const std::vector<double> zeros(pt.size(), 0.0);
            out.push_back(aggregate_sequence(zeros, pt));
        }
        return out;
    };

    std::vector<MetricRow> rows;
    for (auto size : sizes) {
        const auto idx = build_reference_index(scorer, splits.train, size, stage_seed(cfg, "reference"));
        const auto cal = point_vectors(idx, cal_emb);
        const auto tst = point_vectors(idx, test_emb);
        const auto stats = fit_calibration(cal, cfg.detection.percentile, cfg.detection.epsilon, point_only);
        rows.push_back(prf1(labels, predict(tst, stats), std::to_string(size)));
    }
    return rows;
}

// ---- stages ----

json stage_synth(const RunConfig& cfg) {
    ensure_work_dir(cfg);
    SynthSpec spec = cfg.synth;
    spec.seed = stage_seed(cfg, "synth");
    const auto corpus = generate_corpus(spec);
    const auto dir = cfg.work_dir / "synth";
    fs::create_directories(dir);
    write_synth_corpus(corpus, dir);
    std::map<std::string, std::size_t> defects;
    std::size_t abnormal = 0;
    for (const auto& t : corpus.truth) {
        abnormal += t.label == Label::abnormal;
        if (t.defect != DefectKind::none) ++defects[to_string(t.defect)];
    }
    json s = summary("synth");
    s["sequences"] = corpus.truth.size();
    s["normal"] = corpus.truth.size() - abnormal;
    s["abnormal"] = abnormal;
    s["records"] = corpus.records.size();
    s["defects"] = defects;
    s["outputs"] = {(dir / "synthetic.log").string(), (dir / "labels.csv").string(), (dir / "defects.json").string(),
                    (dir / "dataset.jsonl").string()};
    return s;
}

json stage_prepare(const RunConfig& cfg) {
    ensure_work_dir(cfg);
    const auto profile = cfg.profile();
    const auto log = cfg.log_path();
    require_file(log, "log file");
    SessionLabels labels;
    const SessionLabels* labels_ptr = nullptr;
    if (profile.label_mode == LabelMode::session_label_table) {
        const auto lp = cfg.labels_path();
        if (lp.empty()) throw ConfigInvalid("dataset.labels_path: required for profile '" + profile.name + "'");
        require_file(lp, "label table");
        labels = read_session_labels(lp);
        labels_ptr = &labels;
    }
    const auto parsed = parse_log_file(log, profile, labels_ptr);
    const auto seqs = build_sequences(parsed.records, profile);
    if (seqs.empty()) throw CorpusEmpty("no sequences built from " + log.string());
    const auto splits = chronological_split(seqs, cfg.dataset.split_ratios, stage_seed(cfg, "split"));
    write_dataset(seqs, cfg.artifact("dataset.jsonl"));
    write_file_atomic(cfg.artifact("splits.json"), splits_manifest_json(splits));

    std::size_t abnormal = 0;
    for (const auto& s : seqs) abnormal += s.label == Label::abnormal;
    json s = summary("prepare");
    s["records"] = parsed.records.size();
    s["malformed"] = parsed.malformed;
    s["missing_session"] = parsed.missing_session;
    s["sequences"] = seqs.size();
    s["abnormal"] = abnormal;
    s["splits"] = {{"train", splits.train.size()},
                   {"validation", splits.validation.size()},
                   {"test_normal", splits.test_normal.size()},
                   {"test_abnormal", splits.test_abnormal.size()},
                   {"calibration_reference", splits.calibration_reference.size()}};
    s["outputs"] = {cfg.artifact("dataset.jsonl").string(), cfg.artifact("splits.json").string()};
    return s;
}

json stage_fit_tokenizer(const RunConfig& cfg) {
    const auto splits = load_splits(cfg);
    const auto vocab = fit_tokenizer(splits.train, cfg.vocab_size, stage_seed(cfg, "tokenizer"));
    vocab.save(cfg.artifact("vocab.json"));
    std::vector<std::string> msgs;
    for (const auto& s : splits.train) msgs.insert(msgs.end(), s.messages.begin(), s.messages.end());
    const auto stats = compression_stats(vocab, msgs);
    json s = summary("fit-tokenizer");
    s["merges"] = vocab.merges().size();
    s["vocab_size"] = vocab.vocab_size();
    s["avg_tokens_per_message"] = stats.avg_tokens_per_message;
    s["distinct_tokens_used"] = stats.distinct_tokens_used;
    s["outputs"] = {cfg.artifact("vocab.json").string()};
    return s;
}

json stage_train(const RunConfig& cfg, const std::function<void(const EpochStats&)>& on_epoch) {
    const auto splits = load_splits(cfg);
    const auto vocab = load_vocab(cfg);
    if (vocab.vocab_size() > cfg.model.vocab_size)
        throw ConfigInvalid("tokenizer has " + std::to_string(vocab.vocab_size()) + " ids but model.vocab_size is " +
                            std::to_string(cfg.model.vocab_size));
    auto params = init_parameters(cfg.model, stage_seed(cfg, "init"));
    const auto hist = train_model(cfg, vocab, splits, params, on_epoch);
    save_checkpoint(params, cfg.artifact("model.ckpt"));
    write_file_atomic(cfg.artifact("train_log.csv"), training_log_csv(hist));
    const auto& best = hist.epochs.at(hist.best_epoch == 0 ? hist.epochs.size() - 1 : hist.best_epoch - 1);
    json s = summary("train");
    s["parameters"] = params.parameter_count();
    s["epochs"] = hist.epochs.size();
    s["best_epoch"] = hist.best_epoch;
    s["best_val_loss"] = best.val_loss;
    s["final_train_loss"] = hist.epochs.back().mean_loss;
    s["stopped_early"] = hist.stopped_early;
    s["outputs"] = {cfg.artifact("model.ckpt").string(), cfg.artifact("train_log.csv").string()};
    return s;
}

json stage_calibrate(const RunConfig& cfg) {
    const auto splits = load_splits(cfg);
    const auto model = load_model(cfg);
    EmbeddingCache cache(cfg.detection.cache_capacity);
    Scorer scorer(model.config, model.params, model.vocab, cfg.detection.cache ? &cache : nullptr);
    const auto index =
        build_reference_index(scorer, splits.train, cfg.detection.n_reference, stage_seed(cfg, "reference"));
    save_embeddings(index.vectors, cfg.artifact("reference.emb"));
    const auto cal = score_sequences(scorer, index, splits.calibration_reference, cfg.workers);
    write_file_atomic(cfg.artifact("calibration_scores.csv"), scores_csv(scored(splits.calibration_reference, cal)));
    const auto stats = fit_calibration(cal, cfg.detection.percentile, cfg.detection.epsilon, cfg.detection.features);
    stats.save(cfg.artifact("calibration.json"));
    json s = summary("calibrate");
    s["reference_sequences"] = index.source_count;
    s["index_size"] = index.size();
    s["m"] = stats.m;
    s["threshold"] = stats.threshold;
    s["features"] = stats.mask.names();
    s["outputs"] = {cfg.artifact("reference.emb").string(), cfg.artifact("calibration_scores.csv").string(),
                    cfg.artifact("calibration.json").string()};
    return s;
}

json stage_score(const RunConfig& cfg) {
    const auto splits = load_splits(cfg);
    const auto model = load_model(cfg);
    const auto index = load_reference(cfg);
    EmbeddingCache cache(cfg.detection.cache_capacity);
    Scorer scorer(model.config, model.params, model.vocab, cfg.detection.cache ? &cache : nullptr);
    const auto test = test_sequences(splits);
    const auto scores = score_sequences(scorer, index, test, cfg.workers);
    write_file_atomic(cfg.artifact("test_scores.csv"), scores_csv(scored(test, scores)));
    json s = summary("score");
    s["sequences"] = test.size();
    s["messages_encoded"] = scorer.messages_encoded();
    if (cfg.detection.cache) s["cache_hit_rate"] = cache.counters().hit_rate();
    s["outputs"] = {cfg.artifact("test_scores.csv").string()};
    return s;
}

json stage_evaluate(const RunConfig& cfg) {
    const auto stats = load_calibration(cfg);
    const auto rows = load_scores(cfg, "test_scores.csv", "score");
    const auto dataset = load_dataset(cfg);
    std::map<std::string, std::size_t> length;
    for (const auto& s : dataset) length[s.id] = s.messages.size();
    std::vector<std::size_t> lengths;
    for (const auto& r : rows) {
        auto it = length.find(r.id);
        if (it == length.end()) throw ConfigInvalid("scored sequence '" + r.id + "' is not in the dataset");
        lengths.push_back(it->second);
    }
    const auto labels = labels_of(rows);
    const auto scores = vectors_of(rows);
    const auto preds = predict(scores, stats);
    const auto overall = prf1(labels, preds, stats.mask.tag());
    const auto buckets = f1_by_length_bucket(labels, preds, lengths, cfg.experiments.length_buckets);
    std::vector<double> anomaly;
    for (const auto& y : scores) anomaly.push_back(anomaly_score(y, stats));
    const auto roc = roc_curve(anomaly, labels);

    json metrics = {{"overall", metric_obj(overall)}, {"threshold", stats.threshold}, {"percentile", stats.percentile}};
    metrics["length_buckets"] = json::array();
    for (const auto& b : buckets) metrics["length_buckets"].push_back(metric_obj(b));
    write_file_atomic(cfg.artifact("metrics.json"), metrics.dump(2) + "\n");
    write_file_atomic(cfg.artifact("length_buckets.csv"), metrics_csv(buckets));
    write_file_atomic(cfg.artifact("roc.csv"), roc_csv(roc));
    json s = summary("evaluate");
    s["precision"] = overall.precision;
    s["recall"] = overall.recall;
    s["f1"] = overall.f1;
    s["tp"] = overall.tp;
    s["fp"] = overall.fp;
    s["fn"] = overall.fn;
    s["tn"] = overall.tn;
    s["outputs"] = {cfg.artifact("metrics.json").string(), cfg.artifact("length_buckets.csv").string(),
                    cfg.artifact("roc.csv").string()};
    return s;
}

json stage_ablate(const RunConfig& cfg) {
    const auto stats = load_calibration(cfg);
    const auto cal = vectors_of(load_scores(cfg, "calibration_scores.csv", "calibrate"));
    const auto rows = load_scores(cfg, "test_scores.csv", "score");
    const auto grid = ablation_grid(stats, cal, vectors_of(rows), labels_of(rows));
    write_file_atomic(cfg.artifact("ablation.csv"), metrics_csv(grid));
    const auto best = std::max_element(grid.begin(), grid.end(), [](auto& a, auto& b) { return a.f1 < b.f1; });
    json s = summary("ablate");
    s["rows"] = grid.size();
    s["full_f1"] = grid.back().f1;
    s["best"] = {{"features", best->tag}, {"f1", best->f1}};
    s["outputs"] = {cfg.artifact("ablation.csv").string()};
    return s;
}

json stage_sweep_threshold(const RunConfig& cfg) {
    const auto stats = load_calibration(cfg);
    const auto cal = vectors_of(load_scores(cfg, "calibration_scores.csv", "calibrate"));
    const auto rows = load_scores(cfg, "test_scores.csv", "score");
    const auto sweep = threshold_sweep(stats, cal, vectors_of(rows), labels_of(rows), cfg.experiments.percentiles);
    std::string csv = "percentile,threshold,precision,recall,f1,tp,fp,fn,tn\n";
    for (std::size_t i = 0; i < sweep.rows.size(); ++i) {
        const auto& r = sweep.rows[i];
        csv += format_real(cfg.experiments.percentiles[i]) + "," + format_real(sweep.thresholds[i]) + "," +
               format_real(r.precision) + "," + format_real(r.recall) + "," + format_real(r.f1) + "," +
               std::to_string(r.tp) + "," + std::to_string(r.fp) + "," + std::to_string(r.fn) + "," +
               std::to_string(r.tn) + "\n";
    }
    write_file_atomic(cfg.artifact("thresholds.csv"), csv);
    write_file_atomic(cfg.artifact("roc.csv"), roc_csv(sweep.roc));
    json s = summary("sweep-threshold");
    s["rows"] = sweep.rows.size();
    s["roc_points"] = sweep.roc.size();
    s["outputs"] = {cfg.artifact("thresholds.csv").string(), cfg.artifact("roc.csv").string()};
    return s;
}

json stage_perturb(const RunConfig& cfg) {
    const auto splits = load_splits(cfg);
    const auto model = load_model(cfg);
    const auto index = load_reference(cfg);
    const auto stats = load_calibration(cfg);
    EmbeddingCache cache(cfg.detection.cache_capacity);
    Scorer scorer(model.config, model.params, model.vocab, cfg.detection.cache ? &cache : nullptr);

    const auto seed = stage_seed(cfg, "perturb");
    const auto normals = test_slice_normals(load_dataset(cfg), cfg.dataset.split_ratios);
    const std::size_t n = std::min(cfg.experiments.perturb_sequences, normals.size());
    if (n == 0) throw InsufficientData("no normal test sequences to perturb");
    Rng pick_rng(derive_seed(seed, "pick"));
    auto picks = pick_rng.sample_without_replacement(normals.size(), n);
    std::sort(picks.begin(), picks.end());

    const auto test = test_sequences(splits);
    std::vector<std::string> message_pool;
    for (const auto& s : test) message_pool.insert(message_pool.end(), s.messages.begin(), s.messages.end());
    const auto word_pool = WordPool::from_sequences(test);
    const PerturbSources sources{&message_pool, &word_pool};

    std::string csv = "kind,magnitude,sequences,mean_score,abnormal_fraction\n";
    std::size_t rows = 0;
    for (auto kind : cfg.experiments.perturb_kinds) {
        for (auto mag : cfg.experiments.perturb_magnitudes) {
            std::vector<Sequence> perturbed;
            for (auto i : picks) {
                Perturbation p{kind, mag, cfg.experiments.perturb_message_fraction, derive_seed(seed, normals[i].id)};
                auto q = perturb_sequence(normals[i], p, sources);
                if (q.messages.size() > cfg.model.max_sequence_len) q.messages.resize(cfg.model.max_sequence_len);
                perturbed.push_back(std::move(q));
            }
            const auto scores = score_sequences(scorer, index, perturbed, cfg.workers);
            double total = 0.0;
            std::size_t flagged = 0;
            for (const auto& y : scores) {
                const double a = anomaly_score(y, stats);
                total += a;
                flagged += classify(a, stats) == Label::abnormal;
            }
            csv += std::string(to_string(kind)) + "," + std::to_string(mag) + "," + std::to_string(n) + "," +
                   format_real(total / static_cast<double>(n)) + "," +
                   format_real(static_cast<double>(flagged) / static_cast<double>(n)) + "\n";
            ++rows;
        }
    }
    write_file_atomic(cfg.artifact("perturb.csv"), csv);
    json s = summary("perturb");
    s["rows"] = rows;
    s["sequences"] = n;
    s["outputs"] = {cfg.artifact("perturb.csv").string()};
    return s;
}

json stage_contaminate(const RunConfig& cfg) {
    const auto dataset = load_dataset(cfg);
    std::string csv = "fraction,flipped,precision,recall,f1,tp,fp,fn,tn\n";
    json results = json::array();
    for (double fraction : cfg.experiments.contamination) {
        std::size_t flipped = 0;
        const auto data =
            contaminate(dataset, cfg.dataset.split_ratios, fraction, stage_seed(cfg, "contaminate"), &flipped);
        const auto splits = chronological_split(data, cfg.dataset.split_ratios, stage_seed(cfg, "split"));
        TrainedModel model;
        model.config = cfg.model;
        model.vocab = fit_tokenizer(splits.train, cfg.vocab_size, stage_seed(cfg, "tokenizer"));
        model.params = init_parameters(cfg.model, stage_seed(cfg, "init"));
        train_model(cfg, model.vocab, splits, model.params);
        EmbeddingCache cache(cfg.detection.cache_capacity);
        const auto run = run_detection(cfg, model, splits, cfg.detection.cache ? &cache : nullptr);
        const auto& r = run.metrics;
        csv += format_real(fraction) + "," + std::to_string(flipped) + "," + format_real(r.precision) + "," +
               format_real(r.recall) + "," + format_real(r.f1) + "," + std::to_string(r.tp) + "," +
               std::to_string(r.fp) + "," + std::to_string(r.fn) + "," + std::to_string(r.tn) + "\n";
        results.push_back({{"fraction", fraction}, {"flipped", flipped}, {"f1", r.f1}});
    }
    write_file_atomic(cfg.artifact("contamination.csv"), csv);
    json s = summary("contaminate");
    s["runs"] = results;
    s["outputs"] = {cfg.artifact("contamination.csv").string()};
    return s;
}

json stage_sweep_reference(const RunConfig& cfg) {
    const auto splits = load_splits(cfg);
    const auto model = load_model(cfg);
    const auto rows = reference_size_sweep(cfg, model, splits, cfg.experiments.reference_sizes);
    write_file_atomic(cfg.artifact("reference_sweep.csv"), metrics_csv(rows));
    json s = summary("sweep-reference");
    json f1 = json::object();
    for (const auto& r : rows) f1[r.tag] = r.f1;
    s["f1_by_size"] = f1;
    s["outputs"] = {cfg.artifact("reference_sweep.csv").string()};
    return s;
}

json stage_cache_stats(const RunConfig& cfg) {
    const auto splits = load_splits(cfg);
    const auto model = load_model(cfg);
    const auto index = load_reference(cfg);
    EmbeddingCache cache(cfg.detection.cache_capacity);
    Scorer scorer(model.config, model.params, model.vocab, &cache);
    const auto test = test_sequences(splits);
    score_sequences(scorer, index, test, cfg.workers);
    std::size_t messages = 0;
    for (const auto& s : test) messages += s.messages.size();
    const auto c = cache.counters();
    json stats = {{"hits", c.hits},
                  {"misses", c.misses},
                  {"evictions", c.evictions},
                  {"hit_rate", c.hit_rate()},
                  {"entries", cache.size()},
                  {"capacity", cfg.detection.cache_capacity},
                  {"messages", messages},
                  {"messages_encoded", scorer.messages_encoded()}};
    write_file_atomic(cfg.artifact("cache_stats.json"), stats.dump(2) + "\n");
    json s = summary("cache-stats");
    s.update(stats);
    s["outputs"] = {cfg.artifact("cache_stats.json").string()};
    return s;
}

} // namespace ctxlog
