#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ctxlog/corpus.hpp"
#include "ctxlog/detection.hpp"
#include "ctxlog/rng.hpp"
#include "ctxlog/scoring.hpp"

namespace ctxlog {

struct MetricRow {
    std::string tag;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Abnormal is the positive class. Throws LengthMismatch.
MetricRow prf1(std::span<const Label> labels, std::span<const Label> predictions, std::string tag = {});

std::vector<Label> predict(const std::vector<ScoreVector>& scores, const CalibrationStats& stats);

// One row per non-empty feature subset in all_feature_subsets() order, each
// with its threshold refitted on the calibration scores.
std::vector<MetricRow> ablation_grid(const CalibrationStats& base, const std::vector<ScoreVector>& calibration,
                                     const std::vector<ScoreVector>& test, std::span<const Label> labels);

struct RocPoint {
    double threshold = 0.0;  // predictions are score > threshold
    double fpr = 0.0;
    double tpr = 0.0;
};

// From (0,0) at the largest score to (1,1) at threshold -inf. Needs both
// classes present; otherwise the missing rate is reported as 0.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const Label> labels);

struct ThresholdSweep {
    std::vector<MetricRow> rows;
    std::vector<double> thresholds;  // parallel to rows
    std::vector<RocPoint> roc;
};

// Rows are tagged "p<percentile>"; uses base.mask.
ThresholdSweep threshold_sweep(const CalibrationStats& base, const std::vector<ScoreVector>& calibration,
                               const std::vector<ScoreVector>& test, std::span<const Label> labels,
                               std::span<const double> percentiles);

enum class PerturbKind {
    msg_move,
    msg_delete,
    msg_duplicate,
    msg_duplicate_adjacent,
    msg_insert,
    word_delete,
    word_add_random,
    word_add_corpus,
    word_move,
    word_duplicate,
};

const char* to_string(PerturbKind k);
PerturbKind perturb_kind_from_string(const std::string& s);
std::vector<PerturbKind> all_perturb_kinds();
bool is_word_level(PerturbKind k);

struct Perturbation {
    PerturbKind kind = PerturbKind::msg_move;
    std::size_t magnitude = 0;
    double message_fraction = 0.1;  // word-level kinds: share of messages edited, at least one
    std::uint64_t seed = 0;
};

// Words of a corpus with their frequencies, for frequency-proportional draws.
class WordPool {
public:
    WordPool() = default;
    static WordPool from_sequences(const std::vector<Sequence>& sequences);

    bool empty() const noexcept { return words_.empty(); }
    std::size_t size() const noexcept { return words_.size(); }
    const std::string& draw(Rng& rng) const;

private:
    std::vector<std::string> words_;
    std::vector<std::uint64_t> cumulative_;
};

// Maximal non-whitespace runs.
std::vector<std::string> split_words(const std::string& message);

struct PerturbSources {
    const std::vector<std::string>* messages = nullptr;  // msg_insert pool
    const WordPool* corpus_words = nullptr;                // word_add_corpus pool
};

// Magnitude 0 returns the input unchanged. Throws InvalidMagnitude, and
// InsufficientData when a required pool is missing or empty.
Sequence perturb_sequence(const Sequence& seq, const Perturbation& p, const PerturbSources& sources = {});

struct LengthBucket {
    std::size_t lo = 1;
    std::size_t hi = std::numeric_limits<std::size_t>::max();  // inclusive
};

// Rows tagged "lo-hi"; buckets with no sequences are omitted.
std::vector<MetricRow> f1_by_length_bucket(std::span<const Label> labels, std::span<const Label> predictions,
                                           std::span<const std::size_t> lengths,
                                           const std::vector<LengthBucket>& buckets);

// tag,precision,recall,f1,tp,fp,fn,tn
std::string metrics_csv(const std::vector<MetricRow>& rows);
// threshold,fpr,tpr
std::string roc_csv(const std::vector<RocPoint>& roc);
std::string metric_json(const MetricRow& row);

} // namespace ctxlog
