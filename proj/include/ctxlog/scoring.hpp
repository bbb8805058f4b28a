#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxlog/corpus.hpp"
#include "ctxlog/matrix.hpp"
#include "ctxlog/model.hpp"
#include "ctxlog/tokenizer.hpp"

namespace ctxlog {

inline constexpr std::array<std::string_view, 4> kFeatureNames{"point_max", "point_mean", "context_max",
                                                                 "context_mean"};

struct ScoreVector {
    double point_max = 0.0;
    double point_mean = 0.0;
    double context_max = 0.0;
    double context_mean = 0.0;

    // Feature order of kFeatureNames.
    std::array<double, 4> values() const { return {point_max, point_mean, context_max, context_mean}; }
    bool operator==(const ScoreVector&) const = default;
};

struct CacheCounters {
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t evictions = 0;

    double hit_rate() const {
        const auto total = hits + misses;
        return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
    }
};

// Message text -> embedding, least-recently-used eviction. Capacity 0 means
// unbounded. All members are safe to call concurrently; two threads missing
// on the same text may both compute it, and the first insert wins.
class EmbeddingCache {
public:
    using Value = std::shared_ptr<const std::vector<float>>;

    explicit EmbeddingCache(std::size_t capacity = 0) : capacity_(capacity) {}

    std::size_t capacity() const noexcept { return capacity_; }

    // Counts a hit or a miss.
    Value lookup(const std::string& text);
    // Stores without touching hit/miss counters; returns the stored value,
    // which is the existing one if the key raced in first.
    Value insert(const std::string& text, std::vector<float> value);
    std::vector<float> get_or_compute(const std::string& text, const std::function<std::vector<float>()>& compute);

    void note_hit();

    CacheCounters counters() const;
    std::size_t size() const;
    void clear();

private:
    struct Slot {
        Value value;
        std::list<std::string>::iterator pos;
    };
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::list<std::string> order_;  // front = most recent
    std::unordered_map<std::string, Slot> map_;
    CacheCounters counters_;
};

// Embeds messages and runs the sequence predictor with frozen parameters.
// Reads the parameter store only; safe to share across threads.
class Scorer {
public:
    Scorer(const ModelConfig& cfg, const ParameterStore<float>& params, const BpeVocab& vocab,
           EmbeddingCache* cache = nullptr);

    const ModelConfig& config() const noexcept { return cfg_; }
    EmbeddingCache* cache() const noexcept { return cache_; }

    // n x d unit-norm message embeddings.
    Matrix<float> embed(std::span<const std::string> messages) const;
    // Leave-one-out predictions: row j is the prediction for position j
    // with only j masked.
    Matrix<float> predict_each(const Matrix<float>& embeddings) const;

    // MessageEncoder rows evaluated so far (cache misses only when caching).
    std::uint64_t messages_encoded() const noexcept { return encoded_.load(); }

private:
    Matrix<float> encode_batch(std::span<const std::string* const> texts) const;

    ModelConfig cfg_;
    const ParameterStore<float>& params_;
    const BpeVocab& vocab_;
    EmbeddingCache* cache_;
    mutable std::atomic<std::uint64_t> encoded_{0};
};

// cos(a, b) in double precision, clamped to [-1, 1].
double cosine(std::span<const float> a, std::span<const float> b);

// 1 - cos(prediction_j, E_j) for every position.
std::vector<double> context_scores(const Scorer& scorer, const Matrix<float>& embeddings);

struct ReferenceIndex {
    Matrix<float> vectors;  // unique rows
    std::size_t source_count = 0;

    std::size_t size() const noexcept { return vectors.rows(); }
};

// Orders candidate sequences by a seeded permutation and takes the first
// `n_reference`, so smaller sizes under one seed are subsets of larger ones.
std::vector<std::size_t> reference_sample(std::size_t available, std::size_t n_reference, std::uint64_t seed);

// Throws EmptyReference when nothing is sampled, InsufficientData when
// n_reference exceeds the available sequences.
ReferenceIndex build_reference_index(const Scorer& scorer, const std::vector<Sequence>& train,
                                     std::size_t n_reference, std::uint64_t seed);
// Index from explicit rows; exact duplicates dropped, first occurrence kept.
ReferenceIndex make_reference_index(const Matrix<float>& rows, std::size_t source_count);

// 1 - max cosine against the index, exhaustive scan. Throws EmptyReference.
std::vector<double> point_scores(const ReferenceIndex& index, const Matrix<float>& embeddings);

// Throws LengthMismatch for unequal or empty inputs.
ScoreVector aggregate_sequence(std::span<const double> ctx, std::span<const double> pt);

struct SequenceScores {
    std::vector<double> context;
    std::vector<double> point;
    ScoreVector features;
};

SequenceScores score_sequence(const Scorer& scorer, const ReferenceIndex& index,
                              const std::vector<std::string>& messages);

// One ScoreVector per sequence, in input order. `workers` threads share the
// scorer; results do not depend on the worker count.
std::vector<ScoreVector> score_sequences(const Scorer& scorer, const ReferenceIndex& index,
                                         const std::vector<Sequence>& sequences, std::size_t workers = 1);

struct ScoredSequence {
    std::string id;
    Label label = Label::normal;
    ScoreVector scores;
};

// sequence_id,label,point_max,point_mean,context_max,context_mean
std::string scores_csv(const std::vector<ScoredSequence>& rows);
std::vector<ScoredSequence> parse_scores_csv(const std::string& text);

} // namespace ctxlog
