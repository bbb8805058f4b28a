#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxlog/autograd.hpp"
#include "ctxlog/matrix.hpp"
#include "ctxlog/rng.hpp"

namespace ctxlog {

struct ModelConfig {
    std::size_t vocab_size = 512;      // total token ids, including byte base and pad
    std::size_t token_embed_dim = 32;  // width of the message transformer
    std::size_t d = 32;                // message embedding size; width of the sequence transformer
    std::size_t n_layers = 2;          // per encoder
    std::size_t n_heads = 2;           // per encoder
    std::size_t max_message_len = 64;
    std::size_t max_sequence_len = 256;
    std::size_t feedforward_mult = 4;
    double dropout = 0.0;

    // Throws ShapeMismatch on inconsistent dimensions.
    void validate() const;
};

struct NamedTensor {
    std::string name;
    std::size_t rank = 2;  // 1 for vectors stored as 1xN
    Matrix<float> value;
};

// Named parameter tensors plus gradient buffers of the same shapes.
template <typename T>
class ParameterStore {
public:
    struct Entry {
        std::string name;
        std::size_t rank = 2;
        Matrix<T> value;
        Matrix<T> grad;
    };

    std::size_t add(std::string name, std::size_t rank, Matrix<T> value);
    std::size_t index(const std::string& name) const;
    bool contains(const std::string& name) const { return by_name_.count(name) != 0; }

    Entry& at(std::size_t i) { return entries_[i]; }
    const Entry& at(std::size_t i) const { return entries_[i]; }
    Matrix<T>& value(const std::string& name) { return entries_[index(name)].value; }
    const Matrix<T>& value(const std::string& name) const { return entries_[index(name)].value; }

    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t parameter_count() const;
    void zero_grad();
    bool all_finite() const;

    template <typename U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& e : entries_) out.add(e.name, e.rank, e.value.template cast<U>());
        return out;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> by_name_;
};

// Builds a store with every tensor the model needs, seeded-normal(0, 0.02)
// for weights and embeddings, zeros for biases, ones for layer-norm gains.
ParameterStore<float> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

// Fixed sinusoidal positional table, rows x width.
template <typename T>
Matrix<T> sinusoidal_positions(std::size_t rows, std::size_t width);

// Flattened token ids of several messages.
struct TokenBatch {
    std::vector<std::int32_t> ids;
    std::vector<std::size_t> positions;  // position of each token inside its message
    Segments messages;

    void append(std::span<const std::int32_t> message_ids);
    std::size_t message_count() const noexcept { return messages.count(); }
};

// Hierarchical encoder over a parameter store. Holds a reference to the
// store; the store must outlive it.
template <typename T>
class Encoder {
public:
    Encoder(const ModelConfig& cfg, ParameterStore<T>& params);

    const ModelConfig& config() const noexcept { return cfg_; }
    ParameterStore<T>& params() noexcept { return params_; }

    // Binds every parameter onto `tape`. With `trainable` false no gradient
    // is accumulated.
    void bind(Tape<T>& tape, bool trainable);

    // MessageEncoder: tokens -> one unit-norm row per message (N x d).
    Var embed_messages(Tape<T>& tape, const TokenBatch& batch, Rng* dropout_rng = nullptr);

    // SequenceEncoder: rows of `embeddings` grouped by `sequences`; rows listed
    // in `masked_rows` (global indices) are replaced by the mask vector.
    // Returns unit-norm predictions for the masked rows, in the given order.
    Var predict_masked(Tape<T>& tape, Var embeddings, const Segments& sequences,
                       std::span<const std::size_t> masked_rows, Rng* dropout_rng = nullptr);

    // Count of MessageEncoder rows produced since construction.
    std::size_t messages_encoded() const noexcept { return messages_encoded_; }

private:
    Var param(const std::string& name) const;
    Var block(Tape<T>& tape, Var x, const std::string& prefix, const Segments& segs, Rng* rng);

    ModelConfig cfg_;
    ParameterStore<T>& params_;
    std::vector<Var> bound_;
    Matrix<T> seq_positions_;
    std::size_t messages_encoded_ = 0;
};

// Convenience inference entry points (no gradient).
std::vector<float> embed_message(const ModelConfig& cfg, ParameterStore<float>& params,
                                 std::span<const std::int32_t> ids);

std::map<std::size_t, std::vector<float>> predict_masked(
    const ModelConfig& cfg, ParameterStore<float>& params,
    const std::vector<std::vector<float>>& embeddings, const std::vector<std::size_t>& mask_positions);

} // namespace ctxlog
