#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ctxlog/autograd.hpp"
#include "ctxlog/model.hpp"
#include "ctxlog/rng.hpp"
#include "ctxlog/tokenizer.hpp"

namespace ctxlog {

struct TrainConfig {
    double tau = 0.25;
    double mask_ratio = 0.15;
    double learning_rate = 1e-4;
    std::size_t batch_size = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 0.01;
    double adam_eps = 1e-8;
    double grad_clip_norm = 1.0;
    std::size_t max_epochs = 20;
    std::size_t patience = 5;      // epochs without validation improvement before stopping
    double min_delta = 1e-4;       // required validation-loss improvement
    double time_budget_s = 0.0;    // 0 = unlimited; checked between epochs
    std::uint64_t seed = 0;

    // Throws ConfigInvalid.
    void validate() const;
};

// Masked (sequence-in-batch, position) pairs.
struct MaskBatch {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::size_t size() const noexcept { return pairs.size(); }
};

// max(1, round(ratio * n)), capped at n.
std::size_t mask_count(std::size_t n, double mask_ratio);

// Per sequence, mask_count(n) distinct positions sampled uniformly without
// replacement, returned in ascending position order.
MaskBatch sample_masks(std::span<const std::size_t> lengths, double mask_ratio, Rng& rng);

// K[j][i] = cos(e_hat_j, e_i) / tau
template <typename T>
Matrix<T> similarity_matrix(const Matrix<T>& e_hat, const Matrix<T>& e, T tau);

// -1/M sum_j log softmax(K[j,:])[j]
template <typename T>
T row_cross_entropy(const Matrix<T>& k);

// -1/M sum_i log softmax(K[:,i])[i], evaluated column-wise without forming K^T.
template <typename T>
T col_cross_entropy(const Matrix<T>& k);

// 0.5 * (row + col). Optionally writes gradients w.r.t. the raw (not yet
// normalised) inputs. Throws DegenerateBatch for an empty batch.
template <typename T>
T symmetric_info_nce(const Matrix<T>& e_hat, const Matrix<T>& e, T tau, Matrix<T>* d_e_hat = nullptr,
                     Matrix<T>* d_e = nullptr);

// Tape node for the same loss (1x1 output).
template <typename T>
Var info_nce(Tape<T>& tape, Var e_hat, Var e, T tau);

// Global L2 norm of all gradients; scales them down to `max_norm` when
// larger. Returns the pre-clip norm.
template <typename T>
double clip_grad_norm(ParameterStore<T>& params, double max_norm);

template <typename T>
double grad_norm(const ParameterStore<T>& params);

// Decoupled weight decay (AdamW).
class AdamW {
public:
    explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}
    void step(ParameterStore<float>& params);
    std::size_t steps() const noexcept { return t_; }

private:
    TrainConfig cfg_;
    std::vector<std::vector<float>> m_, v_;
    std::size_t t_ = 0;
};

using TokenSequence = std::vector<std::vector<TokenId>>;

// Tokenizes every message of every sequence.
std::vector<TokenSequence> tokenize_sequences(const BpeVocab& vocab, const std::vector<std::vector<std::string>>& seqs,
                                              std::size_t max_message_len);

struct BatchResult {
    double loss = 0.0;
    std::size_t masked = 0;
    std::size_t duplicate_pairs = 0;  // identical masked messages in one batch (false negatives)
};

// Forward (and optionally backward) of one minibatch. Gradients are
// accumulated into the encoder's parameter store.
BatchResult run_batch(Encoder<float>& enc, const std::vector<const TokenSequence*>& batch, const TrainConfig& cfg,
                      Rng& mask_rng, bool train);

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double val_loss = 0.0;
    double grad_norm_p50 = 0.0;
    double grad_norm_max = 0.0;
    double clipped_norm_max = 0.0;  // global grad norm after clipping
    std::size_t steps = 0;
    std::size_t duplicate_pairs = 0;
    double duration_s = 0.0;
};

// One pass over `data` in seeded-shuffled minibatches. Throws NonFiniteLoss.
EpochStats train_epoch(Encoder<float>& enc, AdamW& opt, const std::vector<TokenSequence>& data,
                       const TrainConfig& cfg, std::size_t epoch);

// Mean loss with masks drawn from a fixed seed, no parameter update.
double evaluate_loss(Encoder<float>& enc, const std::vector<TokenSequence>& data, const TrainConfig& cfg);

struct TrainHistory {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
};

// Epoch loop with early stopping on validation loss; keeps the parameters
// from the best validation epoch.
TrainHistory train(Encoder<float>& enc, const std::vector<TokenSequence>& train_data,
                   const std::vector<TokenSequence>& val_data, const TrainConfig& cfg,
                   const std::function<void(const EpochStats&)>& on_epoch = {});

// epoch,mean_loss,val_loss,grad_norm_p50,duration_s
std::string training_log_csv(const TrainHistory& history);

} // namespace ctxlog
