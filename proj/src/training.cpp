#include "ctxlog/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "ctxlog/errors.hpp"
#include "ctxlog/io.hpp"

namespace ctxlog {

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigInvalid("train config: " + m); };
    if (!(tau > 0.0)) fail("tau must be > 0");
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in (0,1)");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (batch_size == 0) fail("batch_size must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0,1)");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(grad_clip_norm > 0.0)) fail("grad_clip_norm must be > 0");
    if (max_epochs == 0) fail("max_epochs must be positive");
}

std::size_t mask_count(std::size_t n, double mask_ratio) {
    const auto k = static_cast<std::size_t>(std::llround(mask_ratio * static_cast<double>(n)));
    return std::min(n, std::max<std::size_t>(1, k));
}

MaskBatch sample_masks(std::span<const std::size_t> lengths, double mask_ratio, Rng& rng) {
    MaskBatch mb;
    for (std::size_t s = 0; s < lengths.size(); ++s) {
        if (lengths[s] == 0) throw DegenerateBatch("sequence of length 0 in mask sampling");
        auto pos = rng.sample_without_replacement(lengths[s], mask_count(lengths[s], mask_ratio));
        std::sort(pos.begin(), pos.end());
        for (auto p : pos) mb.pairs.emplace_back(s, p);
    }
    return mb;
}

namespace {

template <typename T>
Matrix<T> normalized_rows(const Matrix<T>& x, std::vector<T>* norms) {
    Matrix<T> out(x.rows(), x.cols());
    if (norms) norms->resize(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        T ss{0};
        for (T v : x.row(i)) ss += v * v;
        const T n = std::max(std::sqrt(ss), T(1e-12));
        if (norms) (*norms)[i] = n;
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / n;
    }
    return out;
}

} // namespace

template <typename T>
Matrix<T> similarity_matrix(const Matrix<T>& e_hat, const Matrix<T>& e, T tau) {
    if (e_hat.rows() != e.rows() || e_hat.cols() != e.cols()) throw ShapeMismatch("similarity: operand shapes differ");
    const auto u = normalized_rows<T>(e_hat, nullptr);
    const auto v = normalized_rows<T>(e, nullptr);
    const std::size_t m = u.rows();
    Matrix<T> k(m, m);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < m; ++i) k(j, i) = dot<T>(u.row(j), v.row(i)) / tau;
    return k;
}

template <typename T>
T row_cross_entropy(const Matrix<T>& k) {
    const std::size_t m = k.rows();
    if (m == 0 || k.cols() != m) throw DegenerateBatch("row_cross_entropy needs a non-empty square matrix");
    T total{0};
    for (std::size_t j = 0; j < m; ++j) {
        T mx = k(j, 0);
        for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, k(j, c));
        T s{0};
        for (std::size_t c = 0; c < m; ++c) s += std::exp(k(j, c) - mx);
        total += (std::log(s) + mx) - k(j, j);
    }
    return total / static_cast<T>(m);
}

template <typename T>
T col_cross_entropy(const Matrix<T>& k) {
    const std::size_t m = k.rows();
    if (m == 0 || k.cols() != m) throw DegenerateBatch("col_cross_entropy needs a non-empty square matrix");
    T total{0};
    for (std::size_t i = 0; i < m; ++i) {
        T mx = k(0, i);
        for (std::size_t r = 1; r < m; ++r) mx = std::max(mx, k(r, i));
        T s{0};
        for (std::size_t r = 0; r < m; ++r) s += std::exp(k(r, i) - mx);
        total += (std::log(s) + mx) - k(i, i);
    }
    return total / static_cast<T>(m);
}

template <typename T>
T symmetric_info_nce(const Matrix<T>& e_hat, const Matrix<T>& e, T tau, Matrix<T>* d_e_hat, Matrix<T>* d_e) {
    if (e_hat.rows() == 0) throw DegenerateBatch("symmetric_info_nce: |M| = 0");
    if (e_hat.rows() != e.rows() || e_hat.cols() != e.cols()) throw ShapeMismatch("symmetric_info_nce: shapes differ");
    if (!(tau > T{0})) throw DegenerateBatch("symmetric_info_nce: tau must be positive");
    std::vector<T> nu, nv;
    const auto u = normalized_rows(e_hat, &nu);
    const auto v = normalized_rows(e, &nv);
    const std::size_t m = u.rows(), d = u.cols();
    Matrix<T> k(m, m);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < m; ++i) k(j, i) = dot<T>(u.row(j), v.row(i)) / tau;
    const T loss = T(0.5) * (row_cross_entropy(k) + col_cross_entropy(k));
    if (!d_e_hat && !d_e) return loss;

    // dL/dK = (softmax_rows(K) - I + softmax_cols(K) - I) / (2M)
    Matrix<T> g(m, m);
    const T scale = T{1} / (T{2} * static_cast<T>(m));
    for (std::size_t j = 0; j < m; ++j) {
        T mx = k(j, 0);
        for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, k(j, c));
        T s{0};
        for (std::size_t c = 0; c < m; ++c) s += std::exp(k(j, c) - mx);
        for (std::size_t c = 0; c < m; ++c) g(j, c) += (std::exp(k(j, c) - mx) / s - (j == c ? T{1} : T{0})) * scale;
    }
    for (std::size_t i = 0; i < m; ++i) {
        T mx = k(0, i);
        for (std::size_t r = 1; r < m; ++r) mx = std::max(mx, k(r, i));
        T s{0};
        for (std::size_t r = 0; r < m; ++r) s += std::exp(k(r, i) - mx);
        for (std::size_t r = 0; r < m; ++r) g(r, i) += (std::exp(k(r, i) - mx) / s - (r == i ? T{1} : T{0})) * scale;
    }
    // K = U V^T / tau, then back through row normalisation.
    auto back_norm = [d](const Matrix<T>& unit, const std::vector<T>& norms, const Matrix<T>& du, Matrix<T>& out) {
        if (out.rows() != unit.rows() || out.cols() != d) out = Matrix<T>(unit.rows(), d);
        for (std::size_t r = 0; r < unit.rows(); ++r) {
            const T p = dot<T>(unit.row(r), du.row(r));
            for (std::size_t c = 0; c < d; ++c) out(r, c) += (du(r, c) - unit(r, c) * p) / norms[r];
        }
    };
    if (d_e_hat) {
        Matrix<T> du(m, d);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t i = 0; i < m; ++i) {
                const T gji = g(j, i) / tau;
                for (std::size_t c = 0; c < d; ++c) du(j, c) += gji * v(i, c);
            }
        back_norm(u, nu, du, *d_e_hat);
    }
    if (d_e) {
        Matrix<T> dv(m, d);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t i = 0; i < m; ++i) {
                const T gji = g(j, i) / tau;
                for (std::size_t c = 0; c < d; ++c) dv(i, c) += gji * u(j, c);
            }
        back_norm(v, nv, dv, *d_e);
    }
    return loss;
}

template <typename T>
Var info_nce(Tape<T>& tape, Var e_hat, Var e, T tau) {
    const T loss = symmetric_info_nce(tape.value(e_hat), tape.value(e), tau);
    Var out{tape.size()};
    return tape.push(Matrix<T>(1, 1, loss), tape.any_requires_grad({e_hat, e}), [&tape, e_hat, e, tau, out] {
        const T upstream = tape.grad(out)(0, 0);
        Matrix<T> ga(tape.value(e_hat).rows(), tape.value(e_hat).cols());
        Matrix<T> gb(tape.value(e).rows(), tape.value(e).cols());
        symmetric_info_nce(tape.value(e_hat), tape.value(e), tau, &ga, &gb);
        if (tape.requires_grad(e_hat)) {
            auto& g = tape.grad(e_hat);
            for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += upstream * ga.data()[i];
        }
        if (tape.requires_grad(e)) {
            auto& g = tape.grad(e);
            for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += upstream * gb.data()[i];
        }
    });
}

template <typename T>
double grad_norm(const ParameterStore<T>& params) {
    double ss = 0.0;
    for (const auto& e : params)
        for (T g : e.grad.storage()) ss += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(ss);
}

template <typename T>
double clip_grad_norm(ParameterStore<T>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (norm > max_norm && norm > 0.0) {
        const T s = static_cast<T>(max_norm / (norm + 1e-6));
        for (auto& e : params)
            for (auto& g : e.grad.storage()) g *= s;
    }
    return norm;
}

#define CTXLOG_INSTANTIATE(T)                                                                      \
    template Matrix<T> similarity_matrix<T>(const Matrix<T>&, const Matrix<T>&, T);                \
    template T row_cross_entropy<T>(const Matrix<T>&);                                             \
    template T col_cross_entropy<T>(const Matrix<T>&);                                             \
    template T symmetric_info_nce<T>(const Matrix<T>&, const Matrix<T>&, T, Matrix<T>*, Matrix<T>*); \
    template Var info_nce<T>(Tape<T>&, Var, Var, T);                                               \
    template double grad_norm<T>(const ParameterStore<T>&);                                        \
    template double clip_grad_norm<T>(ParameterStore<T>&, double);

CTXLOG_INSTANTIATE(float)
CTXLOG_INSTANTIATE(double)
#undef CTXLOG_INSTANTIATE

void AdamW::step(ParameterStore<float>& params) {
    if (m_.empty()) {
        for (const auto& e : params) {
            m_.emplace_back(e.value.size(), 0.0f);
            v_.emplace_back(e.value.size(), 0.0f);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const float lr = static_cast<float>(cfg_.learning_rate);
    const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const float wd = static_cast<float>(cfg_.weight_decay), eps = static_cast<float>(cfg_.adam_eps);
    const float c1 = static_cast<float>(1.0 / bc1), c2 = static_cast<float>(1.0 / bc2);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& e = params.at(p);
        float* w = e.value.data();
        const float* g = e.grad.data();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < m.size(); ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            const float mhat = m[i] * c1;
            const float vhat = v[i] * c2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w[i]);
        }
    }
}

std::vector<TokenSequence> tokenize_sequences(const BpeVocab& vocab, const std::vector<std::vector<std::string>>& seqs,
                                              std::size_t max_message_len) {
    std::vector<TokenSequence> out;
    out.reserve(seqs.size());
    for (const auto& s : seqs) {
        TokenSequence ts;
        ts.reserve(s.size());
        for (const auto& m : s) ts.push_back(encode(vocab, m, max_message_len).ids);
        out.push_back(std::move(ts));
    }
    return out;
}

BatchResult run_batch(Encoder<float>& enc, const std::vector<const TokenSequence*>& batch, const TrainConfig& cfg,
                      Rng& mask_rng, bool train) {
    TokenBatch tokens;
    std::vector<std::size_t> lengths;
    std::vector<const std::vector<TokenId>*> flat;
    for (const auto* seq : batch) {
        if (seq->empty()) throw DegenerateBatch("empty sequence in batch");
        lengths.push_back(seq->size());
        for (const auto& msg : *seq) {
            tokens.append(msg);
            flat.push_back(&msg);
        }
    }
    const Segments seqs = Segments::from_lengths(lengths);
    const MaskBatch masks = sample_masks(lengths, cfg.mask_ratio, mask_rng);
    std::vector<std::size_t> rows;
    rows.reserve(masks.size());
    for (const auto& [s, p] : masks.pairs) rows.push_back(seqs.begin(s) + p);

    BatchResult res;
    res.masked = rows.size();
    std::map<std::vector<TokenId>, std::size_t> seen;
    for (auto r : rows) ++seen[*flat[r]];
    for (const auto& [ids, c] : seen) res.duplicate_pairs += c * (c - 1) / 2;

    Tape<float> tape;
    tape.set_grad_enabled(train);
    enc.bind(tape, train);
    Rng dropout_rng(mask_rng.next_u64());
    Rng* drop = train && enc.config().dropout > 0.0 ? &dropout_rng : nullptr;
    Var e = enc.embed_messages(tape, tokens, drop);
    Var e_hat = enc.predict_masked(tape, e, seqs, rows, drop);
    Var target = ops::gather_rows(tape, e, std::span<const std::size_t>(rows));
    Var loss = info_nce(tape, e_hat, target, static_cast<float>(cfg.tau));
    res.loss = tape.value(loss)(0, 0);
    if (train && std::isfinite(res.loss)) tape.backward(loss);
    return res;
}

namespace {

std::vector<std::vector<const TokenSequence*>> make_batches(const std::vector<TokenSequence>& data,
                                                            std::size_t batch_size, Rng* shuffle_rng) {
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle_rng) shuffle_rng->shuffle(order);
    std::vector<std::vector<const TokenSequence*>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        std::vector<const TokenSequence*> b;
        for (std::size_t j = i; j < std::min(order.size(), i + batch_size); ++j) b.push_back(&data[order[j]]);
        out.push_back(std::move(b));
    }
    return out;
}

} // namespace

EpochStats train_epoch(Encoder<float>& enc, AdamW& opt, const std::vector<TokenSequence>& data,
                       const TrainConfig& cfg, std::size_t epoch) {
    if (data.empty()) throw DegenerateBatch("train_epoch: no training sequences");
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle/" + std::to_string(epoch)));
    Rng mask_rng(derive_seed(cfg.seed, "masks/" + std::to_string(epoch)));
    EpochStats st;
    st.epoch = epoch;
    std::vector<double> norms;
    double loss_sum = 0.0;
    for (const auto& batch : make_batches(data, cfg.batch_size, &shuffle_rng)) {
        enc.params().zero_grad();
        const auto res = run_batch(enc, batch, cfg, mask_rng, true);
        if (!std::isfinite(res.loss))
            throw NonFiniteLoss("epoch " + std::to_string(epoch) + " step " + std::to_string(st.steps) +
                                ": loss=" + format_real(res.loss) + " over " + std::to_string(res.masked) +
                                " masked positions");
        const double norm = clip_grad_norm(enc.params(), cfg.grad_clip_norm);
        if (!std::isfinite(norm))
            throw NonFiniteLoss("epoch " + std::to_string(epoch) + " step " + std::to_string(st.steps) +
                                ": non-finite gradient norm");
        norms.push_back(norm);
        st.clipped_norm_max = std::max(st.clipped_norm_max, grad_norm(enc.params()));
        opt.step(enc.params());
        loss_sum += res.loss;
        st.duplicate_pairs += res.duplicate_pairs;
        ++st.steps;
    }
    st.mean_loss = loss_sum / static_cast<double>(st.steps);
    std::sort(norms.begin(), norms.end());
    st.grad_norm_p50 = norms[(norms.size() - 1) / 2];
    st.grad_norm_max = norms.back();
    st.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return st;
}

double evaluate_loss(Encoder<float>& enc, const std::vector<TokenSequence>& data, const TrainConfig& cfg) {
    if (data.empty()) return 0.0;
    Rng mask_rng(derive_seed(cfg.seed, "masks/validation"));
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& batch : make_batches(data, cfg.batch_size, nullptr)) {
        sum += run_batch(enc, batch, cfg, mask_rng, false).loss;
        ++n;
    }
    return sum / static_cast<double>(n);
}

TrainHistory train(Encoder<float>& enc, const std::vector<TokenSequence>& train_data,
                   const std::vector<TokenSequence>& val_data, const TrainConfig& cfg,
                   const std::function<void(const EpochStats&)>& on_epoch) {
    cfg.validate();
    AdamW opt(cfg);
    TrainHistory hist;
    double best = std::numeric_limits<double>::infinity();
    std::vector<Matrix<float>> best_params;
    std::size_t since_best = 0;
    double elapsed = 0.0;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        auto st = train_epoch(enc, opt, train_data, cfg, epoch);
        st.val_loss = val_data.empty() ? st.mean_loss : evaluate_loss(enc, val_data, cfg);
        elapsed += st.duration_s;
        hist.epochs.push_back(st);
        if (on_epoch) on_epoch(st);
        if (st.val_loss < best - cfg.min_delta) {
            best = st.val_loss;
            hist.best_epoch = epoch;
            since_best = 0;
            best_params.clear();
            for (const auto& e : enc.params()) best_params.push_back(e.value);
        } else if (++since_best >= cfg.patience) {
            hist.stopped_early = true;
            break;
        }
        if (cfg.time_budget_s > 0.0 && elapsed + st.duration_s > cfg.time_budget_s) {
            hist.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    if (!best_params.empty())
        for (std::size_t i = 0; i < best_params.size(); ++i) enc.params().at(i).value = best_params[i];
    return hist;
}

std::string training_log_csv(const TrainHistory& history) {
    std::ostringstream out;
    out << "epoch,mean_loss,val_loss,grad_norm_p50,duration_s\n";
    for (const auto& e : history.epochs)
        out << e.epoch << ',' << format_real(e.mean_loss) << ',' << format_real(e.val_loss) << ','
            << format_real(e.grad_norm_p50) << ',' << format_real(e.duration_s) << '\n';
    return out.str();
}

} // namespace ctxlog
