#include "ctxlog/model.hpp"

#include <cmath>
#include <set>

#include "ctxlog/errors.hpp"

namespace ctxlog {

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw ShapeMismatch("model config: " + what); };
    if (vocab_size == 0) fail("vocab_size must be positive");
    if (token_embed_dim == 0 || d == 0) fail("dimensions must be positive");
    if (n_layers == 0) fail("n_layers must be positive");
    if (n_heads == 0) fail("n_heads must be positive");
    if (token_embed_dim % n_heads != 0) fail("n_heads must divide token_embed_dim");
    if (d % n_heads != 0) fail("n_heads must divide d");
    if (max_message_len == 0 || max_sequence_len == 0) fail("max lengths must be positive");
    if (feedforward_mult == 0) fail("feedforward_mult must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0,1)");
}

template <typename T>
std::size_t ParameterStore<T>::add(std::string name, std::size_t rank, Matrix<T> value) {
    if (by_name_.count(name)) throw ShapeMismatch("duplicate parameter " + name);
    Entry e;
    e.name = name;
    e.rank = rank;
    e.grad = Matrix<T>(value.rows(), value.cols());
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    by_name_[std::move(name)] = entries_.size() - 1;
    return entries_.size() - 1;
}

template <typename T>
std::size_t ParameterStore<T>::index(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ShapeMismatch("unknown parameter " + name);
    return it->second;
}

template <typename T>
std::size_t ParameterStore<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
    for (auto& e : entries_) e.grad.fill(T{0});
}

template <typename T>
bool ParameterStore<T>::all_finite() const {
    for (const auto& e : entries_)
        for (T v : e.value.storage())
            if (!std::isfinite(v)) return false;
    return true;
}

template class ParameterStore<float>;
template class ParameterStore<double>;

namespace {

void add_block(ParameterStore<float>& ps, const std::string& p, std::size_t width, std::size_t ff, Rng& rng) {
    auto normal = [&](std::size_t r, std::size_t c) {
        Matrix<float> m(r, c);
        for (auto& v : m.storage()) v = static_cast<float>(rng.normal(0.0, 0.02));
        return m;
    };
    ps.add(p + ".ln1.gamma", 1, Matrix<float>(1, width, 1.0f));
    ps.add(p + ".ln1.beta", 1, Matrix<float>(1, width));
    ps.add(p + ".attn.qkv.w", 2, normal(width, 3 * width));
    ps.add(p + ".attn.qkv.b", 1, Matrix<float>(1, 3 * width));
    ps.add(p + ".attn.out.w", 2, normal(width, width));
    ps.add(p + ".attn.out.b", 1, Matrix<float>(1, width));
    ps.add(p + ".ln2.gamma", 1, Matrix<float>(1, width, 1.0f));
    ps.add(p + ".ln2.beta", 1, Matrix<float>(1, width));
    ps.add(p + ".ff.in.w", 2, normal(width, ff));
    ps.add(p + ".ff.in.b", 1, Matrix<float>(1, ff));
    ps.add(p + ".ff.out.w", 2, normal(ff, width));
    ps.add(p + ".ff.out.b", 1, Matrix<float>(1, width));
}

} // namespace

ParameterStore<float> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    auto normal = [&](std::size_t r, std::size_t c) {
        Matrix<float> m(r, c);
        for (auto& v : m.storage()) v = static_cast<float>(rng.normal(0.0, 0.02));
        return m;
    };
    ParameterStore<float> ps;
    const std::size_t dt = cfg.token_embed_dim;
    ps.add("msg.tok_embed", 2, normal(cfg.vocab_size, dt));
    ps.add("msg.pos_embed", 2, normal(cfg.max_message_len, dt));
    for (std::size_t i = 0; i < cfg.n_layers; ++i)
        add_block(ps, "msg.layer" + std::to_string(i), dt, dt * cfg.feedforward_mult, rng);
    ps.add("msg.ln_f.gamma", 1, Matrix<float>(1, dt, 1.0f));
    ps.add("msg.ln_f.beta", 1, Matrix<float>(1, dt));
    ps.add("msg.proj.w", 2, normal(dt, cfg.d));
    ps.add("msg.proj.b", 1, Matrix<float>(1, cfg.d));
    ps.add("seq.mask", 1, normal(1, cfg.d));
    for (std::size_t i = 0; i < cfg.n_layers; ++i)
        add_block(ps, "seq.layer" + std::to_string(i), cfg.d, cfg.d * cfg.feedforward_mult, rng);
    ps.add("seq.ln_f.gamma", 1, Matrix<float>(1, cfg.d, 1.0f));
    ps.add("seq.ln_f.beta", 1, Matrix<float>(1, cfg.d));
    return ps;
}

template <typename T>
Matrix<T> sinusoidal_positions(std::size_t rows, std::size_t width) {
    Matrix<T> pe(rows, width);
    for (std::size_t pos = 0; pos < rows; ++pos) {
        for (std::size_t i = 0; i < width; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(width));
            pe(pos, i) = static_cast<T>(std::sin(static_cast<double>(pos) * freq));
            if (i + 1 < width) pe(pos, i + 1) = static_cast<T>(std::cos(static_cast<double>(pos) * freq));
        }
    }
    return pe;
}

template Matrix<float> sinusoidal_positions<float>(std::size_t, std::size_t);
template Matrix<double> sinusoidal_positions<double>(std::size_t, std::size_t);

void TokenBatch::append(std::span<const std::int32_t> message_ids) {
    if (message_ids.empty()) throw ShapeMismatch("token batch: empty message");
    for (std::size_t i = 0; i < message_ids.size(); ++i) {
        ids.push_back(message_ids[i]);
        positions.push_back(i);
    }
    messages.offsets.push_back(messages.offsets.back() + message_ids.size());
}

template <typename T>
Encoder<T>::Encoder(const ModelConfig& cfg, ParameterStore<T>& params)
    : cfg_(cfg), params_(params), seq_positions_(sinusoidal_positions<T>(cfg.max_sequence_len, cfg.d)) {
    cfg_.validate();
}

template <typename T>
void Encoder<T>::bind(Tape<T>& tape, bool trainable) {
    bound_.clear();
    bound_.reserve(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& e = params_.at(i);
        bound_.push_back(tape.parameter(e.value, trainable ? &e.grad : nullptr));
    }
}

template <typename T>
Var Encoder<T>::param(const std::string& name) const {
    return bound_.at(params_.index(name));
}

template <typename T>
Var Encoder<T>::block(Tape<T>& tape, Var x, const std::string& p, const Segments& segs, Rng* rng) {
    using namespace ops;
    Var h = layer_norm(tape, x, param(p + ".ln1.gamma"), param(p + ".ln1.beta"));
    h = linear(tape, h, param(p + ".attn.qkv.w"), param(p + ".attn.qkv.b"));
    h = attention(tape, h, segs, cfg_.n_heads);
    h = linear(tape, h, param(p + ".attn.out.w"), param(p + ".attn.out.b"));
    if (rng) h = dropout(tape, h, cfg_.dropout, *rng);
    x = add(tape, x, h);
    h = layer_norm(tape, x, param(p + ".ln2.gamma"), param(p + ".ln2.beta"));
    h = linear(tape, h, param(p + ".ff.in.w"), param(p + ".ff.in.b"));
    h = gelu(tape, h);
    h = linear(tape, h, param(p + ".ff.out.w"), param(p + ".ff.out.b"));
    if (rng) h = dropout(tape, h, cfg_.dropout, *rng);
    return add(tape, x, h);
}

template <typename T>
Var Encoder<T>::embed_messages(Tape<T>& tape, const TokenBatch& batch, Rng* rng) {
    using namespace ops;
    if (bound_.empty()) throw ShapeMismatch("encoder parameters not bound to a tape");
    for (std::size_t m = 0; m < batch.messages.count(); ++m)
        if (batch.messages.length(m) > cfg_.max_message_len)
            throw ShapeMismatch("message of " + std::to_string(batch.messages.length(m)) +
                                " tokens exceeds max_message_len " + std::to_string(cfg_.max_message_len));
    Var x = embedding(tape, param("msg.tok_embed"), std::span<const std::int32_t>(batch.ids));
    x = add_rows(tape, x, param("msg.pos_embed"), std::span<const std::size_t>(batch.positions));
    if (rng) x = dropout(tape, x, cfg_.dropout, *rng);
    for (std::size_t i = 0; i < cfg_.n_layers; ++i)
        x = block(tape, x, "msg.layer" + std::to_string(i), batch.messages, rng);
    x = layer_norm(tape, x, param("msg.ln_f.gamma"), param("msg.ln_f.beta"));
    x = mean_pool(tape, x, batch.messages);
    x = linear(tape, x, param("msg.proj.w"), param("msg.proj.b"));
    messages_encoded_ += batch.messages.count();
    return l2_normalize(tape, x);
}

template <typename T>
Var Encoder<T>::predict_masked(Tape<T>& tape, Var embeddings, const Segments& sequences,
                               std::span<const std::size_t> masked_rows, Rng* rng) {
    using namespace ops;
    if (bound_.empty()) throw ShapeMismatch("encoder parameters not bound to a tape");
    const auto& ev = tape.value(embeddings);
    if (ev.cols() != cfg_.d) throw ShapeMismatch("sequence encoder: embedding width != d");
    if (sequences.total() != ev.rows()) throw ShapeMismatch("sequence encoder: segments do not cover rows");
    std::vector<std::size_t> positions(ev.rows());
    for (std::size_t s = 0; s < sequences.count(); ++s) {
        if (sequences.length(s) > cfg_.max_sequence_len)
            throw ShapeMismatch("sequence of " + std::to_string(sequences.length(s)) +
                                " messages exceeds max_sequence_len");
        for (std::size_t r = sequences.begin(s); r < sequences.end(s); ++r) positions[r] = r - sequences.begin(s);
    }
    for (auto r : masked_rows)
        if (r >= ev.rows()) throw IndexOutOfRange("mask row " + std::to_string(r));
    Var x = replace_rows(tape, embeddings, param("seq.mask"), masked_rows);
    Var pe = tape.input(seq_positions_);
    x = add_rows(tape, x, pe, std::span<const std::size_t>(positions));
    for (std::size_t i = 0; i < cfg_.n_layers; ++i)
        x = block(tape, x, "seq.layer" + std::to_string(i), sequences, rng);
    x = layer_norm(tape, x, param("seq.ln_f.gamma"), param("seq.ln_f.beta"));
    x = gather_rows(tape, x, masked_rows);
    return l2_normalize(tape, x);
}

template class Encoder<float>;
template class Encoder<double>;

std::vector<float> embed_message(const ModelConfig& cfg, ParameterStore<float>& params,
                                 std::span<const std::int32_t> ids) {
    Tape<float> tape;
    tape.set_grad_enabled(false);
    Encoder<float> enc(cfg, params);
    enc.bind(tape, false);
    TokenBatch batch;
    batch.append(ids);
    Var e = enc.embed_messages(tape, batch);
    auto row = tape.value(e).row(0);
    return {row.begin(), row.end()};
}

std::map<std::size_t, std::vector<float>> predict_masked(
    const ModelConfig& cfg, ParameterStore<float>& params,
    const std::vector<std::vector<float>>& embeddings, const std::vector<std::size_t>& mask_positions) {
    const std::size_t n = embeddings.size();
    std::set<std::size_t> unique(mask_positions.begin(), mask_positions.end());
    for (auto p : unique)
        if (p >= n) throw IndexOutOfRange("mask position " + std::to_string(p) + " >= " + std::to_string(n));
    Matrix<float> m(n, cfg.d);
    for (std::size_t i = 0; i < n; ++i) {
        if (embeddings[i].size() != cfg.d) throw ShapeMismatch("embedding width != d");
        std::copy(embeddings[i].begin(), embeddings[i].end(), m.row(i).begin());
    }
    Tape<float> tape;
    tape.set_grad_enabled(false);
    Encoder<float> enc(cfg, params);
    enc.bind(tape, false);
    Var e = tape.input(std::move(m));
    std::vector<std::size_t> rows(unique.begin(), unique.end());
    std::size_t lens[] = {n};
    Var out = enc.predict_masked(tape, e, Segments::from_lengths(lens), rows);
    std::map<std::size_t, std::vector<float>> result;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto r = tape.value(out).row(i);
        result[rows[i]] = {r.begin(), r.end()};
    }
    return result;
}

} // namespace ctxlog
