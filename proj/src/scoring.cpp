#include "ctxlog/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "ctxlog/errors.hpp"
#include "ctxlog/io.hpp"
#include "ctxlog/rng.hpp"

namespace ctxlog {

// ---- EmbeddingCache ----

EmbeddingCache::Value EmbeddingCache::lookup(const std::string& text) {
    std::lock_guard lock(mu_);
    auto it = map_.find(text);
    if (it == map_.end()) {
        ++counters_.misses;
        return nullptr;
    }
    ++counters_.hits;
    order_.splice(order_.begin(), order_, it->second.pos);
    return it->second.value;
}

EmbeddingCache::Value EmbeddingCache::insert(const std::string& text, std::vector<float> value) {
    std::lock_guard lock(mu_);
    auto it = map_.find(text);
    if (it != map_.end()) {
        order_.splice(order_.begin(), order_, it->second.pos);
        return it->second.value;
    }
    order_.push_front(text);
    auto stored = std::make_shared<const std::vector<float>>(std::move(value));
    map_.emplace(text, Slot{stored, order_.begin()});
    if (capacity_ > 0) {
        while (map_.size() > capacity_) {
            map_.erase(order_.back());
            order_.pop_back();
            ++counters_.evictions;
        }
    }
    return stored;
}

std::vector<float> EmbeddingCache::get_or_compute(const std::string& text,
                                                  const std::function<std::vector<float>()>& compute) {
    if (auto v = lookup(text)) return *v;
    return *insert(text, compute());
}

void EmbeddingCache::note_hit() {
    std::lock_guard lock(mu_);
    ++counters_.hits;
}

CacheCounters EmbeddingCache::counters() const {
    std::lock_guard lock(mu_);
    return counters_;
}

std::size_t EmbeddingCache::size() const {
    std::lock_guard lock(mu_);
    return map_.size();
}

void EmbeddingCache::clear() {
    std::lock_guard lock(mu_);
    map_.clear();
    order_.clear();
    counters_ = {};
}

// ---- Scorer ----

Scorer::Scorer(const ModelConfig& cfg, const ParameterStore<float>& params, const BpeVocab& vocab, EmbeddingCache* cache)
    : cfg_(cfg), params_(params), vocab_(vocab), cache_(cache) {
    cfg_.validate();
    if (vocab_.vocab_size() > cfg_.vocab_size)
        throw ShapeMismatch("tokenizer has " + std::to_string(vocab_.vocab_size()) + " ids, model expects at most " +
                            std::to_string(cfg_.vocab_size));
}

Matrix<float> Scorer::encode_batch(std::span<const std::string* const> texts) const {
    TokenBatch batch;
    for (const auto* t : texts) batch.append(encode(vocab_, *t, cfg_.max_message_len).ids);
    Tape<float> tape;
    tape.set_grad_enabled(false);
    Encoder<float> enc(cfg_, const_cast<ParameterStore<float>&>(params_));  // bound frozen, never written
    enc.bind(tape, false);
    Var e = enc.embed_messages(tape, batch);
    encoded_ += texts.size();
    return tape.value(e);
}

Matrix<float> Scorer::embed(std::span<const std::string> messages) const {
    const std::size_t n = messages.size();
    if (cache_ == nullptr) {
        std::vector<const std::string*> ptrs;
        ptrs.reserve(n);
        for (const auto& m : messages) ptrs.push_back(&m);
        return encode_batch(ptrs);
    }

    std::vector<EmbeddingCache::Value> vals(n);
    std::unordered_map<std::string_view, std::vector<std::size_t>> pending;
    std::vector<const std::string*> misses;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string& text = messages[i];
        if (auto it = pending.find(text); it != pending.end()) {
            cache_->note_hit();
            it->second.push_back(i);
            continue;
        }
        if (auto v = cache_->lookup(text)) {
            vals[i] = std::move(v);
        } else {
            pending[text].push_back(i);
            misses.push_back(&text);
        }
    }
    if (!misses.empty()) {
        Matrix<float> fresh = encode_batch(misses);
        for (std::size_t k = 0; k < misses.size(); ++k) {
            auto r = fresh.row(k);
            auto stored = cache_->insert(*misses[k], std::vector<float>(r.begin(), r.end()));
            for (auto i : pending[*misses[k]]) vals[i] = stored;
        }
    }
    Matrix<float> out(n, cfg_.d);
    for (std::size_t i = 0; i < n; ++i) std::copy(vals[i]->begin(), vals[i]->end(), out.row(i).begin());
    return out;
}

Matrix<float> Scorer::predict_each(const Matrix<float>& embeddings) const {
    const std::size_t n = embeddings.rows();
    if (embeddings.cols() != cfg_.d) throw ShapeMismatch("embedding width != d");
    Matrix<float> copies(n * n, cfg_.d);
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t i = 0; i < n; ++i) {
            auto src = embeddings.row(i);
            std::copy(src.begin(), src.end(), copies.row(c * n + i).begin());
        }
    std::vector<std::size_t> lengths(n, n);
    std::vector<std::size_t> masked(n);
    for (std::size_t j = 0; j < n; ++j) masked[j] = j * n + j;

    Tape<float> tape;
    tape.set_grad_enabled(false);
    Encoder<float> enc(cfg_, const_cast<ParameterStore<float>&>(params_));  // bound frozen, never written
    enc.bind(tape, false);
    Var e = tape.input(std::move(copies));
    Var out = enc.predict_masked(tape, e, Segments::from_lengths(lengths), masked);
    return tape.value(out);
}

// ---- scores ----

double cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ShapeMismatch("cosine of vectors with different widths");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i], y = b[i];
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    const double denom = std::sqrt(aa * bb);
    if (denom == 0.0) return 0.0;
    return std::clamp(ab / denom, -1.0, 1.0);
}

std::vector<double> context_scores(const Scorer& scorer, const Matrix<float>& embeddings) {
    const std::size_t n = embeddings.rows();
    if (n == 0) return {};
    Matrix<float> pred = scorer.predict_each(embeddings);
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = 1.0 - cosine(pred.row(j), embeddings.row(j));
    return out;
}

std::vector<std::size_t> reference_sample(std::size_t available, std::size_t n_reference, std::uint64_t seed) {
    if (n_reference > available)
        throw InsufficientData("n_reference " + std::to_string(n_reference) + " exceeds the " +
                               std::to_string(available) + " available training sequences");
    std::vector<std::size_t> order(available);
    for (std::size_t i = 0; i < available; ++i) order[i] = i;
    Rng rng(derive_seed(seed, "reference"));
    rng.shuffle(order);
    order.resize(n_reference);
    return order;
}

ReferenceIndex make_reference_index(const Matrix<float>& rows, std::size_t source_count) {
    std::unordered_set<std::string> seen;
    std::vector<std::size_t> keep;
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        auto row = rows.row(r);
        std::string key(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float));
        if (seen.insert(std::move(key)).second) keep.push_back(r);
    }
    ReferenceIndex idx;
    idx.source_count = source_count;
    idx.vectors = Matrix<float>(keep.size(), rows.cols());
    for (std::size_t k = 0; k < keep.size(); ++k) {
        auto src = rows.row(keep[k]);
        std::copy(src.begin(), src.end(), idx.vectors.row(k).begin());
    }
    return idx;
}

ReferenceIndex build_reference_index(const Scorer& scorer, const std::vector<Sequence>& train,
                                     std::size_t n_reference, std::uint64_t seed) {
    const auto picks = reference_sample(train.size(), n_reference, seed);
    std::vector<std::string> messages;
    for (auto i : picks)
        messages.insert(messages.end(), train[i].messages.begin(), train[i].messages.end());
    if (messages.empty()) throw EmptyReference("reference sample contains no messages");
    // Embed in chunks so a large reference set does not build one huge tape.
    constexpr std::size_t kChunk = 4096;
    Matrix<float> all(messages.size(), scorer.config().d);
    for (std::size_t start = 0; start < messages.size(); start += kChunk) {
        const std::size_t len = std::min(kChunk, messages.size() - start);
        Matrix<float> part = scorer.embed(std::span<const std::string>(messages).subspan(start, len));
        for (std::size_t r = 0; r < len; ++r) {
            auto src = part.row(r);
            std::copy(src.begin(), src.end(), all.row(start + r).begin());
        }
    }
    return make_reference_index(all, picks.size());
}

std::vector<double> point_scores(const ReferenceIndex& index, const Matrix<float>& embeddings) {
    if (index.size() == 0) throw EmptyReference("reference index is empty");
    std::vector<double> out(embeddings.rows());
    for (std::size_t j = 0; j < embeddings.rows(); ++j) {
        double best = -1.0;
        for (std::size_t r = 0; r < index.size(); ++r) best = std::max(best, cosine(embeddings.row(j), index.vectors.row(r)));
        out[j] = 1.0 - best;
    }
    return out;
}

ScoreVector aggregate_sequence(std::span<const double> ctx, std::span<const double> pt) {
    if (ctx.size() != pt.size())
        throw LengthMismatch("context scores (" + std::to_string(ctx.size()) + ") and point scores (" +
                             std::to_string(pt.size()) + ") differ in length");
    if (ctx.empty()) throw LengthMismatch("cannot aggregate an empty sequence");
    ScoreVector s;
    double csum = 0.0, psum = 0.0;
    s.context_max = ctx[0];
    s.point_max = pt[0];
    for (std::size_t i = 0; i < ctx.size(); ++i) {
        s.context_max = std::max(s.context_max, ctx[i]);
        s.point_max = std::max(s.point_max, pt[i]);
        csum += ctx[i];
        psum += pt[i];
    }
    const double n = static_cast<double>(ctx.size());
    // The mean of values bounded by the max can round above it by one ulp.
    s.context_mean = std::min(csum / n, s.context_max);
    s.point_mean = std::min(psum / n, s.point_max);
    return s;
}

SequenceScores score_sequence(const Scorer& scorer, const ReferenceIndex& index,
                              const std::vector<std::string>& messages) {
    if (messages.empty()) throw LengthMismatch("cannot score an empty sequence");
    Matrix<float> e = scorer.embed(messages);
    SequenceScores out;
    out.context = context_scores(scorer, e);
    out.point = point_scores(index, e);
    out.features = aggregate_sequence(out.context, out.point);
    return out;
}

std::vector<ScoreVector> score_sequences(const Scorer& scorer, const ReferenceIndex& index,
                                         const std::vector<Sequence>& sequences, std::size_t workers) {
    std::vector<ScoreVector> out(sequences.size());
    workers = std::max<std::size_t>(1, std::min(workers, sequences.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < sequences.size(); ++i)
            out[i] = score_sequence(scorer, index, sequences[i].messages).features;
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto work = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= sequences.size()) return;
            try {
                out[i] = score_sequence(scorer, index, sequences[i].messages).features;
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = sequences.size();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

// ---- CSV ----

std::string scores_csv(const std::vector<ScoredSequence>& rows) {
    std::string out = "sequence_id,label,point_max,point_mean,context_max,context_mean\n";
    for (const auto& r : rows) {
        out += r.id;
        out += ',';
        out += to_string(r.label);
        for (double v : r.scores.values()) {
            out += ',';
            out += format_real(v);
        }
        out += '\n';
    }
    return out;
}

namespace {

double parse_real(std::string_view s, std::size_t line_no) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw MalformedLine("scores line " + std::to_string(line_no) + ": bad number '" + std::string(s) + "'");
    return v;
}

} // namespace

std::vector<ScoredSequence> parse_scores_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<ScoredSequence> rows;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        std::vector<std::string_view> cells;
        std::string_view rest(line);
        for (;;) {
            const auto comma = rest.find(',');
            cells.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (cells.size() != 6)
            throw MalformedLine("scores line " + std::to_string(line_no) + ": expected 6 columns");
        ScoredSequence r;
        r.id = std::string(cells[0]);
        r.label = label_from_string(std::string(cells[1]));
        r.scores.point_max = parse_real(cells[2], line_no);
        r.scores.point_mean = parse_real(cells[3], line_no);
        r.scores.context_max = parse_real(cells[4], line_no);
        r.scores.context_mean = parse_real(cells[5], line_no);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace ctxlog
