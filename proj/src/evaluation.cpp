#include "ctxlog/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "ctxlog/errors.hpp"
#include "ctxlog/io.hpp"
#include "ctxlog/words.hpp"
#include "json.hpp"

namespace ctxlog {

MetricRow prf1(std::span<const Label> labels, std::span<const Label> predictions, std::string tag) {
    if (labels.size() != predictions.size())
        throw LengthMismatch("labels (" + std::to_string(labels.size()) + ") and predictions (" +
                             std::to_string(predictions.size()) + ") differ in length");
    if (labels.empty()) throw LengthMismatch("no labels to evaluate");
    MetricRow r;
    r.tag = std::move(tag);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool actual = labels[i] == Label::abnormal;
        const bool pred = predictions[i] == Label::abnormal;
        if (actual && pred) ++r.tp;
        else if (!actual && pred) ++r.fp;
        else if (actual) ++r.fn;
        else ++r.tn;
    }
    r.precision = r.tp + r.fp ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
    r.recall = r.tp + r.fn ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
    r.f1 = r.precision + r.recall > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

std::vector<Label> predict(const std::vector<ScoreVector>& scores, const CalibrationStats& stats) {
    std::vector<Label> out;
    out.reserve(scores.size());
    for (const auto& y : scores) out.push_back(classify(anomaly_score(y, stats), stats));
    return out;
}

std::vector<MetricRow> ablation_grid(const CalibrationStats& base, const std::vector<ScoreVector>& calibration,
                                     const std::vector<ScoreVector>& test, std::span<const Label> labels) {
    std::vector<MetricRow> rows;
    for (auto mask : all_feature_subsets()) {
        const auto stats = refit_threshold(base, calibration, mask, base.percentile);
        rows.push_back(prf1(labels, predict(test, stats), mask.tag()));
    }
    return rows;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const Label> labels) {
    if (scores.size() != labels.size()) throw LengthMismatch("scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    std::size_t pos = 0, neg = 0;
    for (auto l : labels) (l == Label::abnormal ? pos : neg)++;
    auto rate = [](std::size_t k, std::size_t total) {
        return total == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(total);
    };

    std::vector<RocPoint> roc;
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double t = scores[order[i]];
        roc.push_back({t, rate(fp, neg), rate(tp, pos)});
        while (i < order.size() && scores[order[i]] == t) {
            (labels[order[i]] == Label::abnormal ? tp : fp)++;
            ++i;
        }
    }
    roc.push_back({-std::numeric_limits<double>::infinity(), rate(fp, neg), rate(tp, pos)});
    return roc;
}

ThresholdSweep threshold_sweep(const CalibrationStats& base, const std::vector<ScoreVector>& calibration,
                               const std::vector<ScoreVector>& test, std::span<const Label> labels,
                               std::span<const double> percentiles) {
    ThresholdSweep out;
    for (double p : percentiles) {
        const auto stats = refit_threshold(base, calibration, base.mask, p);
        out.rows.push_back(prf1(labels, predict(test, stats), "p" + format_real(p)));
        out.thresholds.push_back(stats.threshold);
    }
    std::vector<double> scores;
    for (const auto& y : test) scores.push_back(anomaly_score(y, base));
    out.roc = roc_curve(scores, labels);
    return out;
}

// ---- perturbations ----

namespace {

constexpr std::pair<PerturbKind, const char*> kKindNames[] = {
    {PerturbKind::msg_move, "msg_move"},
    {PerturbKind::msg_delete, "msg_delete"},
    {PerturbKind::msg_duplicate, "msg_duplicate"},
    {PerturbKind::msg_duplicate_adjacent, "msg_duplicate_adjacent"},
    {PerturbKind::msg_insert, "msg_insert"},
    {PerturbKind::word_delete, "word_delete"},
    {PerturbKind::word_add_random, "word_add_random"},
    {PerturbKind::word_add_corpus, "word_add_corpus"},
    {PerturbKind::word_move, "word_move"},
    {PerturbKind::word_duplicate, "word_duplicate"},
};

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

// Moves element `from` by `shift` positions in a random direction, clamped.
// At an end the direction flips so the element always moves.
template <typename Vec>
void move_by(Vec& v, std::size_t from, std::size_t shift, Rng& rng) {
    const std::size_t last = v.size() - 1;
    bool forward = rng.below(2) == 1;
    if (from == last) forward = false;
    if (from == 0) forward = true;
    const std::size_t to = forward ? std::min(last, from + shift) : (from >= shift ? from - shift : 0);
    auto item = std::move(v[from]);
    v.erase(v.begin() + static_cast<std::ptrdiff_t>(from));
    v.insert(v.begin() + static_cast<std::ptrdiff_t>(to), std::move(item));
}

std::string edit_words(const std::string& message, const Perturbation& p, const PerturbSources& src, Rng& rng) {
    auto words = split_words(message);
    const std::size_t mag = p.magnitude;
    switch (p.kind) {
    case PerturbKind::word_delete:
        for (std::size_t k = 0; k < mag && words.size() > 1; ++k)
            words.erase(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size())));
        break;
    case PerturbKind::word_add_random:
    case PerturbKind::word_add_corpus:
        for (std::size_t k = 0; k < mag; ++k) {
            const std::string& w = p.kind == PerturbKind::word_add_random
                                       ? common_words()[rng.below(common_words().size())]
                                       : src.corpus_words->draw(rng);
            words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), w);
        }
        break;
    case PerturbKind::word_move:
        if (words.size() > 1)
            for (std::size_t k = 0; k < mag; ++k) {
                const auto from = rng.below(words.size());
                auto w = std::move(words[from]);
                words.erase(words.begin() + static_cast<std::ptrdiff_t>(from));
                std::size_t to = rng.below(words.size());
                if (to >= from) ++to;  // a different position
                words.insert(words.begin() + static_cast<std::ptrdiff_t>(to), std::move(w));
            }
        break;
    case PerturbKind::word_duplicate:
        if (!words.empty())
            for (std::size_t k = 0; k < mag; ++k) {
                std::string w = words[rng.below(words.size())];
                words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), std::move(w));
            }
        break;
    default:
        break;
    }
    return join_words(words);
}

} // namespace

const char* to_string(PerturbKind k) {
    for (const auto& [kind, name] : kKindNames)
        if (kind == k) return name;
    return "unknown";
}

PerturbKind perturb_kind_from_string(const std::string& s) {
    for (const auto& [kind, name] : kKindNames)
        if (s == name) return kind;
    throw ConfigInvalid("unknown perturbation kind '" + s + "'");
}

std::vector<PerturbKind> all_perturb_kinds() {
    std::vector<PerturbKind> out;
    for (const auto& [kind, name] : kKindNames) out.push_back(kind);
    return out;
}

bool is_word_level(PerturbKind k) {
    return k == PerturbKind::word_delete || k == PerturbKind::word_add_random || k == PerturbKind::word_add_corpus ||
           k == PerturbKind::word_move || k == PerturbKind::word_duplicate;
}

WordPool WordPool::from_sequences(const std::vector<Sequence>& sequences) {
    std::map<std::string, std::uint64_t> counts;
    for (const auto& s : sequences)
        for (const auto& m : s.messages)
            for (auto& w : split_words(m)) ++counts[w];
    WordPool pool;
    std::uint64_t total = 0;
    for (auto& [w, c] : counts) {
        total += c;
        pool.words_.push_back(w);
        pool.cumulative_.push_back(total);
    }
    return pool;
}

const std::string& WordPool::draw(Rng& rng) const {
    if (words_.empty()) throw InsufficientData("word pool is empty");
    const auto r = rng.below(cumulative_.back());
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
    return words_[static_cast<std::size_t>(it - cumulative_.begin())];
}

std::vector<std::string> split_words(const std::string& message) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < message.size()) {
        while (i < message.size() && std::isspace(static_cast<unsigned char>(message[i]))) ++i;
        const std::size_t start = i;
        while (i < message.size() && !std::isspace(static_cast<unsigned char>(message[i]))) ++i;
        if (i > start) out.push_back(message.substr(start, i - start));
    }
    return out;
}

Sequence perturb_sequence(const Sequence& seq, const Perturbation& p, const PerturbSources& sources) {
    if (p.magnitude == 0) return seq;
    if (seq.messages.empty()) throw InvalidMagnitude("cannot perturb an empty sequence");
    Sequence out = seq;
    auto& msgs = out.messages;
    const std::size_t n = msgs.size();
    const std::size_t mag = p.magnitude;
    Rng rng(derive_seed(p.seed, to_string(p.kind)));

    switch (p.kind) {
    case PerturbKind::msg_move:
        if (n > 1) move_by(msgs, rng.below(n), mag, rng);
        break;
    case PerturbKind::msg_delete: {
        if (mag >= n)
            throw InvalidMagnitude("deleting " + std::to_string(mag) + " of " + std::to_string(n) +
                                   " messages would leave none");
        auto drop = rng.sample_without_replacement(n, mag);
        std::sort(drop.rbegin(), drop.rend());
        for (auto i : drop) msgs.erase(msgs.begin() + static_cast<std::ptrdiff_t>(i));
        break;
    }
    case PerturbKind::msg_duplicate:
    case PerturbKind::msg_duplicate_adjacent: {
        // Sources come from their own stream so both variants copy the same messages.
        Rng src_rng(derive_seed(p.seed, "duplicate-sources"));
        std::vector<long> origin(n);
        for (std::size_t i = 0; i < n; ++i) origin[i] = static_cast<long>(i);
        for (std::size_t k = 0; k < mag; ++k) {
            const auto s = static_cast<long>(src_rng.below(n));
            std::size_t at;
            if (p.kind == PerturbKind::msg_duplicate_adjacent) {
                at = static_cast<std::size_t>(std::find(origin.begin(), origin.end(), s) - origin.begin()) + 1;
            } else {
                at = rng.below(msgs.size() + 1);
            }
            msgs.insert(msgs.begin() + static_cast<std::ptrdiff_t>(at), seq.messages[static_cast<std::size_t>(s)]);
            origin.insert(origin.begin() + static_cast<std::ptrdiff_t>(at), -1);
        }
        break;
    }
    case PerturbKind::msg_insert: {
        if (sources.messages == nullptr || sources.messages->empty())
            throw InsufficientData("msg_insert needs a non-empty message pool");
        const auto& pool = *sources.messages;
        for (std::size_t k = 0; k < mag; ++k) {
            const auto& m = pool[rng.below(pool.size())];
            msgs.insert(msgs.begin() + static_cast<std::ptrdiff_t>(rng.below(msgs.size() + 1)), m);
        }
        break;
    }
    default: {
        if (p.kind == PerturbKind::word_add_corpus && (sources.corpus_words == nullptr || sources.corpus_words->empty()))
            throw InsufficientData("word_add_corpus needs a non-empty corpus word pool");
        if (!(p.message_fraction > 0.0 && p.message_fraction <= 1.0))
            throw InvalidMagnitude("message_fraction must lie in (0, 1]");
        const auto k = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::ceil(p.message_fraction * static_cast<double>(n) - 1e-9)), 1, n);
        auto picks = rng.sample_without_replacement(n, k);
        std::sort(picks.begin(), picks.end());
        for (auto i : picks) msgs[i] = edit_words(msgs[i], p, sources, rng);
        break;
    }
    }
    return out;
}

std::vector<MetricRow> f1_by_length_bucket(std::span<const Label> labels, std::span<const Label> predictions,
                                           std::span<const std::size_t> lengths,
                                           const std::vector<LengthBucket>& buckets) {
    if (labels.size() != predictions.size() || labels.size() != lengths.size())
        throw LengthMismatch("labels, predictions and lengths differ in length");
    std::vector<MetricRow> rows;
    for (const auto& b : buckets) {
        std::vector<Label> l, p;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (lengths[i] >= b.lo && lengths[i] <= b.hi) {
                l.push_back(labels[i]);
                p.push_back(predictions[i]);
            }
        if (l.empty()) continue;
        const std::string hi =
            b.hi == std::numeric_limits<std::size_t>::max() ? std::string("inf") : std::to_string(b.hi);
        rows.push_back(prf1(l, p, std::to_string(b.lo) + "-" + hi));
    }
    return rows;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::string out = "tag,precision,recall,f1,tp,fp,fn,tn\n";
    for (const auto& r : rows) {
        out += r.tag + "," + format_real(r.precision) + "," + format_real(r.recall) + "," + format_real(r.f1) + "," +
               std::to_string(r.tp) + "," + std::to_string(r.fp) + "," + std::to_string(r.fn) + "," +
               std::to_string(r.tn) + "\n";
    }
    return out;
}

std::string roc_csv(const std::vector<RocPoint>& roc) {
    std::string out = "threshold,fpr,tpr\n";
    for (const auto& p : roc)
        out += (std::isinf(p.threshold) ? std::string("-inf") : format_real(p.threshold)) + "," + format_real(p.fpr) +
               "," + format_real(p.tpr) + "\n";
    return out;
}

std::string metric_json(const MetricRow& r) {
    nlohmann::json j{{"tag", r.tag}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
                     {"tp", r.tp},   {"fp", r.fp},               {"fn", r.fn},         {"tn", r.tn}};
    return j.dump();
}

} // namespace ctxlog
