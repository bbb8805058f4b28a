#include "ctxlog/tokenizer.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "json.hpp"

#include "ctxlog/errors.hpp"
#include "ctxlog/io.hpp"

namespace ctxlog {

BpeVocab::BpeVocab(std::vector<std::pair<TokenId, TokenId>> merges, std::size_t vocab_size)
    : merges_(std::move(merges)) {
    vocab_size_ = std::max<std::size_t>(vocab_size, fitted_size());
    id_to_bytes_.reserve(fitted_size());
    for (int b = 0; b < 256; ++b) id_to_bytes_.emplace_back(1, static_cast<char>(b));
    id_to_bytes_.emplace_back();  // pad
    for (std::size_t k = 0; k < merges_.size(); ++k) {
        const auto [l, r] = merges_[k];
        const auto next = static_cast<TokenId>(kFirstMerge + k);
        if (l < 0 || r < 0 || l >= next || r >= next || l == kPad || r == kPad)
            throw CorpusEmpty("vocabulary merge " + std::to_string(k) + " references an unknown id");
        id_to_bytes_.push_back(id_to_bytes_[l] + id_to_bytes_[r]);
        rank_.emplace(pair_key(l, r), k);
    }
}

std::vector<TokenId> BpeVocab::encode_all(std::string_view text) const {
    std::vector<TokenId> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
    while (ids.size() >= 2) {
        std::size_t best_rank = merges_.size();
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
            auto it = rank_.find(pair_key(ids[i], ids[i + 1]));
            if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
        }
        if (best_rank == merges_.size()) break;
        const auto [l, r] = merges_[best_rank];
        const auto merged = static_cast<TokenId>(kFirstMerge + best_rank);
        std::size_t w = 0;
        for (std::size_t i = 0; i < ids.size();) {
            if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
                ids[w++] = merged;
                i += 2;
            } else {
                ids[w++] = ids[i++];
            }
        }
        ids.resize(w);
    }
    return ids;
}

std::string BpeVocab::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (auto id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= id_to_bytes_.size())
            throw IndexOutOfRange("decode: unknown token id " + std::to_string(id));
        out += id_to_bytes_[static_cast<std::size_t>(id)];
    }
    return out;
}

std::string BpeVocab::to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    j["base"] = "bytes";
    auto merges = nlohmann::json::array();
    for (const auto& [l, r] : merges_) merges.push_back({l, r});
    j["merges"] = std::move(merges);
    j["vocab_size"] = vocab_size_;
    return j.dump();
}

BpeVocab BpeVocab::from_json(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CorpusEmpty(std::string("vocabulary file is not valid JSON: ") + e.what());
    }
    if (j.value("version", 0) != 1 || j.value("base", std::string{}) != "bytes")
        throw CorpusEmpty("vocabulary file: unsupported version or base");
    std::vector<std::pair<TokenId, TokenId>> merges;
    for (const auto& m : j.at("merges")) merges.emplace_back(m.at(0).get<TokenId>(), m.at(1).get<TokenId>());
    return BpeVocab(std::move(merges), j.at("vocab_size").get<std::size_t>());
}

void BpeVocab::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json() + "\n"); }

BpeVocab BpeVocab::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

namespace {

struct Word {
    std::vector<TokenId> ids;
    std::uint64_t count = 0;
};

std::uint64_t key(TokenId l, TokenId r) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) | static_cast<std::uint32_t>(r);
}

} // namespace

BpeVocab fit_bpe(std::span<const std::string> corpus, std::size_t vocab_size, std::uint64_t /*seed*/) {
    if (corpus.empty()) throw CorpusEmpty("fit_bpe: empty corpus");

    // Unique messages with multiplicities, in sorted order for determinism.
    std::map<std::string, std::uint64_t> counts;
    for (const auto& m : corpus) ++counts[m];
    std::vector<Word> words;
    words.reserve(counts.size());
    for (const auto& [text, c] : counts) {
        Word w;
        w.count = c;
        for (unsigned char ch : text) w.ids.push_back(static_cast<TokenId>(ch));
        words.push_back(std::move(w));
    }

    std::vector<std::string> bytes;
    for (int b = 0; b < 256; ++b) bytes.emplace_back(1, static_cast<char>(b));
    bytes.emplace_back();

    // Pair counts weighted by message multiplicity, and for each pair the
    // words that may contain it (stale and repeated entries are tolerated).
    std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where;
    auto count_pairs = [&](std::size_t wi, std::int64_t sign, TokenId only_with) {
        const auto& w = words[wi];
        for (std::size_t i = 0; i + 1 < w.ids.size(); ++i) {
            const auto k = key(w.ids[i], w.ids[i + 1]);
            pair_counts[k] += sign * static_cast<std::int64_t>(w.count);
            if (sign > 0 && (only_with < 0 || w.ids[i] == only_with || w.ids[i + 1] == only_with))
                where[k].push_back(static_cast<std::uint32_t>(wi));
        }
    };
    for (std::size_t wi = 0; wi < words.size(); ++wi) count_pairs(wi, +1, -1);

    std::vector<std::pair<TokenId, TokenId>> merges;
    const std::size_t target_merges = vocab_size > BpeVocab::kFirstMerge ? vocab_size - BpeVocab::kFirstMerge : 0;
    while (merges.size() < target_merges) {
        std::uint64_t best = 0;
        std::int64_t best_count = 1;  // needs >= 2
        std::string best_bytes;
        bool found = false;
        for (const auto& [k, c] : pair_counts) {
            if (c < 2 || c < best_count) continue;
            const auto l = static_cast<TokenId>(k >> 32), r = static_cast<TokenId>(k & 0xffffffffu);
            if (found && c == best_count) {
                // Tie: lexicographically smaller merged bytes, then smaller key.
                const std::string merged = bytes[l] + bytes[r];
                if (merged > best_bytes || (merged == best_bytes && k > best)) continue;
                best_bytes = merged;
            } else {
                best_bytes = bytes[l] + bytes[r];
            }
            best = k;
            best_count = c;
            found = true;
        }
        if (!found) break;
        const auto l = static_cast<TokenId>(best >> 32), r = static_cast<TokenId>(best & 0xffffffffu);
        const auto id = static_cast<TokenId>(BpeVocab::kFirstMerge + merges.size());
        merges.emplace_back(l, r);
        bytes.push_back(best_bytes);

        std::vector<std::uint32_t> affected = std::move(where[best]);
        where.erase(best);
        std::sort(affected.begin(), affected.end());
        affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
        for (auto wi : affected) {
            auto& ids = words[wi].ids;
            bool present = false;
            for (std::size_t i = 0; i + 1 < ids.size() && !present; ++i) present = ids[i] == l && ids[i + 1] == r;
            if (!present) continue;
            count_pairs(wi, -1, -1);
            std::size_t w = 0;
            for (std::size_t i = 0; i < ids.size();) {
                if (i + 1 < ids.size() && ids[i] == l && ids[i + 1] == r) {
                    ids[w++] = id;
                    i += 2;
                } else {
                    ids[w++] = ids[i++];
                }
            }
            ids.resize(w);
            count_pairs(wi, +1, id);
        }
        for (auto it = pair_counts.begin(); it != pair_counts.end();) {
            if (it->second <= 0) {
                where.erase(it->first);
                it = pair_counts.erase(it);
            } else {
                ++it;
            }
        }
    }
    return BpeVocab(std::move(merges), std::max<std::size_t>(vocab_size, BpeVocab::kFirstMerge));
}

TokenizedMessage encode(const BpeVocab& vocab, std::string_view message, std::size_t max_message_len) {
    TokenizedMessage out;
    if (message.empty()) {
        out.ids.push_back(BpeVocab::kPad);
        return out;
    }
    out.ids = vocab.encode_all(message);
    if (max_message_len > 0 && out.ids.size() > max_message_len) {
        out.ids.resize(max_message_len);
        out.truncated = true;
    }
    return out;
}

CompressionStats compression_stats(const BpeVocab& vocab, std::span<const std::string> corpus) {
    if (corpus.empty()) throw CorpusEmpty("compression_stats: empty corpus");
    CompressionStats s;
    std::set<TokenId> used;
    std::uint64_t total = 0;
    for (const auto& m : corpus) {
        auto t = encode(vocab, m, 0);
        total += t.ids.size();
        used.insert(t.ids.begin(), t.ids.end());
    }
    s.messages = corpus.size();
    s.avg_tokens_per_message = static_cast<double>(total) / static_cast<double>(corpus.size());
    s.distinct_tokens_used = used.size();
    return s;
}

} // namespace ctxlog
