#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ctxlog {

using TokenId = std::int32_t;

// Byte-level BPE vocabulary. Ids 0..255 are raw bytes, 256 is the pad token,
// merge k produces id 257 + k.
class BpeVocab {
public:
    static constexpr TokenId kPad = 256;
    static constexpr TokenId kFirstMerge = 257;

    BpeVocab() : BpeVocab(std::vector<std::pair<TokenId, TokenId>>{}, kFirstMerge) {}
    BpeVocab(std::vector<std::pair<TokenId, TokenId>> merges, std::size_t vocab_size);

    const std::vector<std::pair<TokenId, TokenId>>& merges() const noexcept { return merges_; }
    // Total id space (embedding table rows); at least 257 + merges.
    std::size_t vocab_size() const noexcept { return vocab_size_; }
    // Ids actually produced by fitting: 256 bytes + pad + merges.
    std::size_t fitted_size() const noexcept { return kFirstMerge + merges_.size(); }
    const std::string& bytes_of(TokenId id) const { return id_to_bytes_.at(static_cast<std::size_t>(id)); }

    // Applies merges in fit order to the raw bytes of `text`.
    std::vector<TokenId> encode_all(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;

    std::string to_json() const;
    static BpeVocab from_json(std::string_view json);
    void save(const std::filesystem::path& path) const;
    static BpeVocab load(const std::filesystem::path& path);

    friend bool operator==(const BpeVocab& a, const BpeVocab& b) {
        return a.merges_ == b.merges_ && a.vocab_size_ == b.vocab_size_;
    }

private:
    static std::uint64_t pair_key(TokenId l, TokenId r) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(l)) << 32) | static_cast<std::uint32_t>(r);
    }

    std::vector<std::pair<TokenId, TokenId>> merges_;
    std::size_t vocab_size_;
    std::vector<std::string> id_to_bytes_;
    std::unordered_map<std::uint64_t, std::size_t> rank_;
};

struct TokenizedMessage {
    std::vector<TokenId> ids;
    bool truncated = false;
};

// Greedy BPE over whole messages (no whitespace pre-splitting). Stops at
// `vocab_size` total ids or when no pair occurs at least twice. Ties go to the
// lexicographically smaller merged byte string. `vocab_size` below 257 fits no
// merges.
BpeVocab fit_bpe(std::span<const std::string> corpus, std::size_t vocab_size, std::uint64_t seed = 0);

// Empty text encodes to a single pad id.
TokenizedMessage encode(const BpeVocab& vocab, std::string_view message, std::size_t max_message_len);

struct CompressionStats {
    double avg_tokens_per_message = 0.0;
    std::size_t distinct_tokens_used = 0;
    std::size_t messages = 0;
};

// Untruncated token counts.
CompressionStats compression_stats(const BpeVocab& vocab, std::span<const std::string> corpus);

} // namespace ctxlog
