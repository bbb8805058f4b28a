#include "doctest.h"

#include <string>
#include <vector>

#include "ctxlog/errors.hpp"
#include "ctxlog/rng.hpp"
#include "ctxlog/tokenizer.hpp"

using namespace ctxlog;

namespace {

using Merge = std::pair<TokenId, TokenId>;

std::vector<std::string> toy_corpus() {
    return {"receiving block blk_1 src /10.0.0.1", "receiving block blk_22 src /10.0.0.7",
            "served block blk_1 to /10.0.0.9", "deleting block blk_3 file /data/blk_3",
            "receiving block blk_4 src /10.0.0.3", ""};
}

} // namespace

TEST_CASE("abab trace") {
    const std::vector<std::string> corpus{"abab", "abab"};
    const auto vocab = fit_bpe(corpus, 259);
    // ab occurs 4 times; then (ab, ab) twice.
    const std::vector<Merge> expected{{'a', 'b'}, {257, 257}};
    CHECK(vocab.merges() == expected);
    CHECK(vocab.bytes_of(258) == "abab");
    const auto t = encode(vocab, "abab", 64);
    CHECK(t.ids == std::vector<TokenId>{258});
    CHECK_FALSE(t.truncated);
}

TEST_CASE("fit stops when no pair repeats") {
    const std::vector<std::string> one{"x"};
    const auto vocab = fit_bpe(one, 300);
    CHECK(vocab.merges().empty());
    CHECK(encode(vocab, "x", 64).ids.size() == 1);

    // Each pair occurs once: nothing qualifies.
    const std::vector<std::string> uniq{"abcd"};
    CHECK(fit_bpe(uniq, 300).merges().empty());
}

TEST_CASE("ties go to the smaller merged string") {
    // "ba" and "ab" both occur twice in "abab" + "ba"; counts: ab=2, ba=2.
    const std::vector<std::string> corpus{"abab", "ba"};
    const auto vocab = fit_bpe(corpus, 258);
    REQUIRE(vocab.merges().size() == 1);
    CHECK(vocab.merges()[0] == Merge{'a', 'b'});
    const std::vector<std::string> corpus2{"cdcd", "abab"};
    CHECK(fit_bpe(corpus2, 258).merges()[0] == Merge{'a', 'b'});
}

TEST_CASE("empty message is one pad") {
    const auto vocab = fit_bpe(toy_corpus(), 300);
    const auto t = encode(vocab, "", 64);
    CHECK(t.ids == std::vector<TokenId>{BpeVocab::kPad});
    CHECK_FALSE(t.truncated);
}

TEST_CASE("truncation") {
    const auto vocab = fit_bpe(toy_corpus(), 300);
    Rng rng(5);
    std::string msg;
    for (int i = 0; i < 500; ++i) msg.push_back(static_cast<char>(rng.below(256)));
    const auto t = encode(vocab, msg, 64);
    CHECK(t.ids.size() == 64);
    CHECK(t.truncated);
}

TEST_CASE("round trip on random bytes") {
    const auto vocab = fit_bpe(toy_corpus(), 320);
    Rng rng(9);
    for (int n = 0; n < 500; ++n) {
        std::string s;
        const auto len = rng.below(80);
        for (std::uint64_t i = 0; i < len; ++i) s.push_back(static_cast<char>(rng.below(256)));
        const auto ids = vocab.encode_all(s);
        CHECK(vocab.decode(ids) == s);
    }
}

TEST_CASE("fit is deterministic and serialisable") {
    const auto a = fit_bpe(toy_corpus(), 320, 1);
    const auto b = fit_bpe(toy_corpus(), 320, 2);
    CHECK(a == b);
    const auto c = BpeVocab::from_json(a.to_json());
    CHECK(c == a);
    for (const auto& m : toy_corpus()) CHECK(c.encode_all(m) == a.encode_all(m));
    CHECK_THROWS_AS(BpeVocab::from_json("{\"version\":2}"), Error);
}

TEST_CASE("vocab size at most 257 fits nothing") {
    CHECK(fit_bpe(toy_corpus(), 256).merges().empty());
    CHECK(fit_bpe(toy_corpus(), 257).merges().empty());
}

TEST_CASE("compression is monotone in vocab size") {
    const auto bases = toy_corpus();
    std::vector<std::string> corpus;
    for (int i = 0; i < 200; ++i) {
        const auto& base = bases[static_cast<std::size_t>(i) % 5];
        corpus.push_back(base + " #" + std::to_string(i));
    }
    double prev = 1e9;
    for (std::size_t v : {256u, 300u, 400u, 512u}) {
        const auto stats = compression_stats(fit_bpe(corpus, v), corpus);
        CHECK(stats.avg_tokens_per_message <= prev);
        prev = stats.avg_tokens_per_message;
    }
}

TEST_CASE("compression stats arithmetic") {
    // No merges: token count equals byte count.
    const BpeVocab bytes;
    const std::vector<std::string> corpus{"abc", "abcde"};
    const auto s = compression_stats(bytes, corpus);
    CHECK(s.avg_tokens_per_message == 4.0);
    CHECK(s.distinct_tokens_used == 5);
    CHECK(s.messages == 2);
}

TEST_CASE("empty corpus") {
    const std::vector<std::string> none;
    CHECK_THROWS_AS(fit_bpe(none, 300), CorpusEmpty);
    CHECK_THROWS_AS(compression_stats(BpeVocab{}, none), CorpusEmpty);
}
