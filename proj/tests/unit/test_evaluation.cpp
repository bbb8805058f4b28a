#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ctxlog/errors.hpp"
#include "ctxlog/evaluation.hpp"
#include "ctxlog/rng.hpp"
#include "ctxlog/words.hpp"

using namespace ctxlog;

namespace {

constexpr Label N = Label::normal;
constexpr Label A = Label::abnormal;

Sequence make_seq(std::size_t n) {
    Sequence s;
    s.id = "blk_9";
    for (std::size_t i = 0; i < n; ++i) s.messages.push_back("step " + std::to_string(i) + " of block blk_9 ok");
    return s;
}

std::vector<ScoreVector> random_scores(std::size_t m, std::uint64_t seed, double shift = 0.0) {
    Rng rng(seed);
    std::vector<ScoreVector> out;
    for (std::size_t i = 0; i < m; ++i)
        out.push_back({rng.uniform() + shift, rng.uniform(), rng.uniform() + shift, rng.uniform()});
    return out;
}

} // namespace

TEST_CASE("prf1 arithmetic") {
    const std::vector<Label> labels{A, A, A, A, N, N};
    const std::vector<Label> preds{A, A, A, N, A, N};
    const auto r = prf1(labels, preds);
    CHECK(r.tp == 3);
    CHECK(r.fp == 1);
    CHECK(r.fn == 1);
    CHECK(r.tn == 1);
    CHECK(r.precision == 0.75);
    CHECK(r.recall == 0.75);
    CHECK(r.f1 == 0.75);

    const std::vector<Label> none(6, N);
    const auto z = prf1(labels, none);
    CHECK(z.precision == 0.0);
    CHECK(z.f1 == 0.0);
    const auto p = prf1(labels, labels);
    CHECK(p.precision == 1.0);
    CHECK(p.recall == 1.0);
    CHECK(p.f1 == 1.0);
    CHECK_THROWS_AS(prf1(labels, std::vector<Label>{A}), LengthMismatch);
}

TEST_CASE("ablation grid") {
    const auto cal = random_scores(100, 1);
    auto test = random_scores(40, 2);
    const auto more = random_scores(40, 3, 0.8);
    test.insert(test.end(), more.begin(), more.end());
    std::vector<Label> labels(40, N);
    labels.resize(80, A);
    const auto base = fit_calibration(cal);
    const auto grid = ablation_grid(base, cal, test, labels);
    REQUIRE(grid.size() == 15);
    CHECK(grid[0].tag == "context_mean");
    CHECK(grid[14].tag == "point_max+point_mean+context_max+context_mean");

    // Single-feature rows equal thresholding that feature's robust z directly.
    const std::pair<std::size_t, std::size_t> singles[] = {{0, 3}, {1, 2}, {3, 1}, {7, 0}};
    for (auto [row, f] : singles) {
        std::vector<double> rz_cal;
        for (const auto& y : cal) rz_cal.push_back(robust_z(y, base).rz[f]);
        const double theta = nearest_rank(rz_cal, base.percentile);
        std::vector<Label> direct;
        for (const auto& y : test) direct.push_back(robust_z(y, base).rz[f] > theta ? A : N);
        const auto expect = prf1(labels, direct);
        CHECK(grid[row].tp == expect.tp);
        CHECK(grid[row].fp == expect.fp);
        CHECK(grid[row].f1 == expect.f1);
    }
}

TEST_CASE("roc curve endpoints") {
    const std::vector<double> scores{0.1, 0.9, 0.5, 0.5, 0.3};
    const std::vector<Label> labels{N, A, A, N, A};
    const auto roc = roc_curve(scores, labels);
    CHECK(roc.front().fpr == 0.0);
    CHECK(roc.front().tpr == 0.0);
    CHECK(roc.back().fpr == 1.0);
    CHECK(roc.back().tpr == 1.0);
    CHECK(roc.size() == 5);  // 4 distinct scores plus -inf
    for (std::size_t i = 1; i < roc.size(); ++i) {
        CHECK(roc[i].fpr >= roc[i - 1].fpr);
        CHECK(roc[i].tpr >= roc[i - 1].tpr);
    }
}

TEST_CASE("threshold sweep") {
    const auto cal = random_scores(100, 4);
    auto test = random_scores(30, 5);
    const auto more = random_scores(30, 6, 0.5);
    test.insert(test.end(), more.begin(), more.end());
    std::vector<Label> labels(30, N);
    labels.resize(60, A);
    const auto base = fit_calibration(cal);
    const std::vector<double> ps{90, 95, 99, 100};
    const auto sweep = threshold_sweep(base, cal, test, labels, ps);
    REQUIRE(sweep.rows.size() == 4);
    CHECK(sweep.thresholds[0] <= sweep.thresholds[1]);
    CHECK(sweep.thresholds[1] <= sweep.thresholds[2]);

    // p = 100: recall is the share of abnormal scores above the calibration maximum.
    double cal_max = 0;
    for (const auto& y : cal) cal_max = std::max(cal_max, anomaly_score(y, base));
    std::size_t above = 0;
    for (std::size_t i = 30; i < 60; ++i) above += anomaly_score(test[i], base) > cal_max;
    CHECK(sweep.rows[3].recall == static_cast<double>(above) / 30.0);
    CHECK(sweep.rows[1].tag == "p95");
}

TEST_CASE("perturbation identity and guards") {
    const auto s = make_seq(6);
    const std::vector<std::string> pool{"foreign message"};
    const auto words = WordPool::from_sequences({s});
    const PerturbSources src{&pool, &words};
    for (auto kind : all_perturb_kinds()) {
        const auto out = perturb_sequence(s, {kind, 0, 0.5, 3}, src);
        CHECK(out.messages == s.messages);
        CHECK(out.id == s.id);
    }
    CHECK_THROWS_AS(perturb_sequence(s, {PerturbKind::msg_delete, 6, 0.1, 1}), InvalidMagnitude);
    CHECK(perturb_sequence(s, {PerturbKind::msg_delete, 5, 0.1, 1}).messages.size() == 1);
    CHECK_THROWS_AS(perturb_sequence(s, {PerturbKind::msg_insert, 1, 0.1, 1}), InsufficientData);
}

TEST_CASE("message-level perturbations") {
    const auto s = make_seq(8);
    const std::vector<std::string> pool{"foreign message"};
    const PerturbSources src{&pool, nullptr};

    const auto moved = perturb_sequence(s, {PerturbKind::msg_move, 2, 0.1, 7});
    auto a = moved.messages, b = s.messages;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
    CHECK(moved.messages != s.messages);

    const auto ins = perturb_sequence(s, {PerturbKind::msg_insert, 3, 0.1, 7}, src);
    CHECK(ins.messages.size() == 11);
    CHECK(std::count(ins.messages.begin(), ins.messages.end(), "foreign message") == 3);

    // Same seed: both duplicate variants copy the same source messages.
    const auto d1 = perturb_sequence(s, {PerturbKind::msg_duplicate, 3, 0.1, 9});
    const auto d2 = perturb_sequence(s, {PerturbKind::msg_duplicate_adjacent, 3, 0.1, 9});
    auto m1 = d1.messages, m2 = d2.messages;
    std::sort(m1.begin(), m1.end());
    std::sort(m2.begin(), m2.end());
    CHECK(m1 == m2);
    CHECK(d1.messages.size() == 11);
    // Adjacent copies sit right after an equal message.
    std::size_t adjacent_pairs = 0;
    for (std::size_t i = 1; i < d2.messages.size(); ++i) adjacent_pairs += d2.messages[i] == d2.messages[i - 1];
    CHECK(adjacent_pairs == 3);
}

TEST_CASE("word-level perturbations") {
    Sequence one;
    one.messages = {"solo"};
    CHECK(perturb_sequence(one, {PerturbKind::word_delete, 3, 1.0, 1}).messages[0] == "solo");

    const auto s = make_seq(10);
    const auto del = perturb_sequence(s, {PerturbKind::word_delete, 2, 0.2, 5});
    std::size_t changed = 0;
    for (std::size_t i = 0; i < s.messages.size(); ++i)
        if (del.messages[i] != s.messages[i]) {
            ++changed;
            CHECK(split_words(del.messages[i]).size() == split_words(s.messages[i]).size() - 2);
        }
    CHECK(changed == 2);

    const auto add = perturb_sequence(s, {PerturbKind::word_add_random, 4, 1.0, 5});
    for (std::size_t i = 0; i < s.messages.size(); ++i)
        CHECK(split_words(add.messages[i]).size() == split_words(s.messages[i]).size() + 4);

    const auto pool = WordPool::from_sequences({s});
    const auto corp = perturb_sequence(s, {PerturbKind::word_add_corpus, 2, 0.5, 5}, {nullptr, &pool});
    std::set<std::string> known;
    for (const auto& m : s.messages)
        for (const auto& w : split_words(m)) known.insert(w);
    for (const auto& m : corp.messages)
        for (const auto& w : split_words(m)) CHECK(known.count(w) == 1);

    const auto mv = perturb_sequence(s, {PerturbKind::word_move, 1, 1.0, 5});
    for (std::size_t i = 0; i < s.messages.size(); ++i) {
        auto x = split_words(mv.messages[i]), y = split_words(s.messages[i]);
        std::sort(x.begin(), x.end());
        std::sort(y.begin(), y.end());
        CHECK(x == y);
    }

    const auto dup = perturb_sequence(s, {PerturbKind::word_duplicate, 2, 1.0, 5});
    CHECK(split_words(dup.messages[0]).size() == split_words(s.messages[0]).size() + 2);
}

TEST_CASE("split words") {
    CHECK(split_words("  a\tbb  c\n") == std::vector<std::string>{"a", "bb", "c"});
    CHECK(split_words("   ").empty());
}

TEST_CASE("common words asset") {
    CHECK(common_words().size() == 1000);
    CHECK(common_words_checksum() == kCommonWordsChecksum);
    std::ifstream in(std::string(CTXLOG_SOURCE_DIR) + "/assets/common_words_en.txt", std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    CHECK(buf.str() == common_words_text());
}

TEST_CASE("length buckets") {
    const std::vector<Label> labels{N, A, A, N, A, N};
    const std::vector<Label> preds{N, A, N, A, A, N};
    const std::vector<std::size_t> lengths{3, 5, 12, 40, 8, 11};
    const auto all = f1_by_length_bucket(labels, preds, lengths, {{1, 1000}});
    REQUIRE(all.size() == 1);
    const auto overall = prf1(labels, preds);
    CHECK(all[0].f1 == overall.f1);
    CHECK(all[0].tp == overall.tp);

    const auto split = f1_by_length_bucket(labels, preds, lengths, {{1, 10}, {11, 256}, {300, 400}});
    REQUIRE(split.size() == 2);
    CHECK(split[0].tp + split[1].tp == overall.tp);
    CHECK(split[0].fp + split[1].fp == overall.fp);
    CHECK(split[0].fn + split[1].fn == overall.fn);
    CHECK(split[0].tn + split[1].tn == overall.tn);
    CHECK(split[1].tag == "11-256");
}

TEST_CASE("csv writers") {
    MetricRow r;
    r.tag = "x";
    r.precision = 0.5;
    CHECK(metrics_csv({r}) == "tag,precision,recall,f1,tp,fp,fn,tn\nx,0.5,0,0,0,0,0,0\n");
    const std::vector<RocPoint> roc{{1.0, 0.0, 0.0}, {-std::numeric_limits<double>::infinity(), 1.0, 1.0}};
    CHECK(roc_csv(roc) == "threshold,fpr,tpr\n1,0,0\n-inf,1,1\n");
}
