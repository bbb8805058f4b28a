#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <unistd.h>

#include "ctxlog/errors.hpp"
#include "ctxlog/io.hpp"
#include "ctxlog/synth.hpp"

using namespace ctxlog;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec(std::uint64_t seed = 1) {
    SynthSpec s;
    s.n_normal_sequences = 200;
    s.n_abnormal_sequences = 30;
    s.seed = seed;
    return s;
}

std::string raw_text(const SynthCorpus& c) {
    std::string out;
    for (const auto& r : c.records) out += format_raw_line(r) + "\n";
    return out;
}

std::set<int> novel_indices(const SynthSpec& s) {
    std::set<int> out;
    for (std::size_t i = 0; i < s.grammar.size(); ++i)
        if (s.grammar[i].novel) out.insert(static_cast<int>(i));
    return out;
}

} // namespace

TEST_CASE("generation is deterministic") {
    const auto a = generate_corpus(small_spec(1));
    const auto b = generate_corpus(small_spec(1));
    CHECK(raw_text(a) == raw_text(b));
    CHECK(raw_text(a) != raw_text(generate_corpus(small_spec(2))));
}

TEST_CASE("timestamps strictly increase") {
    const auto c = generate_corpus(small_spec());
    for (std::size_t i = 1; i < c.records.size(); ++i) CHECK(c.records[i].timestamp > c.records[i - 1].timestamp);
}

TEST_CASE("normal language oracle") {
    const auto spec = small_spec();
    const auto c = generate_corpus(spec);
    std::size_t normal = 0, abnormal = 0;
    for (const auto& t : c.truth) {
        if (t.label == Label::normal) {
            ++normal;
            CHECK(accepts_normal(t.templates));
            CHECK(t.templates.size() >= spec.sequence_len_range.first);
            CHECK(t.templates.size() <= spec.sequence_len_range.second);
        } else {
            ++abnormal;
            CHECK_FALSE(accepts_normal(t.templates));
            CHECK(t.defect != DefectKind::none);
        }
    }
    CHECK(normal == 200);
    CHECK(abnormal == 30);
    CHECK_FALSE(accepts_normal({}));
}

TEST_CASE("novel-template anomalies") {
    auto spec = small_spec();
    spec.anomaly_mix = {{DefectKind::novel_template, 1.0}};
    const auto c = generate_corpus(spec);
    const auto novel = novel_indices(spec);
    REQUIRE_FALSE(novel.empty());
    for (const auto& t : c.truth) {
        bool has_novel = false;
        for (int k : t.templates) has_novel |= novel.count(k) == 1;
        CHECK(has_novel == (t.label == Label::abnormal));
    }
}

TEST_CASE("each defect kind is outside the normal language") {
    for (auto kind : {DefectKind::novel_template, DefectKind::rare_burst, DefectKind::shuffle_heavy,
                      DefectKind::missing_step, DefectKind::msg_insert, DefectKind::msg_delete}) {
        auto spec = small_spec(7);
        spec.n_normal_sequences = 50;
        spec.n_abnormal_sequences = 20;
        spec.anomaly_mix = {{kind, 1.0}};
        const auto c = generate_corpus(spec);
        for (const auto& t : c.truth)
            if (t.label == Label::abnormal) {
                CHECK(t.defect == kind);
                CHECK_FALSE(accepts_normal(t.templates));
            }
    }
}

TEST_CASE("sequences follow the records") {
    const auto c = generate_corpus(small_spec());
    const auto seqs = synth_sequences(c);
    CHECK(seqs.size() == c.truth.size());
    std::map<std::string, const SynthSequenceInfo*> by_id;
    for (const auto& t : c.truth) by_id[t.id] = &t;
    for (const auto& s : seqs) {
        REQUIRE(by_id.count(s.id) == 1);
        CHECK(s.label == by_id[s.id]->label);
        CHECK(s.messages.size() == by_id[s.id]->templates.size());
    }
}

TEST_CASE("desk-scale corpus counts") {
    SynthSpec spec;  // 5000 normal + 500 abnormal
    const auto c = generate_corpus(spec);
    const auto dir = fs::temp_directory_path() / ("ctxlog_synth_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    write_synth_corpus(c, dir);

    // Count lines and labels straight from the file, independent of the reader.
    std::ifstream in(dir / "dataset.jsonl");
    std::string line;
    std::size_t lines = 0, abnormal = 0;
    while (std::getline(in, line)) {
        ++lines;
        abnormal += line.find("\"label\":\"abnormal\"") != std::string::npos;
    }
    CHECK(lines == 5500);
    CHECK(abnormal == 500);

    // The raw log parses back into the same sequences.
    const auto table = read_session_labels(dir / "labels.csv");
    const auto parsed = parse_log_file(dir / "synthetic.log", DatasetProfile::synthetic(), &table);
    CHECK(parsed.malformed == 0);
    CHECK(parsed.records.size() == c.records.size());
    const auto seqs = build_sequences(parsed.records, DatasetProfile::synthetic());
    CHECK(seqs.size() == 5500);
    CHECK(read_file(dir / "defects.json").find("\"novel_template\"") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("invalid specs") {
    auto s = small_spec();
    s.grammar.clear();
    CHECK_THROWS_AS(s.validate(), InvalidSpec);
    s = small_spec();
    s.n_normal_sequences = 0;
    s.n_abnormal_sequences = 0;
    CHECK_THROWS_AS(generate_corpus(s), InvalidSpec);
    s = small_spec();
    s.anomaly_mix = {{DefectKind::novel_template, 0.5}};
    CHECK_THROWS_AS(s.validate(), InvalidSpec);
    CHECK_THROWS_AS(defect_from_string("bogus"), InvalidSpec);
}
