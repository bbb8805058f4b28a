#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ctxlog/corpus.hpp"

namespace ctxlog {

enum class DefectKind { none, novel_template, rare_burst, shuffle_heavy, missing_step, msg_insert, msg_delete };

const char* to_string(DefectKind k);
DefectKind defect_from_string(const std::string& s);

// One message template: fixed phrases with {slot} placeholders.
// Slots: {blk} session block id, {ip} replica address, {dst} replication
// target, {src} client address, {nip} address from the novel-only pool,
// {port}, {size}, {int}, {user}, {k} responder index.
struct TemplateSpec {
    std::string name;
    std::string pattern;
    bool novel = false;  // never emitted by the normal state machine
};

// The normal state machine addresses templates by role, in this order.
enum TemplateRole : int {
    kOpen = 0, kReceiving, kResponder, kReceived, kStored,
    kVerifySched, kVerifyOk,
    kReplAsk, kReplStart, kReplSent, kReplRecv,
    kChecksum, kServed,
    kInvalidate, kDeleting,
    kReport,
    kRoleCount
};

struct SynthSpec {
    std::size_t n_templates = 20;
    std::size_t params_per_template = 4;
    std::vector<TemplateSpec> grammar = default_grammar();
    std::size_t n_normal_sequences = 5000;
    std::pair<std::size_t, std::size_t> sequence_len_range{5, 40};
    std::map<DefectKind, double> anomaly_mix{
        {DefectKind::novel_template, 1.0 / 3.0}, {DefectKind::msg_insert, 1.0 / 3.0}, {DefectKind::msg_delete, 1.0 / 3.0}};
    std::size_t n_abnormal_sequences = 500;
    std::uint64_t seed = 1;

    // Throws InvalidSpec.
    void validate() const;

    static std::vector<TemplateSpec> default_grammar();
};

struct SynthSequenceInfo {
    std::string id;
    Label label = Label::normal;
    DefectKind defect = DefectKind::none;
    std::vector<int> templates;  // template index per message
};

struct SynthCorpus {
    std::vector<LogRecord> records;  // chronological
    std::vector<SynthSequenceInfo> truth;
    SessionLabels labels;
};

SynthCorpus generate_corpus(const SynthSpec& spec);

// Oracle for the normal language: true iff the template sequence is one the
// normal state machine can emit.
bool accepts_normal(const std::vector<int>& templates);

// "<epoch> INFO <content>", parseable with DatasetProfile::synthetic().
std::string format_raw_line(const LogRecord& record);

// Writes <dir>/synthetic.log, <dir>/labels.csv, <dir>/dataset.jsonl and
// <dir>/defects.json.
void write_synth_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

std::vector<Sequence> synth_sequences(const SynthCorpus& corpus);

} // namespace ctxlog
