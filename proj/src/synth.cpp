#include "ctxlog/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"

#include "ctxlog/errors.hpp"
#include "ctxlog/io.hpp"
#include "ctxlog/rng.hpp"

namespace ctxlog {

namespace {

constexpr std::pair<DefectKind, const char*> kDefectNames[] = {
    {DefectKind::none, "none"},
    {DefectKind::novel_template, "novel_template"},
    {DefectKind::rare_burst, "rare_burst"},
    {DefectKind::shuffle_heavy, "shuffle_heavy"},
    {DefectKind::missing_step, "missing_step"},
    {DefectKind::msg_insert, "msg_insert"},
    {DefectKind::msg_delete, "msg_delete"},
};

constexpr int kMinReplicas = 2;
constexpr int kMaxReplicas = 3;
constexpr int kMaxReads = 2;
constexpr std::int64_t kEpochStart = 1700000000;

const char* const kUsers[] = {"alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"};

} // namespace

const char* to_string(DefectKind k) {
    for (const auto& [kind, name] : kDefectNames)
        if (kind == k) return name;
    return "none";
}

DefectKind defect_from_string(const std::string& s) {
    for (const auto& [kind, name] : kDefectNames)
        if (s == name) return kind;
    throw InvalidSpec("unknown defect kind '" + s + "'");
}

std::vector<TemplateSpec> SynthSpec::default_grammar() {
    return {
        {"open", "Allocating block {blk} for /user/{user}/job_{int}/part-{int}", false},
        {"receiving", "Receiving block {blk} src: /{src}:{port} dest: /{ip}:50010", false},
        {"responder", "PacketResponder {k} for block {blk} terminating", false},
        {"received", "Received block {blk} of size {size} from /{ip}", false},
        {"stored", "BLOCK* NameSystem.addStoredBlock: blockMap updated: {ip}:50010 is added to {blk} size {size}", false},
        {"verify_sched", "Scheduled block {blk} for verification in {int} ms", false},
        {"verify_ok", "Verification succeeded for {blk}", false},
        {"repl_ask", "BLOCK* ask {ip}:50010 to replicate {blk} to datanode(s) {dst}:50010", false},
        {"repl_start", "{ip}:50010 Starting thread to transfer block {blk} to {dst}:50010", false},
        {"repl_sent", "{ip}:50010:Transmitted block {blk} to /{dst}:50010", false},
        {"repl_recv", "Received block {blk} src: /{ip}:{port} dest: /{dst}:50010 of size {size}", false},
        {"checksum", "Got checksum request for {blk} from /{src}", false},
        {"served", "{ip}:50010 Served block {blk} to /{src}", false},
        {"invalidate", "BLOCK* NameSystem.delete: {blk} is added to invalidSet of {ip}:50010", false},
        {"deleting", "Deleting block {blk} file /mnt/hadoop/dfs/data/current/subdir{int}/{blk}", false},
        {"report", "BLOCK* NameSystem.blockReport: from {ip}:50010 lists {blk} generation {int}", false},
        {"recv_exception", "Exception in receiveBlock for block {blk} java.io.IOException: Connection reset by peer /{nip}", true},
        {"repl_timeout", "PendingReplicationMonitor timed out block {blk} on {nip}:50010", true},
        {"delete_missing", "Unexpected error trying to delete block {blk}. BlockInfo not found in volumeMap of {nip}", true},
        {"write_eof", "writeBlock {blk} received exception java.io.EOFException while serving /{nip}", true},
    };
}

void SynthSpec::validate() const {
    if (grammar.empty()) throw InvalidSpec("empty grammar");
    if (grammar.size() != n_templates)
        throw InvalidSpec("n_templates=" + std::to_string(n_templates) + " but grammar has " +
                          std::to_string(grammar.size()) + " templates");
    if (grammar.size() < static_cast<std::size_t>(kRoleCount))
        throw InvalidSpec("grammar must define the " + std::to_string(kRoleCount) + " state-machine roles");
    for (int i = 0; i < kRoleCount; ++i)
        if (grammar[static_cast<std::size_t>(i)].novel)
            throw InvalidSpec("template " + std::to_string(i) + " is a state-machine role and cannot be novel");
    bool any_novel = false;
    for (const auto& t : grammar) {
        if (t.pattern.empty()) throw InvalidSpec("template " + t.name + " has an empty pattern");
        std::size_t slots = 0;
        for (char c : t.pattern) slots += c == '{';
        if (slots > params_per_template + 2)  // {blk} appears in every template and may repeat
            throw InvalidSpec("template " + t.name + " exceeds params_per_template");
        if (t.pattern.find("{blk}") == std::string::npos)
            throw InvalidSpec("template " + t.name + " must reference {blk}");
        any_novel |= t.novel;
    }
    if (n_normal_sequences == 0 && n_abnormal_sequences == 0) throw InvalidSpec("zero sequences");
    if (n_normal_sequences == 0) throw InvalidSpec("n_normal_sequences must be positive");
    if (sequence_len_range.first < 1 || sequence_len_range.first > sequence_len_range.second)
        throw InvalidSpec("invalid sequence_len_range");
    if (n_abnormal_sequences > 0) {
        double sum = 0.0;
        for (const auto& [k, f] : anomaly_mix) {
            if (k == DefectKind::none) throw InvalidSpec("anomaly_mix cannot contain 'none'");
            if (!(f >= 0.0)) throw InvalidSpec("anomaly_mix fractions must be non-negative");
            if (k == DefectKind::novel_template && f > 0.0 && !any_novel)
                throw InvalidSpec("novel_template anomalies need at least one novel template");
            sum += f;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw InvalidSpec("anomaly_mix fractions must sum to 1");
    }
}

bool accepts_normal(const std::vector<int>& t) {
    std::size_t i = 0;
    auto at = [&](std::size_t k) { return k < t.size() ? t[k] : -1; };
    auto run = [&](int role) {
        std::size_t n = 0;
        while (at(i) == role) ++i, ++n;
        return n;
    };
    if (at(i++) != kOpen) return false;
    const std::size_t r = run(kReceiving);
    if (r < kMinReplicas || r > kMaxReplicas) return false;
    if (run(kResponder) != r || run(kReceived) != r || run(kStored) != r) return false;
    if (at(i) == kVerifySched) {
        if (at(i + 1) != kVerifyOk) return false;
        i += 2;
    }
    if (at(i) == kReplAsk) {
        if (at(i + 1) != kReplStart || at(i + 2) != kReplSent || at(i + 3) != kReplRecv) return false;
        i += 4;
    }
    int reads = 0;
    while (at(i) == kChecksum) {
        if (at(i + 1) != kServed || ++reads > kMaxReads) return false;
        i += 2;
    }
    if (at(i) == kInvalidate) {
        if (run(kInvalidate) != r || run(kDeleting) != r) return false;
    }
    if (at(i) == kReport) ++i;
    return i == t.size();
}

namespace {

struct Session {
    std::string blk;
    std::string src;
    std::string dst;
    std::vector<std::string> replicas;
    std::string size;
    std::string user;
};

struct Msg {
    int tmpl;
    int replica;  // index into Session::replicas, -1 when not replica-bound
};

class Generator {
public:
    explicit Generator(const SynthSpec& spec) : spec_(spec), rng_(derive_seed(spec.seed, "synth")) {
        for (std::size_t i = 0; i < spec.grammar.size(); ++i)
            if (spec.grammar[i].novel) novel_.push_back(static_cast<int>(i));
    }

    Session new_session() {
        Session s;
        std::string id;
        do {
            id = "blk_" + std::to_string(rng_.range(100000000000LL, 999999999999LL));
        } while (!used_ids_.insert(id).second);
        s.blk = id;
        s.src = normal_ip();
        const int r = static_cast<int>(rng_.range(kMinReplicas, kMaxReplicas));
        std::set<std::string> picked;
        while (static_cast<int>(s.replicas.size()) < r) {
            auto ip = normal_ip();
            if (picked.insert(ip).second) s.replicas.push_back(ip);
        }
        do {
            s.dst = normal_ip();
        } while (picked.count(s.dst));
        s.size = std::to_string(rng_.range(1024, 65536));
        s.user = kUsers[rng_.below(std::size(kUsers))];
        return s;
    }

    std::vector<Msg> normal_path(const Session& s) {
        const int r = static_cast<int>(s.replicas.size());
        std::vector<Msg> m;
        m.push_back({kOpen, -1});
        for (int k = 0; k < r; ++k) m.push_back({kReceiving, k});
        for (int k = r - 1; k >= 0; --k) m.push_back({kResponder, k});
        for (int k = 0; k < r; ++k) m.push_back({kReceived, k});
        for (int k = 0; k < r; ++k) m.push_back({kStored, k});
        if (rng_.uniform() < 0.35) {
            m.push_back({kVerifySched, 0});
            m.push_back({kVerifyOk, -1});
        }
        if (rng_.uniform() < 0.30) {
            for (int t : {kReplAsk, kReplStart, kReplSent, kReplRecv}) m.push_back({t, 0});
        }
        const auto reads = rng_.below(kMaxReads + 1);
        for (std::uint64_t k = 0; k < reads; ++k) {
            const int rep = static_cast<int>(rng_.below(static_cast<std::uint64_t>(r)));
            m.push_back({kChecksum, rep});
            m.push_back({kServed, rep});
        }
        if (rng_.uniform() < 0.40) {
            for (int k = 0; k < r; ++k) m.push_back({kInvalidate, k});
            for (int k = 0; k < r; ++k) m.push_back({kDeleting, k});
        }
        if (rng_.uniform() < 0.25) m.push_back({kReport, 0});
        return m;
    }

    // Applies `kind` until the result leaves the normal language.
    std::vector<Msg> inject(const Session& s, std::vector<Msg> base, DefectKind kind) {
        const int r = static_cast<int>(s.replicas.size());
        for (int attempt = 0; attempt < 1000; ++attempt) {
            std::vector<Msg> m = base;
            switch (kind) {
            case DefectKind::novel_template: {
                const int t = novel_[rng_.below(novel_.size())];
                const auto pos = rng_.below(m.size() + 1);
                if (rng_.uniform() < 0.5 && m.size() > 1)
                    m[std::min<std::size_t>(pos, m.size() - 1)] = {t, -1};
                else
                    m.insert(m.begin() + static_cast<std::ptrdiff_t>(pos), Msg{t, -1});
                break;
            }
            case DefectKind::msg_insert: {
                const int t = static_cast<int>(rng_.below(kRoleCount));
                const auto pos = rng_.below(m.size() + 1);
                m.insert(m.begin() + static_cast<std::ptrdiff_t>(pos),
                         Msg{t, static_cast<int>(rng_.below(static_cast<std::uint64_t>(r)))});
                break;
            }
            case DefectKind::msg_delete: {
                if (m.size() <= 1) break;
                m.erase(m.begin() + static_cast<std::ptrdiff_t>(rng_.below(m.size())));
                break;
            }
            case DefectKind::missing_step: {
                const int role = static_cast<int>(rng_.range(kReceiving, kStored));
                std::erase_if(m, [&](const Msg& x) { return x.tmpl == role; });
                break;
            }
            case DefectKind::rare_burst: {
                const auto burst = rng_.range(4, 7);
                const auto pos = 1 + rng_.below(m.size());
                const int rep = static_cast<int>(rng_.below(static_cast<std::uint64_t>(r)));
                for (std::int64_t k = 0; k < burst; ++k)
                    m.insert(m.begin() + static_cast<std::ptrdiff_t>(pos), Msg{kReport, rep});
                break;
            }
            case DefectKind::shuffle_heavy:
                rng_.shuffle(m);
                break;
            case DefectKind::none:
                return m;
            }
            if (m.empty() || m.size() > spec_.sequence_len_range.second) continue;
            std::vector<int> t;
            for (const auto& x : m) t.push_back(x.tmpl);
            if (!accepts_normal(t)) return m;
        }
        throw InvalidSpec(std::string("could not inject defect ") + to_string(kind));
    }

    std::string render(const Session& s, const Msg& m) {
        const std::string& pat = spec_.grammar[static_cast<std::size_t>(m.tmpl)].pattern;
        std::string out;
        for (std::size_t i = 0; i < pat.size();) {
            if (pat[i] != '{') {
                out += pat[i++];
                continue;
            }
            const auto close = pat.find('}', i);
            if (close == std::string::npos) throw InvalidSpec("unterminated slot in " + pat);
            const std::string slot = pat.substr(i + 1, close - i - 1);
            i = close + 1;
            const int rep = m.replica >= 0 ? m.replica : 0;
            if (slot == "blk") out += s.blk;
            else if (slot == "ip") out += s.replicas[static_cast<std::size_t>(rep) % s.replicas.size()];
            else if (slot == "dst") out += s.dst;
            else if (slot == "src") out += s.src;
            else if (slot == "nip") out += novel_ip();
            else if (slot == "port") out += std::to_string(rng_.range(30000, 60999));
            else if (slot == "size") out += s.size;
            else if (slot == "int") out += std::to_string(rng_.range(0, 63));
            else if (slot == "user") out += s.user;
            else if (slot == "k") out += std::to_string(rep);
            else throw InvalidSpec("unknown slot {" + slot + "}");
        }
        return out;
    }

    Rng& rng() { return rng_; }

private:
    std::string normal_ip() {
        return "10.250." + std::to_string(rng_.range(0, 15)) + "." + std::to_string(rng_.range(2, 254));
    }
    std::string novel_ip() {
        return "172.16." + std::to_string(rng_.range(0, 15)) + "." + std::to_string(rng_.range(2, 254));
    }

    const SynthSpec& spec_;
    Rng rng_;
    std::vector<int> novel_;
    std::set<std::string> used_ids_;
};

} // namespace

SynthCorpus generate_corpus(const SynthSpec& spec) {
    spec.validate();
    Generator gen(spec);

    // Defect kinds by largest-remainder apportionment, then shuffled.
    std::vector<DefectKind> kinds(spec.n_normal_sequences, DefectKind::none);
    if (spec.n_abnormal_sequences > 0) {
        std::vector<std::pair<DefectKind, double>> mix(spec.anomaly_mix.begin(), spec.anomaly_mix.end());
        std::vector<std::size_t> counts(mix.size());
        std::vector<std::pair<double, std::size_t>> remainders;
        std::size_t assigned = 0;
        for (std::size_t i = 0; i < mix.size(); ++i) {
            const double exact = mix[i].second * static_cast<double>(spec.n_abnormal_sequences);
            counts[i] = static_cast<std::size_t>(std::floor(exact));
            assigned += counts[i];
            remainders.emplace_back(-(exact - std::floor(exact)), i);
        }
        std::sort(remainders.begin(), remainders.end());
        for (std::size_t k = 0; assigned < spec.n_abnormal_sequences; ++k, ++assigned)
            ++counts[remainders[k % remainders.size()].second];
        for (std::size_t i = 0; i < mix.size(); ++i) kinds.insert(kinds.end(), counts[i], mix[i].first);
    }
    gen.rng().shuffle(kinds);

    SynthCorpus out;
    std::int64_t clock = kEpochStart;
    for (DefectKind kind : kinds) {
        Session s;
        std::vector<Msg> msgs;
        for (int attempt = 0;; ++attempt) {
            s = gen.new_session();
            msgs = gen.normal_path(s);
            if (msgs.size() >= spec.sequence_len_range.first && msgs.size() <= spec.sequence_len_range.second) break;
            if (attempt > 1000) throw InvalidSpec("sequence_len_range cannot be satisfied by the state machine");
        }
        if (kind != DefectKind::none) msgs = gen.inject(s, std::move(msgs), kind);

        SynthSequenceInfo info;
        info.id = s.blk;
        info.label = kind == DefectKind::none ? Label::normal : Label::abnormal;
        info.defect = kind;
        for (const auto& m : msgs) {
            LogRecord rec;
            clock += 1 + static_cast<std::int64_t>(gen.rng().below(3));
            rec.timestamp = clock;
            rec.label = info.label;
            rec.session_key = s.blk;
            rec.content = gen.render(s, m);
            out.records.push_back(std::move(rec));
            info.templates.push_back(m.tmpl);
        }
        out.labels[info.id] = info.label;
        out.truth.push_back(std::move(info));
    }
    return out;
}

std::string format_raw_line(const LogRecord& record) {
    return std::to_string(record.timestamp) + " INFO " + record.content;
}

std::vector<Sequence> synth_sequences(const SynthCorpus& corpus) {
    auto profile = DatasetProfile::synthetic();
    profile.max_sequence_len = std::numeric_limits<std::size_t>::max();
    return build_sessions(corpus.records, profile);
}

void write_synth_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
    std::string raw;
    for (const auto& r : corpus.records) {
        raw += format_raw_line(r);
        raw += '\n';
    }
    write_file_atomic(dir / "synthetic.log", raw);

    std::string labels = "BlockId,Label\n";
    nlohmann::ordered_json defects;
    defects["version"] = 1;
    auto arr = nlohmann::ordered_json::array();
    for (const auto& t : corpus.truth) {
        labels += t.id + "," + (t.label == Label::abnormal ? "Anomaly" : "Normal") + "\n";
        nlohmann::ordered_json e;
        e["id"] = t.id;
        e["label"] = to_string(t.label);
        e["defect"] = to_string(t.defect);
        arr.push_back(std::move(e));
    }
    defects["sequences"] = std::move(arr);
    write_file_atomic(dir / "labels.csv", labels);
    write_file_atomic(dir / "defects.json", defects.dump() + "\n");
    write_dataset(synth_sequences(corpus), dir / "dataset.jsonl");
}

} // namespace ctxlog
