#include "ctxlog/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <regex>
#include <sstream>

#include "json.hpp"

#include "ctxlog/errors.hpp"
#include "ctxlog/io.hpp"
#include "ctxlog/rng.hpp"

namespace ctxlog {

const char* to_string(Label l) { return l == Label::normal ? "normal" : "abnormal"; }

Label label_from_string(const std::string& s) {
    if (s == "normal") return Label::normal;
    if (s == "abnormal") return Label::abnormal;
    throw MalformedLine("unknown label '" + s + "'");
}

void DatasetProfile::validate() const {
    if (max_sequence_len < 1) throw ConfigInvalid("profile " + name + ": max_sequence_len must be >= 1");
    if (window_mode == WindowMode::time && window_seconds <= 0)
        throw ConfigInvalid("profile " + name + ": window_seconds required for time windows");
    if (window_mode == WindowMode::session && session_key_pattern.empty())
        throw ConfigInvalid("profile " + name + ": session_key_pattern required for session windows");
    if (metadata_fields <= timestamp_field)
        throw ConfigInvalid("profile " + name + ": metadata_fields must cover the timestamp field");
}

DatasetProfile DatasetProfile::hdfs() {
    DatasetProfile p;
    p.name = "hdfs";
    p.label_mode = LabelMode::session_label_table;
    p.window_mode = WindowMode::session;
    p.window_seconds = 0;
    p.max_sequence_len = 256;
    p.session_key_pattern = "blk_-?[0-9]+";
    p.timestamp_kind = TimestampKind::yymmdd_hhmmss;
    p.timestamp_field = 0;
    p.metadata_fields = 5;  // date time pid level component
    return p;
}

DatasetProfile DatasetProfile::bgl() {
    DatasetProfile p;
    p.name = "bgl";
    p.metadata_fields = 9;  // label ts date node time node type component level
    return p;
}

DatasetProfile DatasetProfile::thunderbird() {
    DatasetProfile p;
    p.name = "thunderbird";
    p.metadata_fields = 8;  // label ts date node month day time node/node
    return p;
}

DatasetProfile DatasetProfile::synthetic() {
    DatasetProfile p;
    p.name = "synthetic";
    p.label_mode = LabelMode::session_label_table;
    p.window_mode = WindowMode::session;
    p.window_seconds = 0;
    p.max_sequence_len = 256;
    p.session_key_pattern = "blk_[0-9]+";
    p.timestamp_kind = TimestampKind::epoch_field;
    p.timestamp_field = 0;
    p.metadata_fields = 2;
    return p;
}

DatasetProfile DatasetProfile::by_name(const std::string& name) {
    if (name == "hdfs") return hdfs();
    if (name == "bgl") return bgl();
    if (name == "thunderbird") return thunderbird();
    if (name == "synthetic") return synthetic();
    throw ConfigInvalid("unknown dataset profile '" + name + "'");
}

namespace {

std::vector<std::string_view> split_fields(std::string_view s, std::size_t max_fields,
                                           std::size_t* content_start) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
    while (out.size() < max_fields) {
        while (i < s.size() && is_space(s[i])) ++i;
        if (i >= s.size()) break;
        std::size_t j = i;
        while (j < s.size() && !is_space(s[j])) ++j;
        out.push_back(s.substr(i, j - i));
        i = j;
    }
    while (i < s.size() && is_space(s[i])) ++i;
    *content_start = i;
    return out;
}

bool parse_int(std::string_view s, std::int64_t& out) {
    if (s.empty()) return false;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

std::int64_t parse_yymmdd_hhmmss(std::string_view date, std::string_view time) {
    std::int64_t d = 0, t = 0;
    if (date.size() != 6 || time.size() != 6 || !parse_int(date, d) || !parse_int(time, t))
        throw MalformedLine("bad date/time '" + std::string(date) + " " + std::string(time) + "'");
    using namespace std::chrono;
    const year_month_day ymd{year{2000 + static_cast<int>(d / 10000)}, month{static_cast<unsigned>(d / 100 % 100)},
                             day{static_cast<unsigned>(d % 100)}};
    if (!ymd.ok()) throw MalformedLine("invalid calendar date '" + std::string(date) + "'");
    const std::int64_t hh = t / 10000, mm = t / 100 % 100, ss = t % 100;
    if (hh > 23 || mm > 59 || ss > 60) throw MalformedLine("invalid clock time '" + std::string(time) + "'");
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return static_cast<std::int64_t>(days) * 86400 + hh * 3600 + mm * 60 + ss;
}

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

const std::regex& cached_regex(const std::string& pattern) {
    thread_local std::map<std::string, std::regex> cache;
    auto it = cache.find(pattern);
    if (it == cache.end()) it = cache.emplace(pattern, std::regex(pattern, std::regex::optimize)).first;
    return it->second;
}

} // namespace

LogRecord parse_log_line(const std::string& raw, const DatasetProfile& profile, const SessionLabels* session_labels) {
    std::string_view line(raw);
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
    if (line.empty()) throw MalformedLine("empty line");
    if (profile.label_mode == LabelMode::session_label_table && !session_labels)
        throw MissingSessionKey("profile " + profile.name + " needs a session label table");

    std::size_t content_start = 0;
    const auto fields = split_fields(line, profile.metadata_fields, &content_start);
    if (fields.size() < profile.metadata_fields)
        throw MalformedLine("expected " + std::to_string(profile.metadata_fields) + " metadata fields");

    LogRecord rec;
    switch (profile.timestamp_kind) {
    case TimestampKind::epoch_field:
        if (profile.timestamp_field >= fields.size() || !parse_int(fields[profile.timestamp_field], rec.timestamp))
            throw MalformedLine("unparseable timestamp");
        break;
    case TimestampKind::yymmdd_hhmmss:
        if (profile.timestamp_field + 1 >= fields.size()) throw MalformedLine("missing date/time fields");
        rec.timestamp = parse_yymmdd_hhmmss(fields[profile.timestamp_field], fields[profile.timestamp_field + 1]);
        break;
    }

    rec.content = trim(line.substr(content_start));
    if (rec.content.empty()) throw MalformedLine("empty content");

    if (profile.window_mode == WindowMode::session) {
        std::smatch m;
        const std::string whole(line);
        if (!std::regex_search(whole, m, cached_regex(profile.session_key_pattern)))
            throw MissingSessionKey("no match for '" + profile.session_key_pattern + "'");
        rec.session_key = m.str(0);
    }

    if (profile.label_mode == LabelMode::dash_prefix) {
        rec.label = fields.at(0) == "-" ? Label::normal : Label::abnormal;
    } else {
        if (!rec.session_key) throw MissingSessionKey("label table lookup needs a session key");
        auto it = session_labels->find(*rec.session_key);
        rec.label = it != session_labels->end() ? it->second : Label::normal;
    }
    return rec;
}

ParseResult parse_log_lines(const std::vector<std::string>& lines, const DatasetProfile& profile,
                            const SessionLabels* session_labels) {
    ParseResult out;
    for (const auto& l : lines) {
        if (l.empty() || l == "\r") continue;
        try {
            out.records.push_back(parse_log_line(l, profile, session_labels));
        } catch (const MalformedLine&) {
            ++out.malformed;
        } catch (const MissingSessionKey&) {
            if (profile.label_mode == LabelMode::session_label_table && !session_labels) throw;
            ++out.missing_session;
        }
    }
    return out;
}

ParseResult parse_log_file(const std::filesystem::path& path, const DatasetProfile& profile,
                           const SessionLabels* session_labels) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open log file " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(std::move(line));
    return parse_log_lines(lines, profile, session_labels);
}

SessionLabels read_session_labels(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open label table " + path.string());
    SessionLabels out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            header = false;
            if (line != "BlockId,Label") throw MalformedLine("label table header must be 'BlockId,Label'");
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw MalformedLine("label row without comma: " + line);
        const std::string key = line.substr(0, comma), value = line.substr(comma + 1);
        if (value == "Normal")
            out[key] = Label::normal;
        else if (value == "Anomaly")
            out[key] = Label::abnormal;
        else
            throw MalformedLine("label must be Normal or Anomaly: " + line);
    }
    return out;
}

std::vector<Sequence> build_sessions(const std::vector<LogRecord>& records, const DatasetProfile& profile) {
    std::vector<Sequence> out;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& r : records) {
        if (!r.session_key) throw MissingSessionKey("record without session key in session mode");
        auto [it, inserted] = index.emplace(*r.session_key, out.size());
        if (inserted) {
            Sequence s;
            s.id = *r.session_key;
            s.start_ts = r.timestamp;
            s.label = r.label;
            out.push_back(std::move(s));
        }
        Sequence& s = out[it->second];
        if (r.label == Label::abnormal) s.label = Label::abnormal;
        if (s.messages.size() < profile.max_sequence_len) s.messages.push_back(r.content);
    }
    return out;
}

std::vector<Sequence> build_time_windows(std::vector<LogRecord> records, const DatasetProfile& profile) {
    std::vector<Sequence> out;
    if (records.empty()) return out;
    if (profile.window_seconds <= 0) throw ConfigInvalid("build_time_windows: window_seconds must be positive");
    std::stable_sort(records.begin(), records.end(),
                     [](const LogRecord& a, const LogRecord& b) { return a.timestamp < b.timestamp; });
    const std::int64_t t0 = records.front().timestamp;
    std::int64_t current = -1;
    for (const auto& r : records) {
        const std::int64_t k = (r.timestamp - t0) / profile.window_seconds;
        if (k != current) {
            Sequence s;
            s.id = "w" + std::to_string(k);
            s.start_ts = t0 + k * profile.window_seconds;
            out.push_back(std::move(s));
            current = k;
        }
        Sequence& s = out.back();
        if (r.label == Label::abnormal) s.label = Label::abnormal;
        if (s.messages.size() < profile.max_sequence_len) s.messages.push_back(r.content);
    }
    return out;
}

std::vector<Sequence> build_sequences(const std::vector<LogRecord>& records, const DatasetProfile& profile) {
    return profile.window_mode == WindowMode::session ? build_sessions(records, profile)
                                                      : build_time_windows(records, profile);
}

std::array<std::size_t, 4> split_sizes(std::size_t n, const SplitRatios& ratios) {
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r >= 0.0)) throw ConfigInvalid("split ratios must be non-negative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigInvalid("split ratios must sum to 1");
    std::array<std::size_t, 4> sizes{};
    std::size_t rest = 0;
    for (std::size_t i = 1; i < 4; ++i) {
        sizes[i] = static_cast<std::size_t>(std::floor(ratios[i] * static_cast<double>(n) + 1e-9));
        rest += sizes[i];
    }
    sizes[0] = n - std::min(rest, n);
    return sizes;
}

namespace {

std::vector<std::size_t> chronological_order(const std::vector<Sequence>& sequences) {
    std::vector<std::size_t> order(sequences.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return sequences[a].start_ts < sequences[b].start_ts;
    });
    return order;
}

} // namespace

std::vector<Sequence> test_slice_normals(const std::vector<Sequence>& sequences, const SplitRatios& ratios) {
    const auto order = chronological_order(sequences);
    const auto sizes = split_sizes(sequences.size(), ratios);
    std::vector<Sequence> out;
    for (std::size_t pos = sizes[0] + sizes[1]; pos < sizes[0] + sizes[1] + sizes[2]; ++pos)
        if (sequences[order[pos]].label == Label::normal) out.push_back(sequences[order[pos]]);
    return out;
}

Splits chronological_split(const std::vector<Sequence>& sequences, const SplitRatios& ratios, std::uint64_t seed) {
    const auto order = chronological_order(sequences);
    const auto sizes = split_sizes(sequences.size(), ratios);

    Splits out;
    std::vector<const Sequence*> test_normal;
    std::size_t pos = 0;
    auto take_normals = [&](std::size_t count, std::vector<Sequence>& dst) {
        for (std::size_t i = 0; i < count; ++i, ++pos) {
            const auto& s = sequences[order[pos]];
            if (s.label == Label::normal) dst.push_back(s);
        }
    };
    take_normals(sizes[0], out.train);
    take_normals(sizes[1], out.validation);
    for (std::size_t i = 0; i < sizes[2]; ++i, ++pos) {
        const auto& s = sequences[order[pos]];
        if (s.label == Label::abnormal)
            out.test_abnormal.push_back(s);
        else
            test_normal.push_back(&s);
    }
    take_normals(sizes[3], out.calibration_reference);

    if (out.test_abnormal.empty()) throw InsufficientData("test split contains no abnormal sequences");

    // Balance by seeded sampling of the larger side, keeping chronological order.
    Rng rng(seed);
    const std::size_t k = std::min(out.test_abnormal.size(), test_normal.size());
    if (test_normal.size() > k) {
        auto pick = rng.sample_without_replacement(test_normal.size(), k);
        std::sort(pick.begin(), pick.end());
        for (auto i : pick) out.test_normal.push_back(*test_normal[i]);
    } else {
        for (auto* s : test_normal) out.test_normal.push_back(*s);
    }
    if (out.test_abnormal.size() > k) {
        auto pick = rng.sample_without_replacement(out.test_abnormal.size(), k);
        std::sort(pick.begin(), pick.end());
        std::vector<Sequence> kept;
        for (auto i : pick) kept.push_back(std::move(out.test_abnormal[i]));
        out.test_abnormal = std::move(kept);
    }

    auto require = [](const std::vector<Sequence>& v, const char* name) {
        if (v.empty()) throw InsufficientData(std::string(name) + " split is empty");
    };
    require(out.train, "train");
    require(out.validation, "validation");
    require(out.test_normal, "test_normal");
    require(out.calibration_reference, "calibration_reference");
    return out;
}

std::string sequence_to_json(const Sequence& s) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["label"] = to_string(s.label);
    j["start_ts"] = s.start_ts;
    j["messages"] = s.messages;
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

Sequence sequence_from_json(const std::string& line) {
    try {
        const auto j = nlohmann::json::parse(line);
        Sequence s;
        s.id = j.at("id").get<std::string>();
        s.label = label_from_string(j.at("label").get<std::string>());
        s.start_ts = j.at("start_ts").get<std::int64_t>();
        s.messages = j.at("messages").get<std::vector<std::string>>();
        if (s.messages.empty()) throw MalformedLine("sequence " + s.id + " has no messages");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedLine(std::string("dataset line: ") + e.what());
    }
}

void write_dataset(const std::vector<Sequence>& sequences, const std::filesystem::path& path) {
    std::string out;
    for (const auto& s : sequences) {
        out += sequence_to_json(s);
        out += '\n';
    }
    write_file_atomic(path, out);
}

std::vector<Sequence> read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset " + path.string());
    std::vector<Sequence> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(sequence_from_json(line));
    }
    return out;
}

std::string splits_manifest_json(const Splits& splits) {
    auto ids = [](const std::vector<Sequence>& v) {
        std::vector<std::string> out;
        out.reserve(v.size());
        for (const auto& s : v) out.push_back(s.id);
        return out;
    };
    nlohmann::ordered_json j;
    j["train"] = ids(splits.train);
    j["validation"] = ids(splits.validation);
    j["test_normal"] = ids(splits.test_normal);
    j["test_abnormal"] = ids(splits.test_abnormal);
    j["calibration_reference"] = ids(splits.calibration_reference);
    return j.dump();
}

Splits splits_from_manifest(const std::string& manifest_json, const std::vector<Sequence>& dataset) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(manifest_json);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedLine(std::string("split manifest: ") + e.what());
    }
    std::unordered_map<std::string, const Sequence*> by_id;
    for (const auto& s : dataset) by_id.emplace(s.id, &s);
    auto load = [&](const char* key) {
        std::vector<Sequence> out;
        for (const auto& id : j.at(key)) {
            auto it = by_id.find(id.get<std::string>());
            if (it == by_id.end()) throw MalformedLine(std::string("split manifest references unknown id in ") + key);
            out.push_back(*it->second);
        }
        return out;
    };
    Splits s;
    s.train = load("train");
    s.validation = load("validation");
    s.test_normal = load("test_normal");
    s.test_abnormal = load("test_abnormal");
    s.calibration_reference = load("calibration_reference");
    return s;
}

} // namespace ctxlog
