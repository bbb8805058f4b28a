#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace ctxlog {

enum class Label { normal, abnormal };

const char* to_string(Label l);
Label label_from_string(const std::string& s);

enum class LabelMode { dash_prefix, session_label_table };
enum class WindowMode { session, time };
enum class TimestampKind {
    epoch_field,     // integer epoch seconds in field `timestamp_field`
    yymmdd_hhmmss,   // two fields starting at `timestamp_field`, e.g. "081109 203615" (UTC)
};

struct DatasetProfile {
    std::string name;
    LabelMode label_mode = LabelMode::dash_prefix;
    WindowMode window_mode = WindowMode::time;
    std::int64_t window_seconds = 60;
    std::size_t max_sequence_len = 256;
    std::string session_key_pattern;  // regex, session mode only
    TimestampKind timestamp_kind = TimestampKind::epoch_field;
    std::size_t timestamp_field = 1;
    std::size_t metadata_fields = 9;  // leading whitespace-separated fields dropped from content

    // Throws ConfigInvalid when the mode-dependent fields are inconsistent.
    void validate() const;

    static DatasetProfile hdfs();
    static DatasetProfile bgl();
    static DatasetProfile thunderbird();
    // Layout written by the synthetic generator: "<epoch> <level> <content>".
    static DatasetProfile synthetic();
    static DatasetProfile by_name(const std::string& name);
};

struct LogRecord {
    std::int64_t timestamp = 0;
    Label label = Label::normal;
    std::optional<std::string> session_key;
    std::string content;
};

struct Sequence {
    std::string id;
    Label label = Label::normal;
    std::int64_t start_ts = 0;
    std::vector<std::string> messages;
};

struct Splits {
    std::vector<Sequence> train;
    std::vector<Sequence> validation;
    std::vector<Sequence> test_normal;
    std::vector<Sequence> test_abnormal;
    std::vector<Sequence> calibration_reference;
};

using SessionLabels = std::unordered_map<std::string, Label>;

// Parses one raw line. Throws MalformedLine or MissingSessionKey.
LogRecord parse_log_line(const std::string& raw, const DatasetProfile& profile,
                         const SessionLabels* session_labels = nullptr);

struct ParseResult {
    std::vector<LogRecord> records;
    std::size_t malformed = 0;
    std::size_t missing_session = 0;
};

// Parses every non-empty line, skipping (and counting) malformed ones.
ParseResult parse_log_lines(const std::vector<std::string>& lines, const DatasetProfile& profile,
                            const SessionLabels* session_labels = nullptr);
ParseResult parse_log_file(const std::filesystem::path& path, const DatasetProfile& profile,
                           const SessionLabels* session_labels = nullptr);

// Reads a "BlockId,Label" CSV with values Normal/Anomaly.
SessionLabels read_session_labels(const std::filesystem::path& path);

std::vector<Sequence> build_sessions(const std::vector<LogRecord>& records, const DatasetProfile& profile);
std::vector<Sequence> build_time_windows(std::vector<LogRecord> records, const DatasetProfile& profile);
// Dispatches on profile.window_mode.
std::vector<Sequence> build_sequences(const std::vector<LogRecord>& records, const DatasetProfile& profile);

using SplitRatios = std::array<double, 4>;  // train, validation, test, calibration_reference
inline constexpr SplitRatios kDefaultSplitRatios{0.60, 0.05, 0.30, 0.05};

// Slice sizes for N sequences: floor(ratio * N) for validation, test and
// reference; train takes the remainder.
std::array<std::size_t, 4> split_sizes(std::size_t n, const SplitRatios& ratios);

Splits chronological_split(const std::vector<Sequence>& sequences, const SplitRatios& ratios, std::uint64_t seed);

// Every normal sequence of the test slice, before balancing discards any.
std::vector<Sequence> test_slice_normals(const std::vector<Sequence>& sequences, const SplitRatios& ratios);

// JSON Lines: {"id","label","start_ts","messages"} per line.
std::string sequence_to_json(const Sequence& s);
Sequence sequence_from_json(const std::string& line);
void write_dataset(const std::vector<Sequence>& sequences, const std::filesystem::path& path);
std::vector<Sequence> read_dataset(const std::filesystem::path& path);

// {"train":[ids],...}
std::string splits_manifest_json(const Splits& splits);
// Rebuilds Splits from a manifest and the dataset it indexes.
Splits splits_from_manifest(const std::string& manifest_json, const std::vector<Sequence>& dataset);

} // namespace ctxlog
