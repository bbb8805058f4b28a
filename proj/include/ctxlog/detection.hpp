#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ctxlog/corpus.hpp"
#include "ctxlog/scoring.hpp"

namespace ctxlog {

// Subset of the four features, bit f set when feature f (kFeatureNames
// order) is active.
struct FeatureMask {
    unsigned bits = 0xF;

    static FeatureMask all() { return {0xF}; }
    static FeatureMask single(std::size_t f) { return {1u << f}; }
    // Names from kFeatureNames; throws ConfigInvalid on unknown names.
    static FeatureMask from_names(const std::vector<std::string>& names);

    bool has(std::size_t f) const { return (bits >> f) & 1u; }
    std::size_t count() const;
    bool empty() const { return (bits & 0xF) == 0; }
    std::vector<std::string> names() const;
    // e.g. "point_max+context_mean"
    std::string tag() const;
    bool operator==(const FeatureMask&) const = default;
};

// The 15 non-empty subsets, ordered as binary counting with point_max as
// the most significant flag and context_mean as the least significant.
std::vector<FeatureMask> all_feature_subsets();

struct CalibrationStats {
    std::array<double, 4> medians{};
    std::array<double, 4> mads{};
    double epsilon = 1e-6;
    double percentile = 95.0;
    double threshold = 0.0;
    std::size_t m = 0;
    FeatureMask mask;

    std::string to_json() const;
    static CalibrationStats from_json(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static CalibrationStats load(const std::filesystem::path& path);
};

struct RobustZVector {
    std::array<double, 4> rz{};
    FeatureMask active;
};

inline constexpr std::size_t kMinCalibration = 20;

// Lower median: element (k-1)/2 of the sorted values (0-based).
double lower_median(std::vector<double> values);
// Element ceil(p/100 * m) (1-based) of the ascending values; p in (0, 100].
double nearest_rank(std::vector<double> values, double percentile);

// Medians and MADs of all four features; threshold fitted on `mask`.
// Throws TooFewCalibrationSequences, EmptyFeatureMask, ConfigInvalid.
CalibrationStats fit_calibration(const std::vector<ScoreVector>& calibration, double percentile = 95.0,
                                 double epsilon = 1e-6, FeatureMask mask = FeatureMask::all());

// Same medians and MADs, threshold refitted for another mask.
CalibrationStats refit_threshold(const CalibrationStats& base, const std::vector<ScoreVector>& calibration,
                                 FeatureMask mask, double percentile);

RobustZVector robust_z(const ScoreVector& y, const CalibrationStats& stats);
// Throws EmptyFeatureMask.
double anomaly_score(const RobustZVector& rz);
// score_s > threshold.
Label classify(double score, const CalibrationStats& stats);

// Convenience: robust_z + anomaly_score with the stats' own mask.
double anomaly_score(const ScoreVector& y, const CalibrationStats& stats);

enum class FractionMode { squared, l1 };
// Per-feature share of the anomaly score. Throws ZeroScore when every
// active rz is zero.
std::array<double, 4> score_fractions(const RobustZVector& rz, FractionMode mode = FractionMode::squared);

} // namespace ctxlog
