#include "ctxlog/detection.hpp"

#include <algorithm>
#include <cmath>

#include "ctxlog/errors.hpp"
#include "ctxlog/io.hpp"
#include "json.hpp"

namespace ctxlog {

using json = nlohmann::json;

FeatureMask FeatureMask::from_names(const std::vector<std::string>& names) {
    FeatureMask m{0};
    for (const auto& n : names) {
        auto it = std::find(kFeatureNames.begin(), kFeatureNames.end(), n);
        if (it == kFeatureNames.end()) throw ConfigInvalid("unknown feature '" + n + "'");
        m.bits |= 1u << static_cast<unsigned>(it - kFeatureNames.begin());
    }
    return m;
}

std::size_t FeatureMask::count() const {
    std::size_t c = 0;
    for (std::size_t f = 0; f < 4; ++f) c += has(f);
    return c;
}

std::vector<std::string> FeatureMask::names() const {
    std::vector<std::string> out;
    for (std::size_t f = 0; f < 4; ++f)
        if (has(f)) out.emplace_back(kFeatureNames[f]);
    return out;
}

std::string FeatureMask::tag() const {
    std::string out;
    for (const auto& n : names()) {
        if (!out.empty()) out += '+';
        out += n;
    }
    return out;
}

std::vector<FeatureMask> all_feature_subsets() {
    std::vector<FeatureMask> out;
    for (unsigned k = 1; k < 16; ++k) {
        // k's most significant flag is point_max (bit 0 of the mask).
        unsigned bits = 0;
        for (unsigned f = 0; f < 4; ++f)
            if ((k >> (3 - f)) & 1u) bits |= 1u << f;
        out.push_back({bits});
    }
    return out;
}

double lower_median(std::vector<double> values) {
    if (values.empty()) throw InsufficientData("median of an empty set");
    const std::size_t k = (values.size() - 1) / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    return values[k];
}

double nearest_rank(std::vector<double> values, double percentile) {
    if (values.empty()) throw InsufficientData("percentile of an empty set");
    if (!(percentile > 0.0 && percentile <= 100.0)) throw ConfigInvalid("percentile must lie in (0, 100]");
    std::sort(values.begin(), values.end());
    const double m = static_cast<double>(values.size());
    // The tolerance keeps p*m/100 that is integral in exact arithmetic from
    // rounding up to the next rank.
    auto rank = static_cast<std::size_t>(std::ceil(percentile * m / 100.0 - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

namespace {

std::vector<double> masked_scores(const CalibrationStats& stats, const std::vector<ScoreVector>& ys) {
    std::vector<double> scores;
    scores.reserve(ys.size());
    for (const auto& y : ys) scores.push_back(anomaly_score(robust_z(y, stats)));
    return scores;
}

} // namespace

CalibrationStats refit_threshold(const CalibrationStats& base, const std::vector<ScoreVector>& calibration,
                                 FeatureMask mask, double percentile) {
    if (mask.empty()) throw EmptyFeatureMask("feature mask selects no features");
    CalibrationStats s = base;
    s.mask = mask;
    s.percentile = percentile;
    s.threshold = nearest_rank(masked_scores(s, calibration), percentile);
    return s;
}

CalibrationStats fit_calibration(const std::vector<ScoreVector>& calibration, double percentile, double epsilon,
                                 FeatureMask mask) {
    if (calibration.size() < kMinCalibration)
        throw TooFewCalibrationSequences("calibration needs at least " + std::to_string(kMinCalibration) +
                                         " sequences, got " + std::to_string(calibration.size()));
    if (!(epsilon > 0.0)) throw ConfigInvalid("epsilon must be positive");
    if (!(percentile > 0.0 && percentile < 100.0)) throw ConfigInvalid("percentile must lie in (0, 100)");
    CalibrationStats s;
    s.epsilon = epsilon;
    s.m = calibration.size();
    for (std::size_t f = 0; f < 4; ++f) {
        std::vector<double> col;
        col.reserve(calibration.size());
        for (const auto& y : calibration) col.push_back(y.values()[f]);
        s.medians[f] = lower_median(col);
        for (auto& v : col) v = std::abs(v - s.medians[f]);
        s.mads[f] = lower_median(std::move(col));
    }
    return refit_threshold(s, calibration, mask, percentile);
}

RobustZVector robust_z(const ScoreVector& y, const CalibrationStats& stats) {
    RobustZVector out;
    out.active = stats.mask;
    const auto v = y.values();
    for (std::size_t f = 0; f < 4; ++f)
        if (stats.mask.has(f)) out.rz[f] = std::abs(v[f] - stats.medians[f]) / std::max(stats.mads[f], stats.epsilon);
    return out;
}

double anomaly_score(const RobustZVector& rz) {
    if (rz.active.empty()) throw EmptyFeatureMask("feature mask selects no features");
    double sum = 0.0;
    for (std::size_t f = 0; f < 4; ++f)
        if (rz.active.has(f)) sum += rz.rz[f] * rz.rz[f];
    return std::sqrt(sum);
}

double anomaly_score(const ScoreVector& y, const CalibrationStats& stats) {
    return anomaly_score(robust_z(y, stats));
}

Label classify(double score, const CalibrationStats& stats) {
    return score > stats.threshold ? Label::abnormal : Label::normal;
}

std::array<double, 4> score_fractions(const RobustZVector& rz, FractionMode mode) {
    std::array<double, 4> w{};
    double total = 0.0;
    for (std::size_t f = 0; f < 4; ++f) {
        if (!rz.active.has(f)) continue;
        w[f] = mode == FractionMode::squared ? rz.rz[f] * rz.rz[f] : rz.rz[f];
        total += w[f];
    }
    if (total == 0.0) throw ZeroScore("all robust z-scores are zero");
    for (auto& x : w) x /= total;
    return w;
}

std::string CalibrationStats::to_json() const {
    json j;
    j["version"] = 1;
    j["medians"] = medians;
    j["mads"] = mads;
    j["epsilon"] = epsilon;
    j["percentile"] = percentile;
    j["threshold"] = threshold;
    j["features"] = kFeatureNames;
    j["m"] = m;
    j["feature_mask"] = mask.names();
    return j.dump(2) + "\n";
}

CalibrationStats CalibrationStats::from_json(const std::string& text) {
    try {
        json j = json::parse(text);
        if (j.at("version").get<int>() != 1) throw ConfigInvalid("calibration: unsupported version");
        CalibrationStats s;
        s.medians = j.at("medians").get<std::array<double, 4>>();
        s.mads = j.at("mads").get<std::array<double, 4>>();
        s.epsilon = j.at("epsilon").get<double>();
        s.percentile = j.at("percentile").get<double>();
        s.threshold = j.at("threshold").get<double>();
        s.m = j.at("m").get<std::size_t>();
        const auto features = j.at("features").get<std::vector<std::string>>();
        if (features.size() != 4 || !std::equal(features.begin(), features.end(), kFeatureNames.begin()))
            throw ConfigInvalid("calibration: unexpected feature order");
        s.mask = FeatureMask::from_names(j.at("feature_mask").get<std::vector<std::string>>());
        if (s.mask.empty()) throw EmptyFeatureMask("calibration: empty feature mask");
        return s;
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("calibration: ") + e.what());
    }
}

void CalibrationStats::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json()); }

CalibrationStats CalibrationStats::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

} // namespace ctxlog
