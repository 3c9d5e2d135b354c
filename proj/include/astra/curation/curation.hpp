#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace astra::curation {

/// Judge ratings for one generated sample, each in [0, 1]:
/// subject consistency, interaction logic and detail fidelity.
struct DimScores {
    double s1 = 0.0;
    double s2 = 0.0;
    double s3 = 0.0;

    void validate() const;
};

/// Non-negative dimension weights with w1 > w2 > w3 >= 0 summing to one.
struct Weights {
    double w1 = 0.5;
    double w2 = 0.3;
    double w3 = 0.2;

    void validate() const;
};

struct Threshold {
    double theta = 0.7;

    void validate() const;
};

/// Calibrated curation parameters, persisted as
/// {"w1": .., "w2": .., "w3": .., "theta": .., "version": 1}.
struct CurationParams {
    static constexpr int kVersion = 1;

    Weights weights;
    Threshold threshold;

    nlohmann::json to_json() const;
    static CurationParams from_json(const nlohmann::json& doc);
};

struct PreferenceSample {
    DimScores scores;
    double human_pref = 0.0;
};

struct LabeledScore {
    double score = 0.0;
    bool accept = false;
};

/// S = w1*s1 + w2*s2 + w3*s3.
double aggregate_score(const DimScores& scores, const Weights& weights);

struct WeightFitOptions {
    /// Minimum separation enforced between consecutive weights when the
    /// fitted ordering has to be repaired.
    double min_gap = 1e-6;
    /// Design matrices whose smallest/largest singular value ratio falls
    /// below this are rejected as collinear.
    double collinearity_tol = 1e-10;
};

/// Least-squares fit of human preference on the three dimension scores under
/// w >= 0. If the fit does not satisfy w1 > w2 > w3, it is projected onto the
/// ordered cone {w1 - w2 >= gap, w2 - w3 >= gap, w3 >= 0}; the result is then
/// rescaled to sum to one.
///
/// Throws CalibrationError for fewer than three samples, a collinear design,
/// or an all-zero fit.
Weights calibrate_weights(std::span<const PreferenceSample> samples, const WeightFitOptions& options = {});

/// Euclidean projection of `w` onto {w1 - w2 >= gap, w2 - w3 >= gap, w3 >= 0}.
Weights project_ordered(const Weights& w, double gap);

/// F1 of the rule "accept iff score >= theta".
double f1_at(std::span<const LabeledScore> scored, double theta);

/// Candidate thresholds: 0, 1 and the midpoints between consecutive distinct
/// scores, ascending.
std::vector<double> threshold_candidates(std::span<const LabeledScore> scored);

/// The candidate with maximal F1, smallest on ties. Throws CalibrationError
/// without a positive label.
Threshold calibrate_threshold(std::span<const LabeledScore> scored);

struct CurationItem {
    std::string id;
    DimScores scores;
};

struct CurationSplit {
    std::vector<std::string> accepted;
    std::vector<std::string> rejected;
};

/// Partitions by aggregate_score >= theta, keeping input order.
CurationSplit curate_batch(std::span<const CurationItem> items, const Weights& weights, const Threshold& threshold);

struct CsvSample {
    std::string id;
    DimScores scores;
    double target = 0.0;
};

/// Reads "id,s1,s2,s3,target" rows. A leading header row whose first field
/// is "id" is skipped, as are blank lines. Targets may be reals or
/// true/false. Errors name the line.
std::vector<CsvSample> read_calibration_csv(std::string_view text);

}  // namespace astra::curation
