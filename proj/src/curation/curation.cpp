#include "astra/curation/curation.hpp"

#include <fmt/format.h>

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <nlohmann/json.hpp>

#include "astra/common/error.hpp"
#include "astra/common/io.hpp"

namespace astra::curation {

namespace {

constexpr double kSumTolerance = 1e-9;

void check_unit(double value, std::string_view name) {
    if (!(value >= 0.0 && value <= 1.0)) {
        throw ValidationError(fmt::format("{} = {} is outside [0, 1]", name, value));
    }
}

// Non-increasing isotonic regression (pool adjacent violators), unweighted.
std::array<double, 3> isotonic_decreasing(const std::array<double, 3>& x) {
    struct Block {
        double sum;
        int count;
        double mean() const { return sum / count; }
    };
    std::vector<Block> blocks;
    for (double v : x) {
        blocks.push_back({v, 1});
        while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() < blocks.back().mean()) {
            blocks[blocks.size() - 2].sum += blocks.back().sum;
            blocks[blocks.size() - 2].count += blocks.back().count;
            blocks.pop_back();
        }
    }
    std::array<double, 3> out{};
    std::size_t i = 0;
    for (const auto& b : blocks) {
        for (int c = 0; c < b.count; ++c) {
            out[i++] = b.mean();
        }
    }
    return out;
}

// Exact NNLS for three unknowns: the optimum is the unconstrained fit on its
// own support, so try every support and keep the best feasible one.
Eigen::Vector3d nonnegative_least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    Eigen::Vector3d best = Eigen::Vector3d::Zero();
    double best_residual = y.squaredNorm();
    for (int mask = 1; mask < 8; ++mask) {
        std::vector<int> cols;
        for (int c = 0; c < 3; ++c) {
            if (mask & (1 << c)) cols.push_back(c);
        }
        Eigen::MatrixXd sub(X.rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k) {
            sub.col(static_cast<Eigen::Index>(k)) = X.col(cols[k]);
        }
        const Eigen::VectorXd coef = sub.colPivHouseholderQr().solve(y);
        if ((coef.array() < 0.0).any()) {
            continue;
        }
        const double residual = (sub * coef - y).squaredNorm();
        if (residual < best_residual) {
            best_residual = residual;
            best.setZero();
            for (std::size_t k = 0; k < cols.size(); ++k) {
                best[cols[k]] = coef[static_cast<Eigen::Index>(k)];
            }
        }
    }
    return best;
}

double parse_real(std::string_view field, std::size_t line, std::string_view column) {
    field = trim(field);
    if (field == "true" || field == "TRUE" || field == "True") return 1.0;
    if (field == "false" || field == "FALSE" || field == "False") return 0.0;
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size()) {
        throw ParseError(fmt::format("line {}: column {} is not a number: '{}'", line, column, field));
    }
    return value;
}

}  // namespace

void DimScores::validate() const {
    check_unit(s1, "s1");
    check_unit(s2, "s2");
    check_unit(s3, "s3");
}

void Weights::validate() const {
    if (!(w3 >= 0.0 && w2 > w3 && w1 > w2)) {
        throw ValidationError(fmt::format("weights ({}, {}, {}) must satisfy w1 > w2 > w3 >= 0", w1, w2, w3));
    }
    if (std::abs(w1 + w2 + w3 - 1.0) > kSumTolerance) {
        throw ValidationError(fmt::format("weights ({}, {}, {}) must sum to 1", w1, w2, w3));
    }
}

void Threshold::validate() const { check_unit(theta, "theta"); }

nlohmann::json CurationParams::to_json() const {
    return {{"w1", weights.w1}, {"w2", weights.w2}, {"w3", weights.w3}, {"theta", threshold.theta},
            {"version", kVersion}};
}

CurationParams CurationParams::from_json(const nlohmann::json& doc) {
    CurationParams params;
    try {
        const int version = doc.at("version").get<int>();
        if (version != kVersion) {
            throw ParseError(fmt::format("unsupported curation parameter version {}", version));
        }
        params.weights = {doc.at("w1").get<double>(), doc.at("w2").get<double>(), doc.at("w3").get<double>()};
        params.threshold = {doc.at("theta").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(fmt::format("malformed curation parameters: {}", e.what()));
    }
    params.weights.validate();
    params.threshold.validate();
    return params;
}

double aggregate_score(const DimScores& scores, const Weights& weights) {
    scores.validate();
    weights.validate();
    return weights.w1 * scores.s1 + weights.w2 * scores.s2 + weights.w3 * scores.s3;
}

Weights project_ordered(const Weights& w, double gap) {
    // Shift so the constraint set becomes {u non-increasing, u >= 0}; the
    // projection there is the clipped isotonic fit.
    const std::array<double, 3> shift{2.0 * gap, gap, 0.0};
    auto u = isotonic_decreasing({w.w1 - shift[0], w.w2 - shift[1], w.w3 - shift[2]});
    for (auto& x : u) x = std::max(x, 0.0);
    return {u[0] + shift[0], u[1] + shift[1], u[2] + shift[2]};
}

Weights calibrate_weights(std::span<const PreferenceSample> samples, const WeightFitOptions& options) {
    if (samples.size() < 3) {
        throw CalibrationError(fmt::format("weight calibration needs at least 3 samples, got {}", samples.size()));
    }
    const auto n = static_cast<Eigen::Index>(samples.size());
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        s.scores.validate();
        X.row(i) << s.scores.s1, s.scores.s2, s.scores.s3;
        y[i] = s.human_pref;
    }

    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(X);
    const auto& sv = svd.singularValues();
    if (!(sv[0] > 0.0) || sv[2] <= options.collinearity_tol * sv[0]) {
        throw CalibrationError("degenerate calibration design: dimension scores are collinear");
    }

    const Eigen::Vector3d fit = nonnegative_least_squares(X, y);
    if (!(fit.sum() > 0.0)) {
        throw CalibrationError("weight fit is identically zero; preferences carry no signal");
    }
    Weights w{fit[0], fit[1], fit[2]};
    if (!(w.w1 > w.w2 && w.w2 > w.w3)) {
        w = project_ordered(w, options.min_gap);
    }
    const double total = w.w1 + w.w2 + w.w3;
    return {w.w1 / total, w.w2 / total, w.w3 / total};
}

double f1_at(std::span<const LabeledScore> scored, double theta) {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    for (const auto& s : scored) {
        const bool predicted = s.score >= theta;
        tp += predicted && s.accept;
        fp += predicted && !s.accept;
        fn += !predicted && s.accept;
    }
    const std::int64_t den = 2 * tp + fp + fn;
    return den == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(den);
}

std::vector<double> threshold_candidates(std::span<const LabeledScore> scored) {
    std::vector<double> values;
    values.reserve(scored.size());
    for (const auto& s : scored) values.push_back(s.score);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());

    std::vector<double> candidates{0.0, 1.0};
    for (std::size_t i = 1; i < values.size(); ++i) {
        candidates.push_back(values[i - 1] + (values[i] - values[i - 1]) / 2.0);
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    return candidates;
}

Threshold calibrate_threshold(std::span<const LabeledScore> scored) {
    std::vector<double> positives;
    std::vector<double> negatives;
    for (const auto& s : scored) {
        check_unit(s.score, "score");
        (s.accept ? positives : negatives).push_back(s.score);
    }
    if (positives.empty()) {
        throw CalibrationError("threshold calibration needs at least one positive label");
    }
    std::sort(positives.begin(), positives.end());
    std::sort(negatives.begin(), negatives.end());
    const auto at_or_above = [](const std::vector<double>& sorted, double theta) {
        return static_cast<std::int64_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), theta));
    };
    const auto total_pos = static_cast<std::int64_t>(positives.size());

    // F1 = 2TP / (2TP + FP + FN), compared as exact integer fractions.
    std::int64_t best_num = -1;
    std::int64_t best_den = 1;
    double best_theta = 0.0;
    for (double theta : threshold_candidates(scored)) {
        const std::int64_t tp = at_or_above(positives, theta);
        const std::int64_t fp = at_or_above(negatives, theta);
        const std::int64_t fn = total_pos - tp;
        const std::int64_t num = 2 * tp;
        const std::int64_t den = 2 * tp + fp + fn;
        if (num * best_den > best_num * den) {
            best_num = num;
            best_den = den;
            best_theta = theta;
        }
    }
    return {best_theta};
}

CurationSplit curate_batch(std::span<const CurationItem> items, const Weights& weights, const Threshold& threshold) {
    threshold.validate();
    CurationSplit split;
    for (const auto& item : items) {
        if (aggregate_score(item.scores, weights) >= threshold.theta) {
            split.accepted.push_back(item.id);
        } else {
            split.rejected.push_back(item.id);
        }
    }
    return split;
}

std::vector<CsvSample> read_calibration_csv(std::string_view text) {
    std::vector<CsvSample> rows;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto end = text.find('\n');
        std::string_view line = text.substr(0, end);
        text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;

        std::vector<std::string_view> fields;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (rows.empty() && fields.front() == "id") continue;
        if (fields.size() != 5) {
            throw ParseError(fmt::format("line {}: expected 5 fields (id,s1,s2,s3,target), got {}", line_no,
                                         fields.size()));
        }
        CsvSample row;
        row.id = std::string(fields[0]);
        row.scores = {parse_real(fields[1], line_no, "s1"), parse_real(fields[2], line_no, "s2"),
                      parse_real(fields[3], line_no, "s3")};
        row.target = parse_real(fields[4], line_no, "target");
        try {
            row.scores.validate();
        } catch (const ValidationError& e) {
            throw ValidationError(fmt::format("line {}: {}", line_no, e.what()));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace astra::curation
