#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <random>

#include "astra/common/error.hpp"
#include "astra/curation/curation.hpp"

using namespace astra;
using namespace astra::curation;

namespace {

// Projection onto {u1 - u2 >= gap, u2 - u3 >= gap, u3 >= 0} by enumerating
// every active set of the three constraints and keeping the nearest feasible
// equality-constrained projection.
Weights ordered_projection_oracle(const Weights& w, double gap) {
    const double A[3][3] = {{1, -1, 0}, {0, 1, -1}, {0, 0, 1}};
    const double b[3] = {gap, gap, 0.0};
    const double x[3] = {w.w1, w.w2, w.w3};
    double best_dist = std::numeric_limits<double>::infinity();
    Weights best{};
    for (int mask = 0; mask < 8; ++mask) {
        std::vector<int> act;
        for (int r = 0; r < 3; ++r)
            if (mask & (1 << r)) act.push_back(r);
        const std::size_t m = act.size();
        // Solve (A_S A_S^T) lambda = A_S x - b_S by Gaussian elimination.
        std::vector<std::vector<double>> M(m, std::vector<double>(m + 1, 0.0));
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < m; ++j)
                for (int c = 0; c < 3; ++c) M[i][j] += A[act[i]][c] * A[act[j]][c];
            double ax = 0.0;
            for (int c = 0; c < 3; ++c) ax += A[act[i]][c] * x[c];
            M[i][m] = ax - b[act[i]];
        }
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t k = i + 1; k < m; ++k) {
                const double f = M[k][i] / M[i][i];
                for (std::size_t j = i; j <= m; ++j) M[k][j] -= f * M[i][j];
            }
        }
        std::vector<double> lambda(m, 0.0);
        for (std::size_t ii = m; ii-- > 0;) {
            double s = M[ii][m];
            for (std::size_t j = ii + 1; j < m; ++j) s -= M[ii][j] * lambda[j];
            lambda[ii] = s / M[ii][ii];
        }
        double u[3] = {x[0], x[1], x[2]};
        for (std::size_t i = 0; i < m; ++i)
            for (int c = 0; c < 3; ++c) u[c] -= lambda[i] * A[act[i]][c];
        bool feasible = true;
        for (int r = 0; r < 3; ++r) {
            double lhs = 0.0;
            for (int c = 0; c < 3; ++c) lhs += A[r][c] * u[c];
            if (lhs < b[r] - 1e-15) feasible = false;
        }
        if (!feasible) continue;
        const double dist = (u[0] - x[0]) * (u[0] - x[0]) + (u[1] - x[1]) * (u[1] - x[1]) +
                            (u[2] - x[2]) * (u[2] - x[2]);
        if (dist < best_dist) {
            best_dist = dist;
            best = {u[0], u[1], u[2]};
        }
    }
    return best;
}

std::vector<PreferenceSample> planted_samples(std::mt19937_64& rng, std::size_t n, double w1, double w2, double w3) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<PreferenceSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        DimScores s{u(rng), u(rng), u(rng)};
        out.push_back({s, w1 * s.s1 + w2 * s.s2 + w3 * s.s3});
    }
    return out;
}

// Independent F1 scan: recount TP/FP/FN for each candidate and keep the
// smallest threshold with the highest F1.
double brute_force_threshold(const std::vector<LabeledScore>& scored) {
    std::vector<double> candidates{0.0, 1.0};
    std::vector<double> values;
    for (const auto& s : scored) values.push_back(s.score);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t i = 0; i + 1 < values.size(); ++i) candidates.push_back(values[i] + (values[i + 1] - values[i]) / 2.0);
    std::sort(candidates.begin(), candidates.end());
    double best_f1 = -1.0;
    double best_theta = 0.0;
    for (double theta : candidates) {
        int tp = 0, fp = 0, fn = 0;
        for (const auto& s : scored) {
            if (s.score >= theta) {
                if (s.accept) ++tp; else ++fp;
            } else if (s.accept) {
                ++fn;
            }
        }
        const double f1 = tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
        if (f1 > best_f1 + 1e-15) {
            best_f1 = f1;
            best_theta = theta;
        }
    }
    return best_theta;
}

}  // namespace

TEST_SUITE("aggregate_score") {
    TEST_CASE("all ones give one and all zeros give zero") {
        for (const Weights w : {Weights{0.5, 0.3, 0.2}, Weights{0.6, 0.3, 0.1}, Weights{0.9, 0.1, 0.0}}) {
            CHECK(aggregate_score({1, 1, 1}, w) == doctest::Approx(1.0).epsilon(1e-15));
            CHECK(aggregate_score({0, 0, 0}, w) == 0.0);
        }
    }

    TEST_CASE("hand arithmetic example") {
        // 0.5*0.8 + 0.3*0.6 + 0.2*0.4 = 0.40 + 0.18 + 0.08
        CHECK(aggregate_score({0.8, 0.6, 0.4}, {0.5, 0.3, 0.2}) == doctest::Approx(0.66).epsilon(1e-15));
    }

    TEST_CASE("invariant violations are rejected") {
        CHECK_THROWS_AS(aggregate_score({1.2, 0, 0}, {}), ValidationError);
        CHECK_THROWS_AS(aggregate_score({0.5, 0.5, -0.1}, {}), ValidationError);
        CHECK_THROWS_AS(aggregate_score({0.5, 0.5, 0.5}, {0.3, 0.5, 0.2}), ValidationError);
        CHECK_THROWS_AS(aggregate_score({0.5, 0.5, 0.5}, {0.5, 0.3, 0.3}), ValidationError);
    }

    TEST_CASE("linear in the score vector and bounded") {
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const Weights w{0.55, 0.3, 0.15};
        for (int trial = 0; trial < 500; ++trial) {
            const DimScores a{u(rng), u(rng), u(rng)};
            const DimScores b{u(rng), u(rng), u(rng)};
            const double lambda = u(rng);
            const DimScores mix{lambda * a.s1 + (1 - lambda) * b.s1, lambda * a.s2 + (1 - lambda) * b.s2,
                                lambda * a.s3 + (1 - lambda) * b.s3};
            const double lhs = aggregate_score(mix, w);
            CHECK(lhs == doctest::Approx(lambda * aggregate_score(a, w) + (1 - lambda) * aggregate_score(b, w))
                             .epsilon(1e-12));
            CHECK(lhs >= 0.0);
            CHECK(lhs <= 1.0);
        }
    }
}

TEST_SUITE("calibrate_weights") {
    TEST_CASE("recovers planted weights") {
        std::mt19937_64 rng(42);
        const auto samples = planted_samples(rng, 60, 0.5, 0.3, 0.2);
        const Weights w = calibrate_weights(samples);
        CHECK(std::abs(w.w1 - 0.5) < 1e-9);
        CHECK(std::abs(w.w2 - 0.3) < 1e-9);
        CHECK(std::abs(w.w3 - 0.2) < 1e-9);
    }

    TEST_CASE("preference equal to s1 is pushed onto the ordered cone") {
        std::mt19937_64 rng(43);
        const auto samples = planted_samples(rng, 40, 1.0, 0.0, 0.0);
        const WeightFitOptions options;
        const Weights w = calibrate_weights(samples, options);

        const Weights projected = ordered_projection_oracle({1.0, 0.0, 0.0}, options.min_gap);
        const double total = projected.w1 + projected.w2 + projected.w3;
        CHECK(w.w1 == doctest::Approx(projected.w1 / total).epsilon(1e-9));
        CHECK(w.w2 == doctest::Approx(projected.w2 / total).epsilon(1e-9));
        CHECK(std::abs(w.w3 - projected.w3 / total) < 1e-12);
        CHECK(w.w1 > 0.999);
        CHECK(w.w1 > w.w2);
        CHECK(w.w2 > w.w3);
        CHECK_NOTHROW(w.validate());
    }

    TEST_CASE("ordering projection matches the active-set oracle") {
        std::mt19937_64 rng(44);
        std::uniform_real_distribution<double> u(-0.5, 1.5);
        for (int trial = 0; trial < 300; ++trial) {
            const Weights w{u(rng), u(rng), u(rng)};
            const Weights got = project_ordered(w, 1e-3);
            const Weights want = ordered_projection_oracle(w, 1e-3);
            CHECK(got.w1 == doctest::Approx(want.w1).epsilon(1e-12));
            CHECK(got.w2 == doctest::Approx(want.w2).epsilon(1e-12));
            CHECK(got.w3 == doctest::Approx(want.w3).epsilon(1e-12));
        }
    }

    TEST_CASE("negative planted coefficient is clipped before ordering") {
        std::mt19937_64 rng(45);
        const auto samples = planted_samples(rng, 40, 0.7, 0.4, -0.1);
        const Weights w = calibrate_weights(samples);
        CHECK_NOTHROW(w.validate());
        CHECK(w.w3 >= 0.0);
    }

    TEST_CASE("two samples are underdetermined") {
        std::mt19937_64 rng(46);
        const auto samples = planted_samples(rng, 2, 0.5, 0.3, 0.2);
        CHECK_THROWS_AS(calibrate_weights(samples), CalibrationError);
    }

    TEST_CASE("collinear scores are degenerate") {
        std::vector<PreferenceSample> samples;
        for (int i = 0; i < 10; ++i) {
            const double s = i / 10.0;
            samples.push_back({{s, s, s}, s});
        }
        CHECK_THROWS_AS(calibrate_weights(samples), CalibrationError);
    }

    TEST_CASE("all-zero preferences cannot be normalized") {
        std::mt19937_64 rng(47);
        auto samples = planted_samples(rng, 10, 0.0, 0.0, 0.0);
        CHECK_THROWS_AS(calibrate_weights(samples), CalibrationError);
    }
}

TEST_SUITE("calibrate_threshold") {
    TEST_CASE("separated classes pick the smallest perfect midpoint") {
        const std::vector<LabeledScore> scored{{0.2, false}, {0.5, false}, {0.8, true}, {0.9, true}, {0.95, true}};
        const Threshold t = calibrate_threshold(scored);
        CHECK(t.theta == doctest::Approx(0.65).epsilon(1e-15));
        CHECK(f1_at(scored, t.theta) == 1.0);
    }

    TEST_CASE("all positive accepts everything") {
        const std::vector<LabeledScore> scored{{0.1, true}, {0.4, true}, {0.7, true}};
        CHECK(calibrate_threshold(scored).theta == 0.0);
    }

    TEST_CASE("no positives is a calibration error") {
        const std::vector<LabeledScore> scored{{0.1, false}, {0.4, false}};
        CHECK_THROWS_AS(calibrate_threshold(scored), CalibrationError);
        CHECK_THROWS_AS(calibrate_threshold({}), CalibrationError);
    }

    TEST_CASE("interleaved fifty samples equal the exhaustive scan") {
        for (std::uint64_t seed = 100; seed < 120; ++seed) {
            std::mt19937_64 rng(seed);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            std::vector<LabeledScore> scored;
            for (int i = 0; i < 50; ++i) {
                const double s = std::round(u(rng) * 40.0) / 40.0;  // force duplicate scores
                scored.push_back({s, u(rng) < s});
            }
            if (std::none_of(scored.begin(), scored.end(), [](auto& s) { return s.accept; })) continue;
            const Threshold t = calibrate_threshold(scored);
            CHECK(t.theta == brute_force_threshold(scored));
            for (double c : threshold_candidates(scored)) {
                CHECK(f1_at(scored, t.theta) >= f1_at(scored, c));
            }
        }
    }
}

TEST_SUITE("curate_batch") {
    TEST_CASE("theta zero accepts all") {
        const std::vector<CurationItem> items{{"a", {0, 0, 0}}, {"b", {0.3, 0.2, 0.9}}};
        const auto split = curate_batch(items, {}, {0.0});
        CHECK(split.accepted == std::vector<std::string>{"a", "b"});
        CHECK(split.rejected.empty());
    }

    TEST_CASE("theta one accepts only perfect scores") {
        const std::vector<CurationItem> items{{"a", {1, 1, 1}}, {"b", {1, 1, 0.99}}, {"c", {1, 1, 1}}};
        const auto split = curate_batch(items, {0.5, 0.3, 0.2}, {1.0});
        CHECK(split.accepted == std::vector<std::string>{"a", "c"});
        CHECK(split.rejected == std::vector<std::string>{"b"});
    }

    TEST_CASE("mixed batch of ten matches hand computation") {
        // S under (0.5, 0.3, 0.2): a 1.0, b 0.0, c 0.66, d 0.9, e 0.5,
        // f 0.8, g 0.5, h 0.7, i 0.4, j 0.65; theta 0.6.
        const std::vector<CurationItem> items{
            {"a", {1, 1, 1}},   {"b", {0, 0, 0}},       {"c", {0.8, 0.6, 0.4}}, {"d", {0.9, 0.9, 0.9}},
            {"e", {1, 0, 0}},   {"f", {1, 1, 0}},       {"g", {0, 1, 1}},       {"h", {1, 0, 1}},
            {"i", {0.4, 0.4, 0.4}}, {"j", {1, 0.5, 0}},
        };
        const auto split = curate_batch(items, {0.5, 0.3, 0.2}, {0.6});
        CHECK(split.accepted == std::vector<std::string>{"a", "c", "d", "f", "h", "j"});
        CHECK(split.rejected == std::vector<std::string>{"b", "e", "g", "i"});
    }

    TEST_CASE("accepted and rejected partition the input") {
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<CurationItem> items;
        for (int i = 0; i < 200; ++i) items.push_back({std::to_string(i), {u(rng), u(rng), u(rng)}});
        const auto split = curate_batch(items, {0.5, 0.3, 0.2}, {0.5});
        CHECK(split.accepted.size() + split.rejected.size() == items.size());
        std::vector<std::string> merged = split.accepted;
        merged.insert(merged.end(), split.rejected.begin(), split.rejected.end());
        std::sort(merged.begin(), merged.end());
        CHECK(std::adjacent_find(merged.begin(), merged.end()) == merged.end());
    }
}

TEST_SUITE("curation io") {
    TEST_CASE("csv rows with header and boolean targets") {
        const auto rows = read_calibration_csv("id,s1,s2,s3,target\nx,0.1,0.2,0.3,0.9\n\ny,1,0,0.5,true\n");
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].id == "x");
        CHECK(rows[0].scores.s3 == 0.3);
        CHECK(rows[0].target == 0.9);
        CHECK(rows[1].target == 1.0);
    }

    TEST_CASE("csv errors name the line") {
        try {
            read_calibration_csv("id,s1,s2,s3,target\nx,0.1,abc,0.3,1\n");
            FAIL("expected parse error");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
        CHECK_THROWS_AS(read_calibration_csv("x,0.1,0.2\n"), ParseError);
        CHECK_THROWS_AS(read_calibration_csv("x,0.1,0.2,1.5,1\n"), ValidationError);
    }

    TEST_CASE("parameter json round trip and version check") {
        CurationParams p;
        p.weights = {0.6, 0.25, 0.15};
        p.threshold = {0.42};
        const auto back = CurationParams::from_json(nlohmann::json::parse(p.to_json().dump()));
        CHECK(back.weights.w2 == 0.25);
        CHECK(back.threshold.theta == 0.42);
        auto doc = p.to_json();
        doc["version"] = 99;
        CHECK_THROWS_AS(CurationParams::from_json(doc), ParseError);
    }
}
