#include "astra/pose/oks.hpp"

#include <cmath>
#include <vector>

#include "astra/common/error.hpp"

namespace astra::pose {

double keypoint_constant(std::size_t index) { return 2.0 * kCocoSigmas.at(index); }

double oks(const PoseSkeleton& pred, const PoseSkeleton& gt) {
    const std::size_t labeled = gt.labeled_count();
    if (labeled == 0) {
        throw UndefinedMetricError("OKS is undefined for a ground truth with no labeled keypoints");
    }
    if (!(gt.area > 0.0)) {
        throw ValidationError("OKS needs a ground truth with positive area");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
        const auto& g = gt.keypoints[i];
        if (!g.labeled()) {
            continue;
        }
        const double dx = pred.keypoints[i].x - g.x;
        const double dy = pred.keypoints[i].y - g.y;
        const double k = keypoint_constant(i);
        total += std::exp(-(dx * dx + dy * dy) / (2.0 * gt.area * k * k));
    }
    return total / static_cast<double>(labeled);
}

double match_and_score(std::span<const PoseSkeleton> preds, std::span<const PoseSkeleton> gts) {
    if (gts.empty()) {
        throw UndefinedMetricError("match_and_score needs at least one ground truth");
    }
    // Validate every gt up front so errors surface even when preds is empty.
    for (const auto& gt : gts) {
        if (gt.labeled_count() == 0) {
            throw UndefinedMetricError("OKS is undefined for a ground truth with no labeled keypoints");
        }
        if (!(gt.area > 0.0)) {
            throw ValidationError("OKS needs a ground truth with positive area");
        }
    }

    const std::size_t np = preds.size();
    const std::size_t ng = gts.size();
    std::vector<double> table(np * ng);
    for (std::size_t p = 0; p < np; ++p) {
        for (std::size_t g = 0; g < ng; ++g) {
            table[p * ng + g] = oks(preds[p], gts[g]);
        }
    }

    std::vector<bool> pred_used(np, false);
    std::vector<bool> gt_used(ng, false);
    double total = 0.0;
    for (std::size_t round = 0; round < std::min(np, ng); ++round) {
        double best = -1.0;
        std::size_t best_p = 0;
        std::size_t best_g = 0;
        for (std::size_t g = 0; g < ng; ++g) {
            if (gt_used[g]) {
                continue;
            }
            for (std::size_t p = 0; p < np; ++p) {
                if (!pred_used[p] && table[p * ng + g] > best) {
                    best = table[p * ng + g];
                    best_p = p;
                    best_g = g;
                }
            }
        }
        pred_used[best_p] = true;
        gt_used[best_g] = true;
        total += best;
    }
    return total / static_cast<double>(ng);
}

}  // namespace astra::pose
