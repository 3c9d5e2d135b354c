#pragma once

#include <span>

#include "astra/pose/skeleton.hpp"

namespace astra::pose {

/// COCO falloff constant k_i = 2 * sigma_i for keypoint `index`.
double keypoint_constant(std::size_t index);

/// Object Keypoint Similarity of `pred` against `gt`:
///
///   OKS = sum_i exp(-d_i^2 / (2 * s^2 * k_i^2)) [v_i > 0] / sum_i [v_i > 0]
///
/// with s^2 = gt.area and v_i the gt visibility. Prediction visibility flags
/// are ignored.
///
/// Throws UndefinedMetricError when gt has no labeled keypoint and
/// ValidationError when gt.area <= 0.
double oks(const PoseSkeleton& pred, const PoseSkeleton& gt);

/// Greedy one-to-one matching: repeatedly takes the unmatched (pred, gt)
/// pair with the highest OKS until either side is exhausted. Unmatched gts
/// score 0. Returns the mean over gts. Ties resolve to the lower gt index,
/// then the lower pred index.
double match_and_score(std::span<const PoseSkeleton> preds, std::span<const PoseSkeleton> gts);

}  // namespace astra::pose
