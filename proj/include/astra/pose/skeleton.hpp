#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace astra::pose {

inline constexpr std::size_t kNumKeypoints = 17;
inline constexpr std::size_t kNumEdges = 19;

/// COCO keypoint order.
inline constexpr std::array<std::string_view, kNumKeypoints> kKeypointNames = {
    "nose",          "left_eye",       "right_eye",  "left_ear",    "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist",
    "right_wrist",   "left_hip",       "right_hip",  "left_knee",   "right_knee",
    "left_ankle",    "right_ankle",
};

/// Per-keypoint standard deviations published with the COCO keypoint
/// evaluation; the OKS falloff constant is k = 2 * sigma.
inline constexpr std::array<double, kNumKeypoints> kCocoSigmas = {
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
    0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
};

/// The COCO person skeleton, 0-based keypoint indices, in the order the
/// dataset ships it. Edge index selects the limb colour.
inline constexpr std::array<std::pair<int, int>, kNumEdges> kSkeletonEdges = {{
    {15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11}, {6, 12},
    {5, 6},   {5, 7},   {6, 8},   {7, 9},   {8, 10},  {1, 2},  {0, 1},
    {0, 2},   {1, 3},   {2, 4},   {3, 5},   {4, 6},
}};

enum class Visibility : int {
    NotLabeled = 0,
    Occluded = 1,
    Visible = 2,
};

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    Visibility v = Visibility::NotLabeled;

    bool labeled() const { return v != Visibility::NotLabeled; }
    bool visible() const { return v == Visibility::Visible; }
};

struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;
};

struct PoseSkeleton {
    std::array<Keypoint, kNumKeypoints> keypoints{};
    /// Instance area in pixels^2 (the OKS scale s^2).
    double area = 0.0;
    std::optional<BBox> bbox;

    std::size_t labeled_count() const;
    /// Throws ValidationError when area <= 0 while any keypoint is labeled.
    void validate() const;
};

struct PoseMap {
    int width = 0;
    int height = 0;
    std::vector<PoseSkeleton> people;

    /// Checks dimensions, per-skeleton invariants and that visible keypoints
    /// lie on the canvas.
    void validate() const;
};

/// Maps a raw COCO visibility value; anything outside {0,1,2} throws.
Visibility visibility_from_int(int value);

/// Builds a skeleton from a flat (x, y, v) * 17 array.
PoseSkeleton skeleton_from_triplets(const std::vector<double>& triplets, double area,
                                    std::optional<BBox> bbox = std::nullopt);

// JSON form used for pose stores, candidate files and the CLI:
//   {"width": W, "height": H,
//    "people": [{"keypoints": [x, y, v, ... 51 values], "area": A, "bbox": [x, y, w, h]}]}
nlohmann::json to_json(const PoseSkeleton& skeleton);
nlohmann::json to_json(const PoseMap& map);
PoseSkeleton skeleton_from_json(const nlohmann::json& doc);
PoseMap pose_map_from_json(const nlohmann::json& doc);

}  // namespace astra::pose
