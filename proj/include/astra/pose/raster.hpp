#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "astra/pose/skeleton.hpp"

namespace astra::pose {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct RasterStyle {
    /// One colour per skeleton edge, indexed like kSkeletonEdges.
    std::array<Rgb, kNumEdges> limb_palette{};
    Rgb joint_color{255, 255, 255};
    int joint_radius = 4;
    int limb_thickness = 4;
    Rgb background{0, 0, 0};

    /// OpenPose-like palette on a black background.
    static RasterStyle openpose();
};

struct Disc {
    int person = 0;
    int keypoint = 0;
    cv::Point center;
};

struct Segment {
    int person = 0;
    int edge = 0;
    cv::Point from;
    cv::Point to;
};

/// Draw list for a pose map, in paint order. Limbs of a person are painted
/// before its joints; people are painted in list order.
struct RasterPlan {
    std::vector<Segment> segments;
    std::vector<Disc> discs;
};

/// Keypoints are rounded to the nearest pixel here; metrics never see the
/// rounded values. Only v = 2 keypoints produce joints, and an edge is drawn
/// only when both of its endpoints have v = 2.
RasterPlan plan_strokes(const PoseMap& pose_map);

/// Renders `pose_map` into an 8-bit, 3-channel image in RGB channel order.
/// Throws ValidationError for a zero-sized canvas.
cv::Mat rasterize(const PoseMap& pose_map, const RasterStyle& style = RasterStyle::openpose());

/// PNG bytes of an RGB image produced by rasterize.
std::string encode_png(const cv::Mat& rgb);
void write_png(const std::filesystem::path& path, const cv::Mat& rgb);

}  // namespace astra::pose
