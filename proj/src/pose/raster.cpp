#include "astra/pose/raster.hpp"

#include <fmt/format.h>

#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "astra/common/error.hpp"
#include "astra/common/io.hpp"

namespace astra::pose {

namespace {

cv::Point to_pixel(const Keypoint& kp) {
    return {static_cast<int>(std::lround(kp.x)), static_cast<int>(std::lround(kp.y))};
}

cv::Scalar to_scalar(Rgb c) { return {static_cast<double>(c.r), static_cast<double>(c.g), static_cast<double>(c.b)}; }

}  // namespace

RasterStyle RasterStyle::openpose() {
    RasterStyle style;
    style.limb_palette = {{
        {255, 0, 0},   {255, 85, 0},   {255, 170, 0}, {255, 255, 0}, {170, 255, 0}, {85, 255, 0},  {0, 255, 0},
        {0, 255, 85},  {0, 255, 170},  {0, 255, 255}, {0, 170, 255}, {0, 85, 255},  {0, 0, 255},   {85, 0, 255},
        {170, 0, 255}, {255, 0, 255},  {255, 0, 170}, {255, 0, 85},  {170, 170, 170},
    }};
    return style;
}

RasterPlan plan_strokes(const PoseMap& pose_map) {
    RasterPlan plan;
    for (std::size_t p = 0; p < pose_map.people.size(); ++p) {
        const auto& kps = pose_map.people[p].keypoints;
        for (std::size_t e = 0; e < kNumEdges; ++e) {
            const auto [a, b] = kSkeletonEdges[e];
            if (kps[a].visible() && kps[b].visible()) {
                plan.segments.push_back(
                    {static_cast<int>(p), static_cast<int>(e), to_pixel(kps[a]), to_pixel(kps[b])});
            }
        }
        for (std::size_t k = 0; k < kNumKeypoints; ++k) {
            if (kps[k].visible()) {
                plan.discs.push_back({static_cast<int>(p), static_cast<int>(k), to_pixel(kps[k])});
            }
        }
    }
    return plan;
}

cv::Mat rasterize(const PoseMap& pose_map, const RasterStyle& style) {
    if (pose_map.width <= 0 || pose_map.height <= 0) {
        throw ValidationError(
            fmt::format("cannot rasterize a {}x{} canvas", pose_map.width, pose_map.height));
    }
    cv::Mat image(pose_map.height, pose_map.width, CV_8UC3, to_scalar(style.background));
    const RasterPlan plan = plan_strokes(pose_map);

    // Interleave by person so later people paint over earlier ones.
    std::size_t s = 0;
    std::size_t d = 0;
    for (std::size_t p = 0; p < pose_map.people.size(); ++p) {
        for (; s < plan.segments.size() && plan.segments[s].person == static_cast<int>(p); ++s) {
            const auto& seg = plan.segments[s];
            cv::line(image, seg.from, seg.to, to_scalar(style.limb_palette[seg.edge]), style.limb_thickness,
                     cv::LINE_8);
        }
        for (; d < plan.discs.size() && plan.discs[d].person == static_cast<int>(p); ++d) {
            cv::circle(image, plan.discs[d].center, style.joint_radius, to_scalar(style.joint_color), cv::FILLED,
                       cv::LINE_8);
        }
    }
    return image;
}

std::string encode_png(const cv::Mat& rgb) {
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<std::uint8_t> bytes;
    if (!cv::imencode(".png", bgr, bytes)) {
        throw IoError("PNG encoding failed");
    }
    return {bytes.begin(), bytes.end()};
}

void write_png(const std::filesystem::path& path, const cv::Mat& rgb) { write_file(path, encode_png(rgb)); }

}  // namespace astra::pose
