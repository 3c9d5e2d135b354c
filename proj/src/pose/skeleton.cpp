#include "astra/pose/skeleton.hpp"

#include <fmt/format.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "astra/common/error.hpp"

namespace astra::pose {

using nlohmann::json;

std::size_t PoseSkeleton::labeled_count() const {
    std::size_t count = 0;
    for (const auto& kp : keypoints) {
        if (kp.labeled()) {
            ++count;
        }
    }
    return count;
}

void PoseSkeleton::validate() const {
    if (labeled_count() > 0 && !(area > 0.0)) {
        throw ValidationError(fmt::format("skeleton has labeled keypoints but area {} is not positive", area));
    }
    for (const auto& kp : keypoints) {
        if (kp.labeled() && !(std::isfinite(kp.x) && std::isfinite(kp.y))) {
            throw ValidationError("skeleton has a non-finite labeled keypoint");
        }
    }
}

void PoseMap::validate() const {
    if (width <= 0 || height <= 0) {
        throw ValidationError(fmt::format("pose map size {}x{} must be positive", width, height));
    }
    for (std::size_t p = 0; p < people.size(); ++p) {
        people[p].validate();
        for (std::size_t k = 0; k < kNumKeypoints; ++k) {
            const auto& kp = people[p].keypoints[k];
            if (kp.visible() && !(kp.x >= 0.0 && kp.x < width && kp.y >= 0.0 && kp.y < height)) {
                throw ValidationError(fmt::format("person {} keypoint {} at ({}, {}) lies outside the {}x{} canvas",
                                                  p, kKeypointNames[k], kp.x, kp.y, width, height));
            }
        }
    }
}

Visibility visibility_from_int(int value) {
    switch (value) {
        case 0:
            return Visibility::NotLabeled;
        case 1:
            return Visibility::Occluded;
        case 2:
            return Visibility::Visible;
        default:
            throw ValidationError(fmt::format("visibility flag {} is not in {{0, 1, 2}}", value));
    }
}

PoseSkeleton skeleton_from_triplets(const std::vector<double>& triplets, double area, std::optional<BBox> bbox) {
    if (triplets.size() != 3 * kNumKeypoints) {
        throw ValidationError(
            fmt::format("keypoint array has {} values, expected {}", triplets.size(), 3 * kNumKeypoints));
    }
    PoseSkeleton skeleton;
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        const double v = triplets[3 * k + 2];
        if (v != std::floor(v)) {
            throw ValidationError(fmt::format("visibility flag {} is not an integer", v));
        }
        skeleton.keypoints[k] = Keypoint{triplets[3 * k], triplets[3 * k + 1], visibility_from_int(static_cast<int>(v))};
    }
    skeleton.area = area;
    skeleton.bbox = bbox;
    return skeleton;
}

json to_json(const PoseSkeleton& skeleton) {
    json kps = json::array();
    for (const auto& kp : skeleton.keypoints) {
        kps.push_back(kp.x);
        kps.push_back(kp.y);
        kps.push_back(static_cast<int>(kp.v));
    }
    json out = {{"keypoints", std::move(kps)}, {"area", skeleton.area}};
    if (skeleton.bbox) {
        out["bbox"] = {skeleton.bbox->x, skeleton.bbox->y, skeleton.bbox->w, skeleton.bbox->h};
    }
    return out;
}

json to_json(const PoseMap& map) {
    json people = json::array();
    for (const auto& person : map.people) {
        people.push_back(to_json(person));
    }
    return {{"width", map.width}, {"height", map.height}, {"people", std::move(people)}};
}

PoseSkeleton skeleton_from_json(const json& doc) {
    try {
        std::optional<BBox> bbox;
        if (auto it = doc.find("bbox"); it != doc.end() && !it->is_null()) {
            const auto values = it->get<std::vector<double>>();
            if (values.size() != 4) {
                throw ValidationError(fmt::format("bbox has {} values, expected 4", values.size()));
            }
            bbox = BBox{values[0], values[1], values[2], values[3]};
        }
        return skeleton_from_triplets(doc.at("keypoints").get<std::vector<double>>(), doc.at("area").get<double>(),
                                      bbox);
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("malformed skeleton: {}", e.what()));
    }
}

PoseMap pose_map_from_json(const json& doc) {
    PoseMap map;
    try {
        map.width = doc.at("width").get<int>();
        map.height = doc.at("height").get<int>();
        const auto& people = doc.at("people");
        if (!people.is_array()) {
            throw ParseError("pose map 'people' must be an array");
        }
        for (std::size_t p = 0; p < people.size(); ++p) {
            try {
                map.people.push_back(skeleton_from_json(people[p]));
            } catch (const ValidationError& e) {
                throw ValidationError(fmt::format("people[{}]: {}", p, e.what()));
            } catch (const ParseError& e) {
                throw ParseError(fmt::format("people[{}]: {}", p, e.what()));
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("malformed pose map: {}", e.what()));
    }
    return map;
}

}  // namespace astra::pose
