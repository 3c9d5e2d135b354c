#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "astra/pose/skeleton.hpp"

namespace astra::pose {

using ImageId = std::int64_t;

struct CocoImage {
    ImageId id = 0;
    std::string file_name;
    int width = 0;
    int height = 0;
};

/// The slice of a COCO keypoints file the engine uses.
struct CocoKeypointSet {
    std::map<ImageId, CocoImage> images;
    /// Person skeletons grouped by image id, annotation order preserved.
    std::map<ImageId, std::vector<PoseSkeleton>> people;
};

/// Parses COCO keypoint annotations. Annotations with no labeled keypoints
/// are dropped; annotations without a "keypoints" member (other categories)
/// are ignored.
///
/// Throws ParseError for malformed JSON or entries, naming the offending
/// entry, and ValidationError when a keypoint array does not hold 51 values.
std::map<ImageId, std::vector<PoseSkeleton>> parse_coco_keypoints(std::string_view document);

/// Same as parse_coco_keypoints but also keeps the "images" table.
CocoKeypointSet parse_coco_dataset(std::string_view document);

/// Reads a COCO captions file into image id -> first caption.
std::map<ImageId, std::string> parse_coco_captions(std::string_view document);

}  // namespace astra::pose
