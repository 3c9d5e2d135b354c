#include "astra/pose/coco.hpp"

#include <fmt/format.h>

#include <nlohmann/json.hpp>

#include "astra/common/error.hpp"

namespace astra::pose {

using nlohmann::json;

namespace {

json parse_document(std::string_view document) {
    try {
        return json::parse(document);
    } catch (const json::parse_error& e) {
        throw ParseError(fmt::format("COCO document is not valid JSON: {}", e.what()));
    }
}

std::optional<BBox> read_bbox(const json& entry) {
    auto it = entry.find("bbox");
    if (it == entry.end() || it->is_null()) {
        return std::nullopt;
    }
    const auto values = it->get<std::vector<double>>();
    if (values.size() != 4) {
        throw ValidationError(fmt::format("bbox has {} values, expected 4", values.size()));
    }
    return BBox{values[0], values[1], values[2], values[3]};
}

}  // namespace

CocoKeypointSet parse_coco_dataset(std::string_view document) {
    const json doc = parse_document(document);
    if (!doc.is_object()) {
        throw ParseError("COCO document must be a JSON object");
    }
    CocoKeypointSet out;

    if (auto images = doc.find("images"); images != doc.end()) {
        if (!images->is_array()) {
            throw ParseError("COCO 'images' must be an array");
        }
        for (std::size_t i = 0; i < images->size(); ++i) {
            const auto& entry = (*images)[i];
            try {
                CocoImage image;
                image.id = entry.at("id").get<ImageId>();
                image.file_name = entry.value("file_name", std::string{});
                image.width = entry.value("width", 0);
                image.height = entry.value("height", 0);
                out.images.emplace(image.id, std::move(image));
            } catch (const json::exception& e) {
                throw ParseError(fmt::format("images[{}]: {}", i, e.what()));
            }
        }
    }

    auto annotations = doc.find("annotations");
    if (annotations == doc.end() || !annotations->is_array()) {
        throw ParseError("COCO document has no 'annotations' array");
    }
    for (std::size_t i = 0; i < annotations->size(); ++i) {
        const auto& entry = (*annotations)[i];
        try {
            if (!entry.is_object()) {
                throw ParseError("entry is not an object");
            }
            if (!entry.contains("keypoints")) {
                continue;
            }
            const auto image_id = entry.at("image_id").get<ImageId>();
            const auto triplets = entry.at("keypoints").get<std::vector<double>>();
            const double area = entry.at("area").get<double>();
            auto skeleton = skeleton_from_triplets(triplets, area, read_bbox(entry));
            if (skeleton.labeled_count() == 0) {
                continue;
            }
            skeleton.validate();
            out.people[image_id].push_back(std::move(skeleton));
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("annotations[{}]: {}", i, e.what()));
        } catch (const ValidationError& e) {
            throw ValidationError(fmt::format("annotations[{}]: {}", i, e.what()));
        } catch (const ParseError& e) {
            throw ParseError(fmt::format("annotations[{}]: {}", i, e.what()));
        }
    }
    return out;
}

std::map<ImageId, std::vector<PoseSkeleton>> parse_coco_keypoints(std::string_view document) {
    return parse_coco_dataset(document).people;
}

std::map<ImageId, std::string> parse_coco_captions(std::string_view document) {
    const json doc = parse_document(document);
    std::map<ImageId, std::string> captions;
    auto annotations = doc.find("annotations");
    if (annotations == doc.end() || !annotations->is_array()) {
        throw ParseError("captions document has no 'annotations' array");
    }
    for (std::size_t i = 0; i < annotations->size(); ++i) {
        try {
            const auto& entry = (*annotations)[i];
            captions.try_emplace(entry.at("image_id").get<ImageId>(), entry.at("caption").get<std::string>());
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("annotations[{}]: {}", i, e.what()));
        }
    }
    return captions;
}

}  // namespace astra::pose
