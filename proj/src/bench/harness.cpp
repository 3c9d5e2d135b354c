#include "astra/bench/harness.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "astra/common/error.hpp"
#include "astra/common/io.hpp"
#include "astra/pose/oks.hpp"
#include "astra/pose/raster.hpp"

namespace astra::bench {

using nlohmann::json;

namespace {

cv::Rect person_region(const pose::PoseSkeleton& person, int width, int height) {
    double x0, y0, x1, y1;
    if (person.bbox) {
        x0 = person.bbox->x;
        y0 = person.bbox->y;
        x1 = person.bbox->x + person.bbox->w;
        y1 = person.bbox->y + person.bbox->h;
    } else {
        x0 = y0 = std::numeric_limits<double>::infinity();
        x1 = y1 = -std::numeric_limits<double>::infinity();
        for (const auto& kp : person.keypoints) {
            if (!kp.labeled()) continue;
            x0 = std::min(x0, kp.x);
            y0 = std::min(y0, kp.y);
            x1 = std::max(x1, kp.x + 1.0);
            y1 = std::max(y1, kp.y + 1.0);
        }
    }
    const int left = std::max(0, static_cast<int>(std::floor(x0)));
    const int top = std::max(0, static_cast<int>(std::floor(y0)));
    const int right = std::min(width, static_cast<int>(std::ceil(x1)));
    const int bottom = std::min(height, static_cast<int>(std::ceil(y1)));
    if (right <= left || bottom <= top) return {};
    return {left, top, right - left, bottom - top};
}

std::string join_flags(const std::vector<std::string>& flags) {
    std::string out;
    for (const auto& f : flags) {
        if (!out.empty()) out += ';';
        out += f;
    }
    return out;
}

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto end = text.find(sep, start);
        out.emplace_back(text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
        if (end == std::string_view::npos) break;
        start = end + 1;
    }
    return out;
}

double parse_real(const std::string& cell, std::size_t line_no, std::string_view column) {
    std::size_t used = 0;
    double value = 0.0;
    try {
        value = std::stod(cell, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != cell.size()) {
        throw ParseError(fmt::format("report line {}: '{}' is not a number in column {}", line_no, cell, column));
    }
    return value;
}

}  // namespace

void BenchmarkItem::validate(int max_subjects) const {
    if (subject_count() < 1 || subject_count() > static_cast<std::size_t>(max_subjects)) {
        throw ValidationError(
            fmt::format("item {} has {} subjects, expected 1..{}", image_id, subject_count(), max_subjects));
    }
    if (identity_crops.size() != subject_count()) {
        throw ValidationError(fmt::format("item {} has {} crops for {} subjects", image_id, identity_crops.size(),
                                          subject_count()));
    }
}

std::string placeholder_prompt(std::size_t subjects) { return fmt::format("{} people: <action unknown>", subjects); }

std::vector<BenchmarkItem> build_benchmark(const pose::CocoKeypointSet& coco, const BuildOptions& options) {
    if (options.max_subjects < 1) {
        throw ValidationError("max_subjects must be at least 1");
    }
    std::vector<BenchmarkItem> items;
    for (const auto& [image_id, people] : coco.people) {
        if (items.size() >= options.limit) break;
        std::vector<pose::PoseSkeleton> labeled;
        std::copy_if(people.begin(), people.end(), std::back_inserter(labeled),
                     [](const auto& p) { return p.labeled_count() > 0; });
        if (labeled.empty() || labeled.size() > static_cast<std::size_t>(options.max_subjects)) continue;

        const auto meta = coco.images.find(image_id);
        if (meta == coco.images.end()) {
            spdlog::warn("image {} has annotations but no entry in the images table; skipped", image_id);
            continue;
        }
        BenchmarkItem item;
        item.image_id = image_id;
        item.file_name = meta->second.file_name;
        item.gt_pose_map = {meta->second.width, meta->second.height, labeled};
        try {
            item.gt_pose_map.validate();
        } catch (const ValidationError& e) {
            spdlog::warn("image {}: {}; skipped", image_id, e.what());
            continue;
        }

        cv::Mat image;
        int width = meta->second.width;
        int height = meta->second.height;
        if (options.images_root) {
            const auto path = *options.images_root / item.file_name;
            cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
            if (bgr.empty()) {
                spdlog::warn("cannot read '{}'; image {} skipped", path.string(), image_id);
                continue;
            }
            cv::cvtColor(bgr, image, cv::COLOR_BGR2RGB);
            width = image.cols;
            height = image.rows;
        }
        bool usable = true;
        for (const auto& person : labeled) {
            IdentityCrop crop;
            crop.region = person_region(person, width, height);
            if (crop.region.empty()) {
                spdlog::warn("image {}: a person box lies outside the image; skipped", image_id);
                usable = false;
                break;
            }
            if (!image.empty()) crop.pixels = image(crop.region).clone();
            item.identity_crops.push_back(std::move(crop));
        }
        if (!usable) continue;

        const auto caption = options.captions.find(image_id);
        item.prompt = caption != options.captions.end() && !trim(caption->second).empty()
                          ? std::string(trim(caption->second))
                          : placeholder_prompt(labeled.size());
        items.push_back(std::move(item));
    }
    if (items.empty()) {
        throw ValidationError(fmt::format("no image has 1..{} labeled persons", options.max_subjects));
    }
    return items;
}

std::filesystem::path save_benchmark(std::vector<BenchmarkItem>& items, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "crops");
    std::filesystem::create_directories(dir / "poses");
    json manifest = json::array();
    for (auto& item : items) {
        json crops = json::array();
        for (std::size_t k = 0; k < item.identity_crops.size(); ++k) {
            auto& crop = item.identity_crops[k];
            json entry{{"region", {crop.region.x, crop.region.y, crop.region.width, crop.region.height}}};
            if (!crop.pixels.empty()) {
                const auto rel = fmt::format("crops/{}_{}.png", item.image_id, k);
                pose::write_png(dir / rel, crop.pixels);
                crop.path = (dir / rel).string();
                entry["path"] = rel;
            }
            crops.push_back(std::move(entry));
        }
        const auto pose_rel = fmt::format("poses/{}.png", item.image_id);
        pose::write_png(dir / pose_rel, pose::rasterize(item.gt_pose_map));
        manifest.push_back({{"image_id", item.image_id},
                            {"file_name", item.file_name},
                            {"prompt", item.prompt},
                            {"subject_count", item.subject_count()},
                            {"identity_crops", std::move(crops)},
                            {"gt_pose_png", pose_rel},
                            {"gt_pose_map", pose::to_json(item.gt_pose_map)}});
    }
    const auto path = dir / "benchmark.json";
    write_file(path, json{{"items", manifest}}.dump(1));
    return path;
}

std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& manifest) {
    const auto base = manifest.parent_path();
    std::vector<BenchmarkItem> items;
    try {
        const auto doc = json::parse(read_file(manifest));
        for (const auto& entry : doc.at("items")) {
            BenchmarkItem item;
            item.image_id = entry.at("image_id").get<ImageId>();
            item.file_name = entry.value("file_name", "");
            item.prompt = entry.at("prompt").get<std::string>();
            item.gt_pose_map = pose::pose_map_from_json(entry.at("gt_pose_map"));
            for (const auto& c : entry.at("identity_crops")) {
                IdentityCrop crop;
                const auto r = c.at("region").get<std::vector<int>>();
                if (r.size() != 4) throw ParseError("crop region needs 4 values");
                crop.region = {r[0], r[1], r[2], r[3]};
                if (c.contains("path")) crop.path = (base / c["path"].get<std::string>()).string();
                item.identity_crops.push_back(std::move(crop));
            }
            items.push_back(std::move(item));
        }
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("{}: {}", manifest.string(), e.what()));
    }
    return items;
}

std::map<ImageId, pose::PoseMap> parse_candidates(std::string_view document) {
    std::map<ImageId, pose::PoseMap> out;
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw ParseError(fmt::format("candidates: {}", e.what()));
    }
    if (!doc.is_object()) {
        throw ParseError("candidates must be an object keyed by image id");
    }
    for (const auto& [key, value] : doc.items()) {
        std::size_t used = 0;
        ImageId id = 0;
        try {
            id = std::stoll(key, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != key.size()) {
            throw ParseError(fmt::format("candidate key '{}' is not an image id", key));
        }
        try {
            out.emplace(id, pose::pose_map_from_json(value));
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("candidate {}: {}", key, e.what()));
        }
    }
    return out;
}

double HttpMetricPlugin::score(const PluginRequest& request) {
    const json body{{"prompt", request.prompt}, {"refs", request.refs}, {"candidate", request.candidate}};
    json reply;
    try {
        reply = json::parse(pool_.post_json("/score", body.dump()));
    } catch (const json::parse_error& e) {
        throw ClientError(fmt::format("plugin {} reply is not JSON: {}", name_, e.what()));
    }
    const auto value = reply.find("value");
    if (value == reply.end() || !value->is_number()) {
        throw ClientError(fmt::format("plugin {} reply has no numeric 'value'", name_));
    }
    if (const auto name = reply.find("name"); name != reply.end() && name->is_string() && *name != name_) {
        throw ClientError(fmt::format("plugin {} answered as '{}'", name_, name->get<std::string>()));
    }
    return value->get<double>();
}

void EvaluationReport::recompute_aggregates() {
    aggregates.clear();
    auto mean = [this](auto value_of) -> std::optional<double> {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& item : items) {
            if (const std::optional<double> v = value_of(item)) {
                sum += *v;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return sum / static_cast<double>(n);
    };
    aggregates["oks"] = mean([](const ItemScore& s) { return std::optional<double>(s.oks); });
    for (const auto& name : metric_names) {
        aggregates[name] = mean([&name](const ItemScore& s) -> std::optional<double> {
            const auto it = s.metrics.find(name);
            return it == s.metrics.end() ? std::nullopt : it->second;
        });
    }
}

EvaluationReport evaluate(const std::vector<BenchmarkItem>& items, const std::map<ImageId, pose::PoseMap>& candidates,
                          const std::vector<MetricPlugin*>& plugins, const EvaluateOptions& options) {
    EvaluationReport report;
    report.method = options.method;
    for (const auto* p : plugins) {
        const auto name = p->name();
        if (name.empty() || name.find_first_of(",;\n\r") != std::string::npos || name == "oks" || name == "item_id" ||
            name == "flags" || std::count(report.metric_names.begin(), report.metric_names.end(), name) != 0) {
            throw ValidationError(fmt::format("unusable plugin name '{}'", name));
        }
        report.metric_names.push_back(name);
    }
    for (const auto& item : items) {
        ItemScore score;
        score.item_id = item.image_id;
        const auto candidate = candidates.find(item.image_id);
        if (candidate == candidates.end()) {
            score.oks = 0.0;
            score.flags.emplace_back(kFlagMissingCandidate);
        } else {
            score.oks = pose::match_and_score(candidate->second.people, item.gt_pose_map.people);
        }
        PluginRequest request;
        request.prompt = item.prompt;
        for (const auto& crop : item.identity_crops) request.refs.push_back(crop.path);
        if (const auto path = options.candidate_paths.find(item.image_id); path != options.candidate_paths.end()) {
            request.candidate = path->second;
        }
        for (auto* plugin : plugins) {
            try {
                score.metrics[plugin->name()] = plugin->score(request);
            } catch (const std::exception& e) {
                spdlog::warn("plugin {} failed on item {}: {}", plugin->name(), item.image_id, e.what());
                score.metrics[plugin->name()] = std::nullopt;
                score.flags.push_back(fmt::format("plugin_failed:{}", plugin->name()));
            }
        }
        report.items.push_back(std::move(score));
    }
    report.recompute_aggregates();
    return report;
}

std::string report_to_csv(const EvaluationReport& report) {
    std::string out = "item_id,oks";
    for (const auto& name : report.metric_names) out += "," + name;
    out += ",flags\n";
    for (const auto& item : report.items) {
        out += fmt::format("{},{}", item.item_id, format_real(item.oks));
        for (const auto& name : report.metric_names) {
            out += ',';
            const auto it = item.metrics.find(name);
            if (it != item.metrics.end() && it->second) out += format_real(*it->second);
        }
        out += ',' + join_flags(item.flags) + '\n';
    }
    return out;
}

json report_to_json(const EvaluationReport& report) {
    json columns = json::array({"item_id", "oks"});
    for (const auto& name : report.metric_names) columns.push_back(name);
    columns.push_back("flags");
    json rows = json::array();
    for (const auto& item : report.items) {
        json row{{"item_id", item.item_id}, {"oks", item.oks}};
        for (const auto& name : report.metric_names) {
            const auto it = item.metrics.find(name);
            row[name] = it != item.metrics.end() && it->second ? json(*it->second) : json(nullptr);
        }
        row["flags"] = item.flags;
        rows.push_back(std::move(row));
    }
    json aggregates = json::object();
    for (const auto& [name, value] : report.aggregates) aggregates[name] = value ? json(*value) : json(nullptr);
    return {{"method", report.method}, {"columns", columns}, {"rows", rows}, {"aggregates", aggregates}};
}

EvaluationReport report_from_csv(std::string_view text) {
    const auto lines = nonblank_lines(text);
    if (lines.empty()) {
        throw ParseError("report is empty");
    }
    const auto header = split(lines.front().text, ',');
    if (header.size() < 3 || header[0] != "item_id" || header[1] != "oks" || header.back() != "flags") {
        throw ParseError("report header must be item_id,oks,...,flags");
    }
    EvaluationReport report;
    report.metric_names.assign(header.begin() + 2, header.end() - 1);
    for (std::size_t n = 1; n < lines.size(); ++n) {
        const auto cells = split(lines[n].text, ',');
        if (cells.size() != header.size()) {
            throw ParseError(fmt::format("report line {}: {} cells, expected {}", lines[n].number, cells.size(),
                                         header.size()));
        }
        ItemScore item;
        std::size_t used = 0;
        try {
            item.item_id = std::stoll(cells[0], &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != cells[0].size()) {
            throw ParseError(fmt::format("report line {}: bad item_id '{}'", lines[n].number, cells[0]));
        }
        item.oks = parse_real(cells[1], lines[n].number, "oks");
        for (std::size_t c = 0; c < report.metric_names.size(); ++c) {
            const auto& cell = cells[c + 2];
            item.metrics[report.metric_names[c]] =
                cell.empty() ? std::nullopt : std::optional<double>(parse_real(cell, lines[n].number, header[c + 2]));
        }
        if (!cells.back().empty()) item.flags = split(cells.back(), ';');
        report.items.push_back(std::move(item));
    }
    report.recompute_aggregates();
    return report;
}

void emit_report(const EvaluationReport& report, const std::filesystem::path& path, ReportFormat format) {
    write_file(path, format == ReportFormat::Csv ? report_to_csv(report) : report_to_json(report).dump(2) + "\n");
}

}  // namespace astra::bench
