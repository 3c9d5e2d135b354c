#pragma once

// COCO-derived multi-person benchmark: item selection, candidate scoring and
// report files.

#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "astra/pose/coco.hpp"
#include "astra/pose/skeleton.hpp"
#include "astra/retrieval/clients.hpp"

namespace astra::bench {

using pose::ImageId;

struct IdentityCrop {
    /// Pixel rectangle inside the source image.
    cv::Rect region;
    /// RGB pixels; empty when crops were not requested.
    cv::Mat pixels;
    /// Where the crop was written, once saved.
    std::string path;
};

struct BenchmarkItem {
    ImageId image_id = 0;
    std::string file_name;
    std::string prompt;
    std::vector<IdentityCrop> identity_crops;
    pose::PoseMap gt_pose_map;

    std::size_t subject_count() const { return gt_pose_map.people.size(); }
    /// One crop per skeleton, 1..max_subjects skeletons.
    void validate(int max_subjects = 3) const;
};

struct BuildOptions {
    /// Directory holding the COCO images; crops are cut only when set.
    std::optional<std::filesystem::path> images_root;
    std::size_t limit = std::numeric_limits<std::size_t>::max();
    int max_subjects = 3;
    /// image id -> caption; images without one get a placeholder prompt.
    std::map<ImageId, std::string> captions;
};

/// Placeholder prompt for an image without a caption.
std::string placeholder_prompt(std::size_t subjects);

/// Selects images with 1..max_subjects labeled persons in ascending id order,
/// up to `limit`. Images whose file cannot be read are skipped with a
/// warning. Throws ValidationError when nothing qualifies.
std::vector<BenchmarkItem> build_benchmark(const pose::CocoKeypointSet& coco, const BuildOptions& options = {});

/// Writes crops/<id>_<k>.png, poses/<id>.png and a benchmark.json manifest
/// under `dir`, filling in each crop's path. Returns the manifest path.
std::filesystem::path save_benchmark(std::vector<BenchmarkItem>& items, const std::filesystem::path& dir);

/// Reads a manifest written by save_benchmark. Crop pixels are not loaded.
std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& manifest);

/// {"<image_id>": PoseMap, ...}
std::map<ImageId, pose::PoseMap> parse_candidates(std::string_view document);

struct PluginRequest {
    std::string prompt;
    std::vector<std::string> refs;
    std::string candidate;
};

/// External metric. score() throws on any failure.
class MetricPlugin {
public:
    virtual ~MetricPlugin() = default;
    virtual std::string name() const = 0;
    virtual double score(const PluginRequest& request) = 0;
};

/// POST /score {"prompt", "refs", "candidate"} -> {"name", "value"}.
class HttpMetricPlugin final : public MetricPlugin {
public:
    HttpMetricPlugin(std::string name, retrieval::HttpEndpoint endpoint)
        : name_(std::move(name)), pool_(std::move(endpoint)) {}
    std::string name() const override { return name_; }
    double score(const PluginRequest& request) override;

private:
    std::string name_;
    retrieval::ConnectionPool pool_;
};

inline constexpr std::string_view kFlagMissingCandidate = "missing_candidate";

struct ItemScore {
    ImageId item_id = 0;
    double oks = 0.0;
    /// Keyed by plugin name; nullopt when the plugin failed.
    std::map<std::string, std::optional<double>> metrics;
    std::vector<std::string> flags;
};

struct EvaluationReport {
    std::string method;
    /// Plugin columns in output order.
    std::vector<std::string> metric_names;
    std::vector<ItemScore> items;
    /// "oks" and each metric name -> mean over the items where present.
    std::map<std::string, std::optional<double>> aggregates;

    void recompute_aggregates();
};

struct EvaluateOptions {
    std::string method;
    /// Candidate artifact path handed to plugins, per item.
    std::map<ImageId, std::string> candidate_paths;
};

EvaluationReport evaluate(const std::vector<BenchmarkItem>& items, const std::map<ImageId, pose::PoseMap>& candidates,
                          const std::vector<MetricPlugin*>& plugins = {}, const EvaluateOptions& options = {});

enum class ReportFormat { Csv, Json };

/// Columns: item_id, oks, plugin columns, flags (';'-separated). Absent
/// values are empty cells.
std::string report_to_csv(const EvaluationReport& report);
nlohmann::json report_to_json(const EvaluationReport& report);
EvaluationReport report_from_csv(std::string_view text);
void emit_report(const EvaluationReport& report, const std::filesystem::path& path, ReportFormat format);

}  // namespace astra::bench
