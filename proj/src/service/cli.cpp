#include "astra/service/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <optional>
#include <ostream>
#include <random>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "astra/bench/harness.hpp"
#include "astra/common/error.hpp"
#include "astra/common/io.hpp"
#include "astra/curation/curation.hpp"
#include "astra/dsm/adapter.hpp"
#include "astra/europe/kernel.hpp"
#include "astra/pose/coco.hpp"
#include "astra/pose/oks.hpp"
#include "astra/pose/raster.hpp"
#include "astra/retrieval/pipeline.hpp"
#include "astra/service/engine.hpp"

namespace astra::service {

using nlohmann::json;

index::FlatIndex build_index_from_records(std::span<const index::IngestRecord> records,
                                          retrieval::EmbeddingClient& embedder) {
    std::vector<index::IndexEntry> entries;
    entries.reserve(records.size());
    for (const auto& record : records) {
        auto vector = record.vector ? index::l2_normalize(*record.vector) : retrieval::embed_query(record.prompt, embedder);
        entries.push_back({record.id, record.prompt, std::move(vector), record.pose_ref});
    }
    return index::FlatIndex::build(std::move(entries));
}

namespace {

std::atomic<bool> g_stop_requested{false};

extern "C" void request_stop(int) { g_stop_requested.store(true); }

struct GlobalFlags {
    std::optional<std::string> config;
    std::optional<std::string> index;
    std::optional<std::string> pose_store;
    std::optional<std::string> embed_url;
    std::optional<std::string> normalize_url;
    std::optional<double> alpha_u;
    std::optional<std::string> log_level;
};

EngineConfig resolve_config(const GlobalFlags& flags, const EnvLookup& env) {
    std::optional<std::filesystem::path> path;
    if (flags.config) path = *flags.config;
    EngineConfig cfg = load_config(path, env);
    if (flags.index) cfg.index_path = *flags.index;
    if (flags.pose_store) cfg.pose_store_path = *flags.pose_store;
    if (flags.embed_url) cfg.embed_url = *flags.embed_url;
    if (flags.normalize_url) cfg.normalize_url = *flags.normalize_url;
    if (flags.alpha_u) cfg.alpha_u = *flags.alpha_u;
    if (flags.log_level) cfg.log_level = *flags.log_level;
    cfg.validate();
    return cfg;
}

void use_stderr_logging(const std::string& level) {
    auto logger = std::make_shared<spdlog::logger>("astra", std::make_shared<spdlog::sinks::stderr_color_sink_mt>());
    spdlog::set_default_logger(std::move(logger));
    spdlog::set_level(spdlog::level::from_str(level));
}

json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

pose::PoseMap read_pose_map(const std::filesystem::path& path) {
    try {
        return pose::pose_map_from_json(read_json_file(path));
    } catch (const ParseError& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

europe::GridSize parse_grid(const std::string& text) {
    int w = 0;
    int h = 0;
    char sep = 0;
    char extra = 0;
    if (std::sscanf(text.c_str(), "%d%c%d%c", &w, &sep, &h, &extra) != 3 || sep != 'x') {
        throw ValidationError(fmt::format("grid size must look like WxH, got '{}'", text));
    }
    return {w, h};
}

std::pair<std::string, std::string> parse_plugin(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
        throw ValidationError(fmt::format("plugin must be name=url, got '{}'", spec));
    }
    return {spec.substr(0, eq), spec.substr(eq + 1)};
}

std::vector<curation::LabeledScore> labeled_scores(const std::vector<curation::CsvSample>& rows,
                                                   const curation::Weights& weights) {
    std::vector<curation::LabeledScore> out;
    for (const auto& row : rows) {
        if (row.target != 0.0 && row.target != 1.0) {
            throw ValidationError(fmt::format("label for '{}' must be 0/1 or true/false", row.id));
        }
        out.push_back({curation::aggregate_score(row.scores, weights), row.target == 1.0});
    }
    return out;
}

std::string format_positions(std::string_view label, std::span<const europe::PositionIndex> positions) {
    std::string line = fmt::format("{:<8}", label);
    for (const auto& p : positions) line += fmt::format(" ({},{})", p.i, p.j);
    return line + "\n";
}

std::string format_position_table(const europe::PositionTable& table, europe::EncodingMode mode,
                                  std::size_t collisions) {
    std::string text = fmt::format("mode: {}\n", europe::to_string(mode));
    if (!table.text.empty()) text += format_positions("text", table.text);
    for (std::size_t k = 0; k < table.refs.size(); ++k) text += format_positions(fmt::format("ref{}", k), table.refs[k]);
    if (!table.pose.empty()) text += format_positions("pose", table.pose);
    text += format_positions("latent", table.latent);
    text += fmt::format("ref/latent collisions: {}\n", collisions);
    return text;
}

json grad_check_demo(std::uint64_t seed, bool tamper) {
    std::mt19937_64 rng(seed);
    dsm::AdapterConfig cfg{.d = 8, .d_v = 6, .head_dim = 4, .n_heads = 2, .n_layers = 0};
    const auto params = dsm::AdapterParams::random(cfg, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    dsm::Matrix text(5, cfg.d);
    dsm::Matrix visual(7, cfg.d_v);
    for (auto* m : {&text, &visual}) {
        for (Eigen::Index k = 0; k < m->size(); ++k) m->data()[k] = normal(rng);
    }
    dsm::GradCheckOptions options;
    if (tamper) {
        options.tamper = [](dsm::GradientSet& set) {
            const auto it = std::find(set.names.begin(), set.names.end(), "head0.wk");
            set.values[static_cast<std::size_t>(it - set.names.begin())](1, 2) *= 1.05;
        };
    }
    const auto report = dsm::grad_check(dsm::CheckedOp::DsmForward, text, visual, params.global, options);
    return {{"seed", seed},
            {"tampered", tamper},
            {"checked", report.checked},
            {"max_relative_error", report.max_relative_error},
            {"worst_tensor", report.worst_tensor},
            {"worst_entry", {report.worst_row, report.worst_col}}};
}

int serve(const EngineConfig& cfg, std::optional<std::string> host, std::optional<int> port, std::ostream& out) {
    const auto engine = Engine::open(cfg, {.passthrough = false, .require_pose_store = true});
    Server server(*engine);
    const int bound = server.bind(host.value_or(cfg.host), port.value_or(cfg.port));
    out << fmt::format("listening on http://{}:{}\n", host.value_or(cfg.host), bound) << std::flush;

    g_stop_requested.store(false);
    std::signal(SIGINT, request_stop);
    std::signal(SIGTERM, request_stop);
    std::atomic<bool> finished{false};
    std::thread watcher([&] {
        while (!finished.load() && !g_stop_requested.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        server.stop();
    });
    server.run();
    finished.store(true);
    watcher.join();
    std::signal(SIGINT, SIG_DFL);
    std::signal(SIGTERM, SIG_DFL);
    spdlog::info("server stopped");
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env) {
    CLI::App app{"Pose retrieval engine and reference kernels", "astra"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalFlags flags;
    app.add_option("--config", flags.config, "TOML config file (default: $ASTRA_CONFIG)");
    app.add_option("--index", flags.index, "Index file");
    app.add_option("--pose-store", flags.pose_store, "Pose store JSON");
    app.add_option("--embed-url", flags.embed_url, "Embedding service base URL");
    app.add_option("--normalize-url", flags.normalize_url, "Normalization service base URL");
    app.add_option("--alpha-u", flags.alpha_u, "Retrieval gate threshold");
    app.add_option("--log-level", flags.log_level, "trace, debug, info, warn, error, critical or off");

    std::string ingest_path;
    std::optional<std::string> index_out;
    auto* build_index = app.add_subcommand("build-index", "Build an index from JSON-lines ingest records");
    build_index->add_option("input", ingest_path, "Ingest file")->required();
    build_index->add_option("--out", index_out, "Output index (default: configured index path)");

    std::string prompt;
    bool passthrough = false;
    auto* retrieve = app.add_subcommand("retrieve", "Run the retrieval pipeline for one prompt");
    retrieve->add_option("--prompt", prompt, "User prompt")->required();
    retrieve->add_flag("--passthrough", passthrough, "Skip prompt normalization");

    std::string pose_in;
    std::string png_out;
    auto* rasterize = app.add_subcommand("rasterize", "Render a pose map JSON file to PNG");
    rasterize->add_option("input", pose_in, "Pose map JSON")->required();
    rasterize->add_option("--out", png_out, "Output PNG")->required();

    std::string pred_path;
    std::string gt_path;
    auto* oks = app.add_subcommand("oks", "Score a predicted pose map against a ground-truth one");
    oks->add_option("pred", pred_path, "Predicted pose map JSON")->required();
    oks->add_option("gt", gt_path, "Ground-truth pose map JSON")->required();

    std::string prefs_path;
    std::optional<std::string> labels_path;
    std::optional<std::string> params_out;
    auto* calibrate = app.add_subcommand("calibrate", "Fit curation weights and threshold");
    calibrate->add_option("--prefs", prefs_path, "CSV id,s1,s2,s3,preference")->required();
    calibrate->add_option("--labels", labels_path, "CSV id,s1,s2,s3,accept");
    calibrate->add_option("--out", params_out, "Output parameter JSON (default: stdout)");

    std::string coco_path;
    std::optional<std::string> images_root;
    std::optional<std::string> captions_path;
    std::optional<std::size_t> limit;
    int max_subjects = 3;
    std::string bench_dir;
    auto* bench_build = app.add_subcommand("bench-build", "Select benchmark items from a COCO keypoints file");
    bench_build->add_option("--coco", coco_path, "COCO keypoints JSON")->required();
    bench_build->add_option("--images", images_root, "Image directory for identity crops");
    bench_build->add_option("--captions", captions_path, "COCO captions JSON");
    bench_build->add_option("--limit", limit, "Maximum number of items");
    bench_build->add_option("--max-subjects", max_subjects, "Maximum persons per image")->check(CLI::PositiveNumber);
    bench_build->add_option("--out", bench_dir, "Output directory")->required();

    std::string manifest_path;
    std::string candidates_path;
    std::vector<std::string> plugin_specs;
    std::string method = "candidate";
    std::string report_out;
    std::optional<std::string> report_format;
    auto* bench_eval = app.add_subcommand("bench-eval", "Score candidate pose maps against a benchmark");
    bench_eval->add_option("--manifest", manifest_path, "benchmark.json")->required();
    bench_eval->add_option("--candidates", candidates_path, "JSON object of image id -> pose map")->required();
    bench_eval->add_option("--plugin", plugin_specs, "Metric plugin name=url (repeatable)");
    bench_eval->add_option("--method", method, "Method label for the report");
    bench_eval->add_option("--out", report_out, "Report file")->required();
    bench_eval->add_option("--format", report_format, "csv or json (default: from extension)")
        ->check(CLI::IsMember({"csv", "json"}));

    auto* kernel_demo = app.add_subcommand("kernel-demo", "Positional encoding and adapter diagnostics");
    kernel_demo->require_subcommand(1);
    std::string latent_spec = "4x4";
    std::vector<std::string> ref_specs;
    std::optional<std::string> pose_spec;
    int text_len = 0;
    std::string mode_name = "asymmetric";
    auto* positions = kernel_demo->add_subcommand("positions", "Print the position table for a layout");
    positions->add_option("--latent", latent_spec, "Latent grid WxH");
    positions->add_option("--ref", ref_specs, "Reference grid WxH (repeatable)");
    positions->add_option("--pose", pose_spec, "Pose grid WxH");
    positions->add_option("--text-len", text_len, "Number of text tokens")->check(CLI::NonNegativeNumber);
    positions->add_option("--mode", mode_name, "asymmetric, symmetric_rope or symmetric_unope");
    bool positions_json = false;
    positions->add_flag("--json", positions_json, "Print JSON instead of a table");
    std::uint64_t seed = 7;
    bool tamper = false;
    auto* grad = kernel_demo->add_subcommand("grad-check", "Finite-difference check of the adapter gradients");
    grad->add_option("--seed", seed, "Random seed");
    grad->add_flag("--tamper", tamper, "Corrupt one analytic gradient entry");

    auto* health = app.add_subcommand("health", "Print the health document of the loaded index");
    auto* index_info = app.add_subcommand("index-info", "Print index metadata");
    index::EntryId pose_entry = 0;
    std::string pose_png_out;
    auto* pose_cmd = app.add_subcommand("pose", "Render the stored pose map of an index entry");
    pose_cmd->add_option("--entry", pose_entry, "Index entry id")->required();
    pose_cmd->add_option("--out", pose_png_out, "Output PNG")->required();

    std::optional<std::string> host;
    std::optional<int> port;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
    serve_cmd->add_option("--host", host, "Bind address");
    serve_cmd->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const EngineConfig cfg = resolve_config(flags, env);
        use_stderr_logging(cfg.log_level);

        if (build_index->parsed()) {
            const std::string text = read_file(ingest_path);
            const auto records = index::parse_ingest_jsonl(text);
            auto embedder = make_embedder(cfg);
            const auto built = build_index_from_records(records, *embedder);
            const std::filesystem::path target = index_out ? std::filesystem::path(*index_out) : cfg.index_path;
            if (target.empty()) throw ValidationError("no output path: pass --out or configure index_path");
            built.save(target);
            out << fmt::format("wrote {} entries to {}\n", built.size(), target.string());
        } else if (retrieve->parsed()) {
            const auto engine = Engine::open(cfg, {.passthrough = passthrough});
            out << engine->retrieve_json(prompt).dump(2) << "\n";
        } else if (rasterize->parsed()) {
            const auto map = read_pose_map(pose_in);
            pose::write_png(png_out, pose::rasterize(map));
            out << fmt::format("wrote {}\n", png_out);
        } else if (oks->parsed()) {
            const auto pred = read_pose_map(pred_path);
            const auto gt = read_pose_map(gt_path);
            out << format_real(pose::match_and_score(pred.people, gt.people)) << "\n";
        } else if (calibrate->parsed()) {
            const std::string prefs_text = read_file(prefs_path);
            std::vector<curation::PreferenceSample> prefs;
            for (const auto& row : curation::read_calibration_csv(prefs_text)) prefs.push_back({row.scores, row.target});
            curation::CurationParams params;
            params.weights = curation::calibrate_weights(prefs);
            if (labels_path) {
                const std::string labels_text = read_file(*labels_path);
                const auto scored = labeled_scores(curation::read_calibration_csv(labels_text), params.weights);
                params.threshold = curation::calibrate_threshold(scored);
            }
            const std::string doc = params.to_json().dump(2) + "\n";
            if (params_out) {
                write_file(*params_out, doc);
            } else {
                out << doc;
            }
        } else if (bench_build->parsed()) {
            const std::string coco_text = read_file(coco_path);
            bench::BuildOptions options;
            if (images_root) options.images_root = *images_root;
            if (limit) options.limit = *limit;
            options.max_subjects = max_subjects;
            if (captions_path) {
                const std::string captions_text = read_file(*captions_path);
                options.captions = pose::parse_coco_captions(captions_text);
            }
            auto items = bench::build_benchmark(pose::parse_coco_dataset(coco_text), options);
            const auto manifest = bench::save_benchmark(items, bench_dir);
            out << fmt::format("selected {} items; manifest {}\n", items.size(), manifest.string());
        } else if (bench_eval->parsed()) {
            const auto items = bench::load_benchmark(manifest_path);
            const std::string candidates_text = read_file(candidates_path);
            const auto candidates = bench::parse_candidates(candidates_text);
            std::map<std::string, std::string> plugin_urls = cfg.plugins;
            for (const auto& spec : plugin_specs) {
                auto [name, url] = parse_plugin(spec);
                plugin_urls[name] = url;
            }
            std::vector<std::unique_ptr<bench::HttpMetricPlugin>> owned;
            std::vector<bench::MetricPlugin*> plugins;
            for (const auto& [name, url] : plugin_urls) {
                owned.push_back(std::make_unique<bench::HttpMetricPlugin>(
                    name, retrieval::HttpEndpoint{url, cfg.plugin_timeout}));
                plugins.push_back(owned.back().get());
            }
            bench::EvaluateOptions options;
            options.method = method;
            for (const auto& item : items) options.candidate_paths[item.image_id] = candidates_path;
            const auto report = bench::evaluate(items, candidates, plugins, options);
            const std::string fmt_name =
                report_format.value_or(std::filesystem::path(report_out).extension() == ".json" ? "json" : "csv");
            bench::emit_report(report, report_out,
                               fmt_name == "json" ? bench::ReportFormat::Json : bench::ReportFormat::Csv);
            out << bench::report_to_json(report)["aggregates"].dump() << "\n";
        } else if (positions->parsed()) {
            europe::LayoutSpec layout;
            layout.latent = parse_grid(latent_spec);
            for (const auto& spec : ref_specs) layout.refs.push_back(parse_grid(spec));
            if (pose_spec) layout.pose = parse_grid(*pose_spec);
            layout.text_len = text_len;
            const auto mode = europe::mode_from_string(mode_name);
            const auto table = europe::assign_positions(layout, mode);
            json offsets = json::array();
            for (const auto& o : europe::reference_offsets(layout)) offsets.push_back({o.i, o.j});
            const auto latent_set = europe::index_set(table.latent);
            std::size_t collisions = 0;
            for (const auto& ref : table.refs) {
                for (const auto& p : europe::index_set(ref)) collisions += latent_set.count(p);
            }
            if (positions_json) {
                out << json{{"mode", europe::to_string(mode)},
                            {"ref_offsets", offsets},
                            {"ref_latent_collisions", collisions},
                            {"positions", table.to_json()}}
                           .dump()
                    << "\n";
            } else {
                out << format_position_table(table, mode, collisions);
            }
        } else if (grad->parsed()) {
            out << grad_check_demo(seed, tamper).dump(2) << "\n";
        } else if (health->parsed()) {
            out << Engine::open(cfg)->health().dump() << "\n";
        } else if (index_info->parsed()) {
            out << Engine::open(cfg)->index_info().dump(2) << "\n";
        } else if (pose_cmd->parsed()) {
            const auto engine = Engine::open(cfg, {.passthrough = false, .require_pose_store = true});
            write_file(pose_png_out, engine->pose_png(pose_entry));
            out << fmt::format("wrote {}\n", pose_png_out);
        } else if (serve_cmd->parsed()) {
            return serve(cfg, host, port, out);
        }
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace astra::service
