#include "astra/service/engine.hpp"

#include <charconv>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "astra/common/error.hpp"
#include "astra/common/io.hpp"
#include "astra/pose/raster.hpp"

namespace astra::service {

using nlohmann::json;

PoseStore PoseStore::from_json(const json& doc) {
    if (!doc.is_object()) throw ParseError("pose store must be a JSON object keyed by pose_ref");
    std::map<std::string, pose::PoseMap, std::less<>> maps;
    for (const auto& [ref, value] : doc.items()) {
        try {
            pose::PoseMap map = pose::pose_map_from_json(value);
            map.validate();
            maps.emplace(ref, std::move(map));
        } catch (const ValidationError& e) {
            throw ValidationError(fmt::format("pose store '{}': {}", ref, e.what()));
        } catch (const ParseError& e) {
            throw ParseError(fmt::format("pose store '{}': {}", ref, e.what()));
        }
    }
    return PoseStore(std::move(maps));
}

PoseStore PoseStore::load(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
    return from_json(doc);
}

json PoseStore::to_json() const {
    json doc = json::object();
    for (const auto& [ref, map] : maps_) doc[ref] = pose::to_json(map);
    return doc;
}

void PoseStore::save(const std::filesystem::path& path) const { write_file(path, to_json().dump(2) + "\n"); }

const pose::PoseMap* PoseStore::find(std::string_view pose_ref) const {
    auto it = maps_.find(pose_ref);
    return it == maps_.end() ? nullptr : &it->second;
}

std::unique_ptr<retrieval::EmbeddingClient> make_embedder(const EngineConfig& config) {
    if (config.embed_url.empty()) return std::make_unique<retrieval::HashingEmbedder>();
    return std::make_unique<retrieval::HttpEmbeddingClient>(
        retrieval::HttpEndpoint{config.embed_url, config.embed_timeout});
}

Engine::Engine(EngineConfig config, index::FlatIndex index, PoseStore poses, EngineOptions options)
    : config_(std::move(config)), index_(std::move(index)), poses_(std::move(poses)) {
    config_.validate();
    if (!options.passthrough && !config_.normalize_url.empty()) {
        normalizer_ = std::make_unique<retrieval::HttpNormalizationClient>(
            retrieval::HttpEndpoint{config_.normalize_url, config_.normalize_timeout});
    }
    embedder_ = make_embedder(config_);
    if (config_.embed_fallback && !config_.embed_url.empty()) {
        fallback_ = std::make_unique<retrieval::HashingEmbedder>();
    }
}

std::unique_ptr<Engine> Engine::open(const EngineConfig& config, EngineOptions options) {
    config.validate();
    if (config.index_path.empty()) throw ValidationError("no index path configured");
    if (options.require_pose_store && config.pose_store_path.empty()) {
        throw ValidationError("no pose store path configured");
    }
    index::FlatIndex index = index::FlatIndex::load(config.index_path);
    PoseStore poses;
    if (!config.pose_store_path.empty()) poses = PoseStore::load(config.pose_store_path);
    spdlog::info("loaded {} index entries and {} pose maps", index.size(), poses.size());
    return std::make_unique<Engine>(config, std::move(index), std::move(poses), options);
}

retrieval::RetrievalOutcome Engine::retrieve(std::string_view prompt) const {
    retrieval::RetrievalClients clients{normalizer_.get(), embedder_.get(), fallback_.get()};
    return retrieval::retrieve(prompt, index_, clients, retrieval::GateConfig{config_.alpha_u});
}

std::string pose_url(index::EntryId entry) { return fmt::format("/pose/{}.png", entry); }

json Engine::health() const { return {{"status", "ok"}, {"index_entries", index_.size()}}; }

json Engine::retrieve_json(std::string_view prompt) const {
    const auto outcome = retrieve(prompt);
    json doc = outcome.to_json();
    if (outcome.hit()) doc["pose_url"] = pose_url(*outcome.entry_id);
    return doc;
}

json Engine::index_info() const {
    return {
        {"entries", index_.size()},
        {"dim", index_.dim()},
        {"alpha_u", config_.alpha_u},
        {"pose_maps", poses_.size()},
        {"embedder", config_.embed_url.empty() ? "hashing" : "http"},
        {"normalizer", normalizer_ ? "http" : "passthrough"},
    };
}

std::string Engine::pose_png(index::EntryId entry) const {
    const auto slot = index_.find(entry);
    if (!slot) throw IndexError(fmt::format("no index entry {}", entry));
    const std::string& ref = index_.pose_ref_at(*slot);
    const pose::PoseMap* map = poses_.find(ref);
    if (map == nullptr) throw IndexError(fmt::format("entry {}: no pose map for '{}'", entry, ref));
    return pose::encode_png(pose::rasterize(*map));
}

namespace {

Response json_response(int status, const json& doc) { return {status, "application/json", doc.dump()}; }

Response error_response(int status, std::string_view message) {
    return json_response(status, {{"error", std::string(message)}});
}

std::optional<index::EntryId> parse_pose_path(std::string_view path) {
    constexpr std::string_view kPrefix = "/pose/";
    constexpr std::string_view kSuffix = ".png";
    if (!path.starts_with(kPrefix) || !path.ends_with(kSuffix)) return std::nullopt;
    const auto digits = path.substr(kPrefix.size(), path.size() - kPrefix.size() - kSuffix.size());
    index::EntryId id = 0;
    const auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id);
    if (digits.empty() || ec != std::errc{} || end != digits.data() + digits.size()) return std::nullopt;
    return id;
}

}  // namespace

Response Engine::handle(std::string_view method, std::string_view path, std::string_view body) const {
    try {
        if (path == "/health") {
            if (method != "GET") return error_response(405, "use GET");
            return json_response(200, health());
        }
        if (path == "/index/info") {
            if (method != "GET") return error_response(405, "use GET");
            return json_response(200, index_info());
        }
        if (path == "/retrieve") {
            if (method != "POST") return error_response(405, "use POST");
            const json request = json::parse(body, nullptr, false);
            if (request.is_discarded() || !request.is_object()) return error_response(400, "body must be a JSON object");
            const auto it = request.find("prompt");
            if (it == request.end() || !it->is_string()) return error_response(400, "'prompt' must be a string");
            return json_response(200, retrieve_json(it->get<std::string>()));
        }
        if (auto id = parse_pose_path(path)) {
            if (method != "GET") return error_response(405, "use GET");
            return {200, "image/png", pose_png(*id)};
        }
        return error_response(404, fmt::format("no route for {}", path));
    } catch (const ValidationError& e) {
        return error_response(400, e.what());
    } catch (const IndexError& e) {
        return error_response(404, e.what());
    } catch (const ClientError& e) {
        return error_response(502, e.what());
    } catch (const std::exception& e) {
        spdlog::error("{} {}: {}", method, path, e.what());
        return error_response(500, e.what());
    }
}

Server::Server(const Engine& engine) : engine_(engine), http_(std::make_unique<httplib::Server>()) {
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
        const Response r = engine_.handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    // No SO_REUSEPORT: a second server must not share a busy port.
    http_->set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    http_->Get(R"(/.*)", forward);
    http_->Post(R"(/.*)", forward);
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = http_->bind_to_any_port(host);
    } else if (!http_->bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) throw IoError(fmt::format("cannot bind {}:{}", host, port));
    return bound;
}

void Server::run() { http_->listen_after_bind(); }

void Server::wait_until_ready() const { http_->wait_until_ready(); }

void Server::stop() {
    if (http_) http_->stop();
}

}  // namespace astra::service
