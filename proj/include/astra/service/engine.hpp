#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "astra/index/flat_index.hpp"
#include "astra/pose/skeleton.hpp"
#include "astra/retrieval/clients.hpp"
#include "astra/retrieval/pipeline.hpp"
#include "astra/service/config.hpp"

namespace httplib {
class Server;
}

namespace astra::service {

/// pose_ref -> PoseMap, stored as one JSON object.
class PoseStore {
public:
    PoseStore() = default;
    explicit PoseStore(std::map<std::string, pose::PoseMap, std::less<>> maps) : maps_(std::move(maps)) {}

    static PoseStore from_json(const nlohmann::json& doc);
    static PoseStore load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    void save(const std::filesystem::path& path) const;

    const pose::PoseMap* find(std::string_view pose_ref) const;
    void add(std::string pose_ref, pose::PoseMap map) { maps_[std::move(pose_ref)] = std::move(map); }
    std::size_t size() const { return maps_.size(); }

private:
    std::map<std::string, pose::PoseMap, std::less<>> maps_;
};

struct EngineOptions {
    /// Skip the normalization client even when one is configured.
    bool passthrough = false;
    /// Fail unless both the index and the pose store paths are set.
    bool require_pose_store = false;
};

struct Response {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

/// Embedding client for `config`: HTTP when embed_url is set, otherwise the
/// hashing embedder.
std::unique_ptr<retrieval::EmbeddingClient> make_embedder(const EngineConfig& config);

/// Immutable index and pose store plus the clients that query them. Every
/// method is safe to call concurrently.
class Engine {
public:
    Engine(EngineConfig config, index::FlatIndex index, PoseStore poses, EngineOptions options = {});

    /// Loads the index and pose store named by `config`.
    static std::unique_ptr<Engine> open(const EngineConfig& config, EngineOptions options = {});

    const EngineConfig& config() const { return config_; }
    const index::FlatIndex& index() const { return index_; }
    const PoseStore& poses() const { return poses_; }

    retrieval::RetrievalOutcome retrieve(std::string_view prompt) const;

    nlohmann::json health() const;
    /// Outcome JSON; hits also carry "pose_url".
    nlohmann::json retrieve_json(std::string_view prompt) const;
    nlohmann::json index_info() const;
    /// PNG of the pose map stored for `entry`. Throws IndexError for an
    /// unknown entry or pose_ref.
    std::string pose_png(index::EntryId entry) const;

    /// Routes one request: GET /health, POST /retrieve, GET /pose/<id>.png,
    /// GET /index/info.
    Response handle(std::string_view method, std::string_view path, std::string_view body) const;

private:
    EngineConfig config_;
    index::FlatIndex index_;
    PoseStore poses_;
    std::unique_ptr<retrieval::NormalizationClient> normalizer_;
    std::unique_ptr<retrieval::EmbeddingClient> embedder_;
    std::unique_ptr<retrieval::EmbeddingClient> fallback_;
};

std::string pose_url(index::EntryId entry);

/// HTTP front end over an Engine.
class Server {
public:
    explicit Server(const Engine& engine);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds host:port (port 0 picks a free one) and returns the bound
    /// port. Throws IoError when binding fails.
    int bind(const std::string& host, int port);
    /// Serves until stop(); in-flight requests finish first.
    void run();
    /// Blocks until run() accepts connections.
    void wait_until_ready() const;
    void stop();

private:
    const Engine& engine_;
    std::unique_ptr<httplib::Server> http_;
};

}  // namespace astra::service
