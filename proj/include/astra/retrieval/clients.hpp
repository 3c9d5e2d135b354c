#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "astra/index/flat_index.hpp"

namespace httplib {
class Client;
}

namespace astra::retrieval {

/// Rewrites a user prompt into a canonical, pose-focused query.
/// Implementations throw ClientError on any failure.
class NormalizationClient {
public:
    virtual ~NormalizationClient() = default;
    virtual std::string normalize(std::string_view text) = 0;
};

/// Per-token embeddings, row-major rows x dim.
struct TokenMatrix {
    std::size_t rows = 0;
    std::vector<float> values;
};

/// A client answers either with a pooled sentence vector or with token
/// embeddings that the engine pools itself.
using EmbeddingResponse = std::variant<std::vector<float>, TokenMatrix>;

/// Maps text to an embedding. Implementations throw ClientError on failure.
class EmbeddingClient {
public:
    virtual ~EmbeddingClient() = default;
    virtual EmbeddingResponse embed(std::string_view text) = 0;
};

struct HttpEndpoint {
    /// Scheme, host and port, e.g. "http://127.0.0.1:8081".
    std::string base_url;
    std::chrono::milliseconds timeout{2000};
};

/// Small pool of keep-alive HTTP connections to one endpoint. A connection
/// is used by one request at a time.
class ConnectionPool {
public:
    explicit ConnectionPool(HttpEndpoint endpoint);
    ~ConnectionPool();
    ConnectionPool(const ConnectionPool&) = delete;
    ConnectionPool& operator=(const ConnectionPool&) = delete;

    /// POSTs a JSON body and returns the decoded JSON reply. Transport
    /// failures, non-200 statuses and undecodable bodies throw ClientError.
    std::string post_json(const std::string& path, const std::string& body);

    const HttpEndpoint& endpoint() const { return endpoint_; }

private:
    std::unique_ptr<httplib::Client> acquire();
    void release(std::unique_ptr<httplib::Client> client);

    HttpEndpoint endpoint_;
    std::mutex mutex_;
    std::vector<std::unique_ptr<httplib::Client>> idle_;
};

/// POST /normalize {"text": ...} -> {"canonical": ...}
class HttpNormalizationClient final : public NormalizationClient {
public:
    explicit HttpNormalizationClient(HttpEndpoint endpoint) : pool_(std::move(endpoint)) {}
    std::string normalize(std::string_view text) override;

private:
    ConnectionPool pool_;
};

/// POST /embed {"text": ...} -> {"vector": [384 floats]}
class HttpEmbeddingClient final : public EmbeddingClient {
public:
    explicit HttpEmbeddingClient(HttpEndpoint endpoint, std::size_t dim = index::kEmbeddingDim)
        : pool_(std::move(endpoint)), dim_(dim) {}
    EmbeddingResponse embed(std::string_view text) override;

private:
    ConnectionPool pool_;
    std::size_t dim_;
};

/// Deterministic, model-free embedder: signed feature hashing of lower-cased
/// word tokens into `dim` buckets. Identical texts map to identical vectors
/// and texts with disjoint vocabularies are close to orthogonal, which is all
/// the offline fixtures need.
class HashingEmbedder final : public EmbeddingClient {
public:
    explicit HashingEmbedder(std::size_t dim = index::kEmbeddingDim) : dim_(dim) {}
    EmbeddingResponse embed(std::string_view text) override;

private:
    std::size_t dim_;
};

/// Replays recorded vectors keyed by exact text. Unknown text throws
/// ClientError.
class TableEmbedder final : public EmbeddingClient {
public:
    TableEmbedder() = default;
    explicit TableEmbedder(std::map<std::string, std::vector<float>, std::less<>> table) : table_(std::move(table)) {}

    /// Reads JSON lines {"text": ..., "vector": [...]}.
    static TableEmbedder from_jsonl(const std::filesystem::path& path);

    void add(std::string text, std::vector<float> vector) { table_[std::move(text)] = std::move(vector); }
    EmbeddingResponse embed(std::string_view text) override;

private:
    std::map<std::string, std::vector<float>, std::less<>> table_;
};

/// Lower-cased alphanumeric word tokens, as used by HashingEmbedder.
std::vector<std::string> word_tokens(std::string_view text);

}  // namespace astra::retrieval
