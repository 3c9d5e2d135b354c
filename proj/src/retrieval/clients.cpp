#include "astra/retrieval/clients.hpp"

#include <fmt/format.h>
#include <httplib.h>

#include <cctype>
#include <nlohmann/json.hpp>

#include "astra/common/error.hpp"
#include "astra/common/io.hpp"

namespace astra::retrieval {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

json decode_reply(const std::string& body, std::string_view what) {
    try {
        return json::parse(body);
    } catch (const json::parse_error& e) {
        throw ClientError(fmt::format("{} reply is not JSON: {}", what, e.what()));
    }
}

}  // namespace

ConnectionPool::ConnectionPool(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}

ConnectionPool::~ConnectionPool() = default;

std::unique_ptr<httplib::Client> ConnectionPool::acquire() {
    {
        std::lock_guard lock(mutex_);
        if (!idle_.empty()) {
            auto client = std::move(idle_.back());
            idle_.pop_back();
            return client;
        }
    }
    auto client = std::make_unique<httplib::Client>(endpoint_.base_url);
    if (!client->is_valid()) {
        throw ClientError(fmt::format("invalid endpoint URL '{}'", endpoint_.base_url));
    }
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(endpoint_.timeout);
    client->set_connection_timeout(timeout);
    client->set_read_timeout(timeout);
    client->set_write_timeout(timeout);
    client->set_keep_alive(true);
    return client;
}

void ConnectionPool::release(std::unique_ptr<httplib::Client> client) {
    std::lock_guard lock(mutex_);
    idle_.push_back(std::move(client));
}

std::string ConnectionPool::post_json(const std::string& path, const std::string& body) {
    auto client = acquire();
    auto res = client->Post(path, body, "application/json");
    if (!res) {
        // Drop the connection; it may be half-open.
        throw ClientError(fmt::format("{}{} failed: {}", endpoint_.base_url, path, httplib::to_string(res.error())));
    }
    if (res->status != 200) {
        release(std::move(client));
        throw ClientError(fmt::format("{}{} returned HTTP {}", endpoint_.base_url, path, res->status));
    }
    std::string reply = std::move(res->body);
    release(std::move(client));
    return reply;
}

std::string HttpNormalizationClient::normalize(std::string_view text) {
    const json reply = decode_reply(pool_.post_json("/normalize", json{{"text", text}}.dump()), "normalize");
    auto it = reply.find("canonical");
    if (it == reply.end() || !it->is_string()) {
        throw ClientError("normalize reply has no string 'canonical' field");
    }
    return it->get<std::string>();
}

EmbeddingResponse HttpEmbeddingClient::embed(std::string_view text) {
    const json reply = decode_reply(pool_.post_json("/embed", json{{"text", text}}.dump()), "embed");
    auto it = reply.find("vector");
    if (it == reply.end() || !it->is_array()) {
        throw ClientError("embed reply has no 'vector' array");
    }
    std::vector<float> vector;
    try {
        vector = it->get<std::vector<float>>();
    } catch (const json::exception& e) {
        throw ClientError(fmt::format("embed reply vector is malformed: {}", e.what()));
    }
    if (vector.size() != dim_) {
        throw ClientError(fmt::format("embed reply has {} components, expected {}", vector.size(), dim_));
    }
    return vector;
}

std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        // Bytes >= 0x80 are kept so UTF-8 words stay whole.
        if (std::isalnum(c) || c >= 0x80) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

EmbeddingResponse HashingEmbedder::embed(std::string_view text) {
    std::vector<float> v(dim_, 0.0f);
    for (const auto& token : word_tokens(text)) {
        const std::uint64_t h = fnv1a(token);
        const float sign = (h >> 63) != 0 ? -1.0f : 1.0f;
        v[h % dim_] += sign;
    }
    return v;
}

TableEmbedder TableEmbedder::from_jsonl(const std::filesystem::path& path) {
    TableEmbedder table;
    const std::string contents = read_file(path);
    for (const auto& [line_no, line] : nonblank_lines(contents)) {
        try {
            const auto doc = json::parse(line);
            table.add(doc.at("text").get<std::string>(), doc.at("vector").get<std::vector<float>>());
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("{} line {}: {}", path.string(), line_no, e.what()));
        }
    }
    return table;
}

EmbeddingResponse TableEmbedder::embed(std::string_view text) {
    const auto it = table_.find(text);
    if (it == table_.end()) {
        throw ClientError(fmt::format("no recorded embedding for '{}'", text));
    }
    return it->second;
}

}  // namespace astra::retrieval
