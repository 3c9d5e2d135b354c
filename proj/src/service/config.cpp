#include "astra/service/config.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include <fmt/format.h>
#include <toml.hpp>

#include "astra/common/error.hpp"
#include "astra/common/io.hpp"

namespace astra::service {

namespace {

constexpr std::array kLogLevels{"trace", "debug", "info", "warn", "error", "critical", "off"};

std::filesystem::path resolve(const std::filesystem::path& base, std::string_view value) {
    std::filesystem::path p{std::string(value)};
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

template <typename T>
std::optional<T> get(const toml::table& table, std::string_view key) {
    const toml::node* node = table.get(key);
    if (node == nullptr) return std::nullopt;
    if constexpr (std::is_same_v<T, double>) {
        if (auto v = node->value<double>()) return *v;
    } else if constexpr (std::is_same_v<T, std::int64_t>) {
        if (node->is_integer()) return node->as_integer()->get();
    } else {
        if (auto v = node->value_exact<T>()) return *v;
    }
    throw ValidationError(fmt::format("config: '{}' has the wrong type", key));
}

std::chrono::milliseconds positive_ms(std::int64_t value, std::string_view key) {
    if (value <= 0) throw ValidationError(fmt::format("config: '{}' must be positive", key));
    return std::chrono::milliseconds(value);
}

double parse_alpha(const std::string& text, std::string_view source) {
    std::size_t used = 0;
    double value = 0.0;
    try {
        value = std::stod(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size()) throw ValidationError(fmt::format("{}: not a number: '{}'", source, text));
    return value;
}

}  // namespace

void EngineConfig::validate() const {
    if (!(alpha_u >= 0.0 && alpha_u <= 1.0)) throw ValidationError(fmt::format("alpha_u must lie in [0, 1], got {}", alpha_u));
    for (auto t : {embed_timeout, normalize_timeout, plugin_timeout}) {
        if (t.count() <= 0) throw ValidationError("timeouts must be positive");
    }
    if (port < 0 || port > 65535) throw ValidationError(fmt::format("port out of range: {}", port));
    if (std::find(kLogLevels.begin(), kLogLevels.end(), log_level) == kLogLevels.end()) {
        throw ValidationError(fmt::format("unknown log level '{}'", log_level));
    }
    for (const auto& [name, url] : plugins) {
        if (name.empty() || url.empty()) throw ValidationError("plugins need a name and a URL");
    }
}

EnvLookup process_env() {
    return [](std::string_view name) -> std::optional<std::string> {
        const char* value = std::getenv(std::string(name).c_str());
        if (value == nullptr) return std::nullopt;
        return std::string(value);
    };
}

EngineConfig config_from_toml(std::string_view text, const std::filesystem::path& base_dir) {
    toml::table root;
    try {
        root = toml::parse(text);
    } catch (const toml::parse_error& e) {
        std::ostringstream where;
        where << e.source().begin;
        throw ParseError(fmt::format("config: {} at {}", e.description(), where.str()));
    }

    EngineConfig cfg;
    if (auto v = get<std::string>(root, "index_path")) cfg.index_path = resolve(base_dir, *v);
    if (auto v = get<std::string>(root, "pose_store_path")) cfg.pose_store_path = resolve(base_dir, *v);
    if (auto v = get<std::string>(root, "log_level")) cfg.log_level = *v;

    if (const auto* gate = root["gate"].as_table()) {
        if (auto v = get<double>(*gate, "alpha_u")) cfg.alpha_u = *v;
    }
    if (const auto* clients = root["clients"].as_table()) {
        if (auto v = get<std::string>(*clients, "embed_url")) cfg.embed_url = *v;
        if (auto v = get<std::string>(*clients, "normalize_url")) cfg.normalize_url = *v;
        if (auto v = get<bool>(*clients, "embed_fallback")) cfg.embed_fallback = *v;
        if (auto v = get<std::int64_t>(*clients, "timeout_ms")) {
            cfg.embed_timeout = cfg.normalize_timeout = positive_ms(*v, "timeout_ms");
        }
        if (auto v = get<std::int64_t>(*clients, "embed_timeout_ms")) cfg.embed_timeout = positive_ms(*v, "embed_timeout_ms");
        if (auto v = get<std::int64_t>(*clients, "normalize_timeout_ms")) {
            cfg.normalize_timeout = positive_ms(*v, "normalize_timeout_ms");
        }
        if (auto v = get<std::int64_t>(*clients, "plugin_timeout_ms")) cfg.plugin_timeout = positive_ms(*v, "plugin_timeout_ms");
    }
    if (const auto* server = root["server"].as_table()) {
        if (auto v = get<std::string>(*server, "host")) cfg.host = *v;
        if (auto v = get<std::int64_t>(*server, "port")) cfg.port = static_cast<int>(*v);
    }
    if (const auto* plugins = root["plugins"].as_table()) {
        for (const auto& [key, node] : *plugins) {
            auto url = node.value_exact<std::string>();
            if (!url) throw ValidationError(fmt::format("config: plugin '{}' needs a URL string", key.str()));
            cfg.plugins[std::string(key.str())] = *url;
        }
    }
    cfg.validate();
    return cfg;
}

void apply_env(EngineConfig& config, const EnvLookup& env) {
    if (auto v = env("ASTRA_INDEX_PATH")) config.index_path = *v;
    if (auto v = env("ASTRA_POSE_STORE_PATH")) config.pose_store_path = *v;
    if (auto v = env("ASTRA_EMBED_URL")) config.embed_url = *v;
    if (auto v = env("ASTRA_NORMALIZE_URL")) config.normalize_url = *v;
    if (auto v = env("ASTRA_ALPHA_U")) config.alpha_u = parse_alpha(*v, "ASTRA_ALPHA_U");
    if (auto v = env("ASTRA_LOG_LEVEL")) config.log_level = *v;
    config.validate();
}

EngineConfig load_config(const std::optional<std::filesystem::path>& explicit_path, const EnvLookup& env) {
    std::optional<std::filesystem::path> path = explicit_path;
    if (!path) {
        if (auto v = env("ASTRA_CONFIG"); v && !v->empty()) path = *v;
    }
    EngineConfig cfg;
    if (path) cfg = config_from_toml(read_file(*path), path->parent_path());
    apply_env(cfg, env);
    return cfg;
}

}  // namespace astra::service
