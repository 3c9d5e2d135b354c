#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace astra::service {

struct EngineConfig {
    std::filesystem::path index_path;
    std::filesystem::path pose_store_path;
    double alpha_u = 0.55;
    /// Empty means the built-in hashing embedder.
    std::string embed_url;
    /// Empty means passthrough normalization.
    std::string normalize_url;
    /// Use the hashing embedder when the embedding service fails.
    bool embed_fallback = false;
    std::chrono::milliseconds embed_timeout{2000};
    std::chrono::milliseconds normalize_timeout{2000};
    std::chrono::milliseconds plugin_timeout{10000};
    /// Metric plugin name -> base URL.
    std::map<std::string, std::string> plugins;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string log_level = "info";

    /// alpha_u in [0, 1], positive timeouts, port in 0..65535, known level.
    void validate() const;
};

/// Returns the value of an environment variable, if set.
using EnvLookup = std::function<std::optional<std::string>(std::string_view)>;

EnvLookup process_env();

/// Parses a TOML config over the defaults. Layout:
///
///   index_path = "..."          pose_store_path = "..."     log_level = "info"
///   [gate]     alpha_u = 0.55
///   [clients]  embed_url, normalize_url, embed_fallback, timeout_ms,
///              embed_timeout_ms, normalize_timeout_ms, plugin_timeout_ms
///   [server]   host, port
///   [plugins]  <name> = "<url>"
///
/// Relative paths are resolved against `base_dir`.
EngineConfig config_from_toml(std::string_view text, const std::filesystem::path& base_dir = {});

/// Applies ASTRA_INDEX_PATH, ASTRA_POSE_STORE_PATH, ASTRA_EMBED_URL,
/// ASTRA_NORMALIZE_URL, ASTRA_ALPHA_U and ASTRA_LOG_LEVEL.
void apply_env(EngineConfig& config, const EnvLookup& env);

/// Defaults, then the TOML file (`explicit_path`, else ASTRA_CONFIG), then
/// the environment. Flags are applied by the caller afterwards.
EngineConfig load_config(const std::optional<std::filesystem::path>& explicit_path, const EnvLookup& env);

}  // namespace astra::service
