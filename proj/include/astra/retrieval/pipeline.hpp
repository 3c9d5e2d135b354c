#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "astra/index/flat_index.hpp"
#include "astra/retrieval/clients.hpp"

namespace astra::retrieval {

enum class QuerySource { Normalized, Passthrough };

std::string_view to_string(QuerySource source);

struct CanonicalQuery {
    std::string text;
    QuerySource source = QuerySource::Passthrough;
    /// Set when a normalization client was configured but failed.
    std::optional<std::string> warning;
};

struct GateConfig {
    double alpha_u = 0.55;

    void validate() const;
};

enum class GateDecision { Accept, Bypass };

/// Accepts only when `score` strictly exceeds alpha_u.
GateDecision gate(double score, const GateConfig& cfg);

/// Trims the prompt and rejects it when nothing is left.
std::string validate_user_prompt(std::string_view prompt);

/// Asks `client` for a canonical rewrite. A null client, a failing client or
/// an empty rewrite yields the trimmed prompt tagged as passthrough.
CanonicalQuery normalize_prompt(std::string_view prompt, NormalizationClient* client);

/// Embeds `text` with `primary`, falling back to `fallback` when the primary
/// throws ClientError. Token matrices are mean pooled; the result is always
/// re-normalized.
index::EmbeddingVector embed_query(std::string_view text, EmbeddingClient& primary,
                                   EmbeddingClient* fallback = nullptr);

struct RetrievalClients {
    NormalizationClient* normalizer = nullptr;
    EmbeddingClient* embedder = nullptr;
    EmbeddingClient* fallback_embedder = nullptr;
};

struct RetrievalOutcome {
    enum class Kind { Hit, Bypassed };

    Kind kind = Kind::Bypassed;
    std::string user_prompt;
    CanonicalQuery canonical_query;
    // Hit only.
    std::optional<index::EntryId> entry_id;
    std::optional<std::string> pose_ref;
    std::optional<std::string> matched_prompt;
    std::optional<double> score;
    // Bypassed only; absent for an empty index.
    std::optional<double> best_score;

    bool hit() const { return kind == Kind::Hit; }
    nlohmann::json to_json() const;
};

RetrievalOutcome retrieve(std::string_view prompt, const index::FlatIndex& index, const RetrievalClients& clients,
                          const GateConfig& cfg = {});

}  // namespace astra::retrieval
