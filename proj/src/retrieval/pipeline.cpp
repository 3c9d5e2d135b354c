#include "astra/retrieval/pipeline.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <variant>

#include "astra/common/error.hpp"
#include "astra/common/io.hpp"

namespace astra::retrieval {

using nlohmann::json;

std::string_view to_string(QuerySource source) {
    return source == QuerySource::Normalized ? "normalized" : "passthrough";
}

void GateConfig::validate() const {
    if (!(alpha_u >= 0.0 && alpha_u <= 1.0)) {
        throw ValidationError(fmt::format("alpha_u must lie in [0, 1], got {}", alpha_u));
    }
}

GateDecision gate(double score, const GateConfig& cfg) {
    return score > cfg.alpha_u ? GateDecision::Accept : GateDecision::Bypass;
}

std::string validate_user_prompt(std::string_view prompt) {
    const auto trimmed = trim(prompt);
    if (trimmed.empty()) {
        throw ValidationError("prompt is empty");
    }
    return std::string(trimmed);
}

CanonicalQuery normalize_prompt(std::string_view prompt, NormalizationClient* client) {
    std::string text = validate_user_prompt(prompt);
    if (client == nullptr) {
        return {std::move(text), QuerySource::Passthrough, std::nullopt};
    }
    std::string warning;
    try {
        std::string canonical(trim(client->normalize(text)));
        if (!canonical.empty()) {
            return {std::move(canonical), QuerySource::Normalized, std::nullopt};
        }
        warning = "normalization returned empty text";
    } catch (const ClientError& e) {
        warning = fmt::format("normalization failed: {}", e.what());
    }
    spdlog::warn("{}; using the raw prompt", warning);
    return {std::move(text), QuerySource::Passthrough, std::move(warning)};
}

namespace {

index::EmbeddingVector to_unit(const EmbeddingResponse& response) {
    if (const auto* direct = std::get_if<std::vector<float>>(&response)) {
        return index::l2_normalize(*direct);
    }
    const auto& tokens = std::get<TokenMatrix>(response);
    return index::l2_normalize(index::mean_pool(tokens.values, tokens.rows));
}

}  // namespace

index::EmbeddingVector embed_query(std::string_view text, EmbeddingClient& primary, EmbeddingClient* fallback) {
    try {
        return to_unit(primary.embed(text));
    } catch (const ClientError& e) {
        if (fallback == nullptr) throw;
        spdlog::warn("embedding failed ({}); using the fallback embedder", e.what());
    }
    return to_unit(fallback->embed(text));
}

json RetrievalOutcome::to_json() const {
    json doc;
    doc["kind"] = hit() ? "hit" : "bypassed";
    doc["user_prompt"] = user_prompt;
    doc["canonical_query"] = {{"text", canonical_query.text}, {"source", to_string(canonical_query.source)}};
    if (canonical_query.warning) doc["canonical_query"]["warning"] = *canonical_query.warning;
    if (hit()) {
        doc["entry_id"] = *entry_id;
        doc["pose_ref"] = *pose_ref;
        doc["matched_prompt"] = *matched_prompt;
        doc["score"] = *score;
    } else {
        doc["best_score"] = best_score ? json(*best_score) : json(nullptr);
    }
    return doc;
}

RetrievalOutcome retrieve(std::string_view prompt, const index::FlatIndex& index, const RetrievalClients& clients,
                          const GateConfig& cfg) {
    cfg.validate();
    RetrievalOutcome outcome;
    outcome.user_prompt = validate_user_prompt(prompt);
    outcome.canonical_query = normalize_prompt(outcome.user_prompt, clients.normalizer);
    if (index.empty()) {
        return outcome;
    }
    if (clients.embedder == nullptr) {
        throw ClientError("no embedding client configured");
    }
    const auto query = embed_query(outcome.canonical_query.text, *clients.embedder, clients.fallback_embedder);
    const auto top = index.search(query, 1).front();
    if (gate(top.score, cfg) == GateDecision::Accept) {
        outcome.kind = RetrievalOutcome::Kind::Hit;
        outcome.entry_id = top.id;
        outcome.pose_ref = index.pose_ref_at(top.slot);
        outcome.matched_prompt = index.prompt_at(top.slot);
        outcome.score = top.score;
    } else {
        outcome.best_score = top.score;
    }
    return outcome;
}

}  // namespace astra::retrieval
