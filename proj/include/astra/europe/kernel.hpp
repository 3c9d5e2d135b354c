#pragma once

// Toy-scale token assembly, 2D rotary position encoding and single-head
// attention for multi-image conditioning.

#include <Eigen/Dense>
#include <compare>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace astra::europe {

/// Rotary grid coordinate: i runs along the width, j along the height.
struct PositionIndex {
    int i = 0;
    int j = 0;

    friend auto operator<=>(const PositionIndex&, const PositionIndex&) = default;
};

/// Patch grid extent.
struct GridSize {
    int w = 0;
    int h = 0;

    int count() const { return w * h; }
    friend bool operator==(const GridSize&, const GridSize&) = default;
};

struct LayoutSpec {
    GridSize latent;
    std::vector<GridSize> refs;
    std::optional<GridSize> pose;
    int text_len = 0;

    /// All extents >= 1, pose no larger than the latent, text_len >= 0.
    void validate() const;
};

enum class Role { Text, Ref, Pose, Latent };

std::string_view to_string(Role role);
Role role_from_string(std::string_view name);

enum class EncodingMode { EuropeAsymmetric, SymmetricRope, SymmetricUnope };

std::string_view to_string(EncodingMode mode);
/// Accepts "asymmetric", "symmetric_rope" and "symmetric_unope".
EncodingMode mode_from_string(std::string_view name);

struct Token {
    Role role = Role::Text;
    /// Zero-based reference number for Role::Ref, -1 otherwise.
    int ref = -1;
    Eigen::VectorXd features;
    PositionIndex position;
};

/// Row-major patch grid: patch (i, j) lives at patches[j * size.w + i].
struct PatchGrid {
    GridSize size;
    std::vector<Eigen::VectorXd> patches;
};

struct ImageTokens {
    GridSize size;
    std::vector<Token> tokens;
};

/// Flattens a patch grid into row-major tokens carrying their grid
/// coordinates. With a projection P (d_out x d_in) each token's features are
/// P * patch.
ImageTokens tokenize_image(const PatchGrid& grid, Role role, int ref = -1,
                           const Eigen::MatrixXd* projection = nullptr);

/// Positions per role, each list in row-major token order.
struct PositionTable {
    std::vector<PositionIndex> text;
    std::vector<std::vector<PositionIndex>> refs;
    std::vector<PositionIndex> pose;
    std::vector<PositionIndex> latent;

    nlohmann::json to_json() const;
};

/// Offset added to reference k: the latent extent plus the extents of all
/// references before k, on each axis independently.
std::vector<PositionIndex> reference_offsets(const LayoutSpec& layout);

PositionTable assign_positions(const LayoutSpec& layout, EncodingMode mode);

std::set<PositionIndex> index_set(std::span<const PositionIndex> positions);

struct TokenSequence {
    LayoutSpec layout;
    EncodingMode mode = EncodingMode::EuropeAsymmetric;
    std::vector<Token> tokens;

    Eigen::Index dim() const { return tokens.empty() ? 0 : tokens.front().features.size(); }
};

/// text, then refs in order, then pose, then latent, with positions from
/// assign_positions. Tokens carrying the wrong role, mismatched feature sizes
/// or token counts that disagree with their grid throw ValidationError.
TokenSequence assemble_sequence(const std::vector<Token>& text, const std::vector<ImageTokens>& refs,
                                const std::optional<ImageTokens>& pose, const ImageTokens& latent, EncodingMode mode);

inline constexpr double kRopeBase = 10000.0;

/// Axial rotary encoding. The first d/2 features are rotated in adjacent
/// pairs by i-angles, the rest by j-angles; pair m of an axis with d_a
/// features turns by pos * base^(-2m / d_a). d must be a multiple of 4.
Eigen::VectorXd rope_apply(const Eigen::VectorXd& x, PositionIndex pos, double base = kRopeBase);

struct AttentionParams {
    /// Each d_model x d_head; d_head must be a multiple of 4.
    Eigen::MatrixXd wq;
    Eigen::MatrixXd wk;
    Eigen::MatrixXd wv;

    void validate(Eigen::Index d_model) const;
};

struct AttentionResult {
    /// Pre-softmax scores, n x n.
    Eigen::MatrixXd logits;
    /// n x d_head.
    Eigen::MatrixXd output;
};

/// Single-head softmax(Q K^T / sqrt(d_head)) V with rotary applied to each
/// row of Q and K at its token's position.
AttentionResult attention_forward(const TokenSequence& seq, const AttentionParams& params,
                                  double base = kRopeBase);

// JSON-lines fixtures. Token lines: {"role","ref","i","j","features"}.
// Matrix lines: one JSON array per row.
std::string tokens_to_jsonl(std::span<const Token> tokens);
std::vector<Token> tokens_from_jsonl(std::string_view text);
std::string matrix_to_jsonl(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_jsonl(std::string_view text);

}  // namespace astra::europe
