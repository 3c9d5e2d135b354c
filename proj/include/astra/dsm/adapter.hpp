#pragma once

// Cross-attention adapter that turns visual identity features into an
// additive offset on text embeddings.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace astra::dsm {

using Matrix = Eigen::MatrixXd;

/// One attention head. Text rows (width d) are queries, visual rows (width
/// d_v) are keys and values, a is the head width.
struct HeadParams {
    Matrix wq;  // d x a
    Matrix wk;  // d_v x a
    Matrix wv;  // d_v x a
    Matrix wo;  // a x d, zero at initialization
};

/// A set of heads whose outputs are summed into one offset.
struct OffsetHead {
    std::vector<HeadParams> heads;
};

struct AdapterConfig {
    Eigen::Index d = 0;
    Eigen::Index d_v = 0;
    Eigen::Index head_dim = 0;
    int n_heads = 1;
    /// Per-layer offset heads in addition to the global one.
    int n_layers = 0;

    void validate() const;
};

struct AdapterParams {
    OffsetHead global;
    std::vector<OffsetHead> layers;

    /// Gaussian query/key/value weights with std 1/sqrt(fan_in) and
    /// all-zero output projections.
    static AdapterParams init(const AdapterConfig& cfg, std::mt19937_64& rng);

    /// Like init but with random output projections too, for tests of a
    /// trained-looking adapter.
    static AdapterParams random(const AdapterConfig& cfg, std::mt19937_64& rng);

    AdapterConfig config() const;
    /// Throws ShapeError when heads disagree on d, d_v or head width.
    void validate() const;
};

/// Delta = sum over heads of softmax((E Wq)(F Wk)^T / sqrt(a)) (F Wv) Wo.
Matrix dsm_forward(const Matrix& text, const Matrix& visual, const OffsetHead& head);
inline Matrix dsm_forward(const Matrix& text, const Matrix& visual, const AdapterParams& params) {
    return dsm_forward(text, visual, params.global);
}

/// text + delta.
Matrix modulate(const Matrix& text, const Matrix& delta);

struct HierarchicalOffsets {
    Matrix global;
    std::vector<Matrix> layers;
};

/// The global offset plus one offset per layer head, from the first
/// n_layers entries of params.layers.
HierarchicalOffsets hierarchical_offsets(const Matrix& text, const Matrix& visual, const AdapterParams& params,
                                         int n_layers);

struct HeadGrad {
    Matrix wq, wk, wv, wo;
};

struct ForwardGrad {
    std::vector<HeadGrad> heads;
    Matrix text;
    Matrix visual;
};

/// Gradients of sum(upstream .* dsm_forward(text, visual, head)).
ForwardGrad dsm_backward(const Matrix& text, const Matrix& visual, const OffsetHead& head, const Matrix& upstream);

enum class CheckedOp { DsmForward, Modulate };

/// Flat view of every tensor the check perturbs, paired with its analytic
/// gradient.
struct GradientSet {
    std::vector<std::string> names;
    std::vector<Matrix> values;
};

struct GradCheckOptions {
    double step = 1e-5;
    /// Called on the analytic gradients before comparison.
    std::function<void(GradientSet&)> tamper;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::string worst_tensor;
    Eigen::Index worst_row = 0;
    Eigen::Index worst_col = 0;
    std::size_t checked = 0;
};

/// Compares analytic gradients of loss = sum of squares of the op output
/// with central differences over every input and parameter entry. The
/// relative error of an entry is |a - n| / max(|a|, |n|, 1e-6).
/// For Modulate, `visual` is read as the offset and `head` is ignored.
GradCheckReport grad_check(CheckedOp op, const Matrix& text, const Matrix& visual, const OffsetHead& head,
                           const GradCheckOptions& options = {});

// Checkpoints: "ASTRADSM", u32 version, u32 tensor count, then per tensor
// u32 name length, name, u32 rows, u32 cols, rows*cols f64 row-major. All
// little-endian.
std::string serialize(const AdapterParams& params);
AdapterParams deserialize(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const AdapterParams& params);
AdapterParams load_checkpoint(const std::filesystem::path& path);

/// Visual features from JSON lines (one array per row) when the extension is
/// .jsonl, otherwise raw little-endian f32 after a u32 rows, u32 cols header.
Matrix load_features(const std::filesystem::path& path);
void save_features_f32(const std::filesystem::path& path, const Matrix& m);
void save_features_jsonl(const std::filesystem::path& path, const Matrix& m);

/// Throws ValidationError if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view what);

}  // namespace astra::dsm
