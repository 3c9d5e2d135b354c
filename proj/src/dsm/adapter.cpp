#include "astra/dsm/adapter.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>

#include "astra/common/binary.hpp"
#include "astra/common/error.hpp"
#include "astra/common/io.hpp"

namespace astra::dsm {

namespace {

constexpr std::string_view kMagic = "ASTRADSM";
constexpr std::uint32_t kVersion = 1;
constexpr std::array<std::string_view, 4> kTensorNames{"wq", "wk", "wv", "wo"};

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n(rng);
    }
    return m;
}

HeadParams make_head(const AdapterConfig& cfg, std::mt19937_64& rng, bool zero_output) {
    const double sq = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    const double sv = 1.0 / std::sqrt(static_cast<double>(cfg.d_v));
    HeadParams h;
    h.wq = gaussian(cfg.d, cfg.head_dim, sq, rng);
    h.wk = gaussian(cfg.d_v, cfg.head_dim, sv, rng);
    h.wv = gaussian(cfg.d_v, cfg.head_dim, sv, rng);
    h.wo = zero_output ? Matrix::Zero(cfg.head_dim, cfg.d)
                       : gaussian(cfg.head_dim, cfg.d, 1.0 / std::sqrt(static_cast<double>(cfg.head_dim)), rng);
    return h;
}

AdapterParams make_params(const AdapterConfig& cfg, std::mt19937_64& rng, bool zero_output) {
    cfg.validate();
    auto offset_head = [&] {
        OffsetHead o;
        for (int h = 0; h < cfg.n_heads; ++h) o.heads.push_back(make_head(cfg, rng, zero_output));
        return o;
    };
    AdapterParams p;
    p.global = offset_head();
    for (int l = 0; l < cfg.n_layers; ++l) p.layers.push_back(offset_head());
    return p;
}

Matrix& tensor(HeadParams& h, std::size_t which) {
    switch (which) {
        case 0: return h.wq;
        case 1: return h.wk;
        case 2: return h.wv;
        default: return h.wo;
    }
}

const Matrix& tensor(const HeadParams& h, std::size_t which) {
    return tensor(const_cast<HeadParams&>(h), which);
}

void check_head_shapes(const HeadParams& h, Eigen::Index d, Eigen::Index d_v, Eigen::Index a, std::string_view what) {
    auto expect = [&](const Matrix& m, Eigen::Index r, Eigen::Index c, std::string_view name) {
        if (m.rows() != r || m.cols() != c) {
            throw ShapeError(fmt::format("{} {} is {}x{}, expected {}x{}", what, name, m.rows(), m.cols(), r, c));
        }
    };
    expect(h.wq, d, a, "wq");
    expect(h.wk, d_v, a, "wk");
    expect(h.wv, d_v, a, "wv");
    expect(h.wo, a, d, "wo");
}

void check_inputs(const Matrix& text, const Matrix& visual, const OffsetHead& head) {
    if (head.heads.empty()) {
        throw ShapeError("offset head has no attention heads");
    }
    if (visual.rows() < 1) {
        throw ShapeError("visual features need at least one row");
    }
    const auto& h0 = head.heads.front();
    if (text.cols() != h0.wq.rows()) {
        throw ShapeError(fmt::format("text width {} does not match query projection rows {}", text.cols(),
                                     h0.wq.rows()));
    }
    if (visual.cols() != h0.wk.rows()) {
        throw ShapeError(fmt::format("visual width {} does not match key projection rows {}", visual.cols(),
                                     h0.wk.rows()));
    }
    for (std::size_t k = 0; k < head.heads.size(); ++k) {
        check_head_shapes(head.heads[k], text.cols(), visual.cols(), h0.wq.cols(), fmt::format("head {}", k));
    }
}

Matrix softmax_rows(const Matrix& s) {
    Matrix p(s.rows(), s.cols());
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double peak = s.row(r).maxCoeff();
        p.row(r) = (s.row(r).array() - peak).exp().matrix();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

double sum_of_squares(const Matrix& m) { return m.squaredNorm(); }

}  // namespace

void AdapterConfig::validate() const {
    if (d < 1 || d_v < 1 || head_dim < 1) {
        throw ValidationError(fmt::format("adapter dimensions must be positive (d={}, d_v={}, head_dim={})", d, d_v,
                                          head_dim));
    }
    if (n_heads < 1) {
        throw ValidationError("adapter needs at least one head");
    }
    if (n_layers < 0) {
        throw ValidationError("layer count must be non-negative");
    }
}

AdapterParams AdapterParams::init(const AdapterConfig& cfg, std::mt19937_64& rng) {
    return make_params(cfg, rng, true);
}

AdapterParams AdapterParams::random(const AdapterConfig& cfg, std::mt19937_64& rng) {
    return make_params(cfg, rng, false);
}

AdapterConfig AdapterParams::config() const {
    validate();
    const auto& h = global.heads.front();
    return {h.wq.rows(), h.wk.rows(), h.wq.cols(), static_cast<int>(global.heads.size()),
            static_cast<int>(layers.size())};
}

void AdapterParams::validate() const {
    if (global.heads.empty()) {
        throw ShapeError("adapter has no global heads");
    }
    const auto& h0 = global.heads.front();
    const auto d = h0.wq.rows(), d_v = h0.wk.rows(), a = h0.wq.cols();
    auto check = [&](const OffsetHead& o, std::string_view what) {
        if (o.heads.size() != global.heads.size()) {
            throw ShapeError(fmt::format("{} has {} heads, global has {}", what, o.heads.size(), global.heads.size()));
        }
        for (std::size_t k = 0; k < o.heads.size(); ++k) {
            check_head_shapes(o.heads[k], d, d_v, a, fmt::format("{} head {}", what, k));
        }
    };
    check(global, "global");
    for (std::size_t l = 0; l < layers.size(); ++l) check(layers[l], fmt::format("layer {}", l));
}

Matrix dsm_forward(const Matrix& text, const Matrix& visual, const OffsetHead& head) {
    check_inputs(text, visual, head);
    Matrix delta = Matrix::Zero(text.rows(), text.cols());
    for (const auto& h : head.heads) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(h.wq.cols()));
        const Matrix q = text * h.wq;
        const Matrix k = visual * h.wk;
        const Matrix v = visual * h.wv;
        const Matrix p = softmax_rows(q * k.transpose() * scale);
        delta.noalias() += (p * v) * h.wo;
    }
    return delta;
}

Matrix modulate(const Matrix& text, const Matrix& delta) {
    if (text.rows() != delta.rows() || text.cols() != delta.cols()) {
        throw ShapeError(fmt::format("cannot add a {}x{} offset to {}x{} text embeddings", delta.rows(),
                                     delta.cols(), text.rows(), text.cols()));
    }
    return text + delta;
}

HierarchicalOffsets hierarchical_offsets(const Matrix& text, const Matrix& visual, const AdapterParams& params,
                                         int n_layers) {
    if (n_layers < 1) {
        throw ValidationError(fmt::format("hierarchical modulation needs at least one layer, got {}", n_layers));
    }
    if (static_cast<std::size_t>(n_layers) > params.layers.size()) {
        throw ShapeError(fmt::format("{} layers requested but the adapter has {} layer heads", n_layers,
                                     params.layers.size()));
    }
    HierarchicalOffsets out;
    out.global = dsm_forward(text, visual, params.global);
    for (int l = 0; l < n_layers; ++l) {
        out.layers.push_back(dsm_forward(text, visual, params.layers[static_cast<std::size_t>(l)]));
    }
    return out;
}

ForwardGrad dsm_backward(const Matrix& text, const Matrix& visual, const OffsetHead& head, const Matrix& upstream) {
    check_inputs(text, visual, head);
    if (upstream.rows() != text.rows() || upstream.cols() != text.cols()) {
        throw ShapeError("upstream gradient must match the offset shape");
    }
    ForwardGrad g;
    g.text = Matrix::Zero(text.rows(), text.cols());
    g.visual = Matrix::Zero(visual.rows(), visual.cols());
    for (const auto& h : head.heads) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(h.wq.cols()));
        const Matrix q = text * h.wq;
        const Matrix k = visual * h.wk;
        const Matrix v = visual * h.wv;
        const Matrix p = softmax_rows(q * k.transpose() * scale);
        const Matrix attended = p * v;

        const Matrix d_attended = upstream * h.wo.transpose();
        const Matrix dp = d_attended * v.transpose();
        const Matrix dv = p.transpose() * d_attended;
        // Softmax Jacobian applied row by row.
        const Eigen::VectorXd inner = (dp.array() * p.array()).rowwise().sum();
        const Matrix ds = (p.array() * (dp.colwise() - inner).array()).matrix() * scale;
        const Matrix dq = ds * k;
        const Matrix dk = ds.transpose() * q;

        g.heads.push_back({text.transpose() * dq, visual.transpose() * dk, visual.transpose() * dv,
                           attended.transpose() * upstream});
        g.text.noalias() += dq * h.wq.transpose();
        g.visual.noalias() += dk * h.wk.transpose() + dv * h.wv.transpose();
    }
    return g;
}

GradCheckReport grad_check(CheckedOp op, const Matrix& text, const Matrix& visual, const OffsetHead& head,
                           const GradCheckOptions& options) {
    require_finite(text, "text embeddings");
    require_finite(visual, op == CheckedOp::Modulate ? "offset" : "visual features");
    if (!(options.step > 0.0)) {
        throw ValidationError("finite-difference step must be positive");
    }

    Matrix e = text;
    Matrix f = visual;
    OffsetHead params = head;
    auto loss = [&] {
        const Matrix out = op == CheckedOp::Modulate ? modulate(e, f) : dsm_forward(e, f, params);
        return sum_of_squares(out);
    };

    GradientSet analytic;
    if (op == CheckedOp::Modulate) {
        const Matrix out = modulate(e, f);
        analytic.names = {"text", "offset"};
        analytic.values = {2.0 * out, 2.0 * out};
    } else {
        for (const auto& h : params.heads) {
            for (std::size_t t = 0; t < kTensorNames.size(); ++t) require_finite(tensor(h, t), "adapter weights");
        }
        const Matrix out = dsm_forward(e, f, params);
        const auto g = dsm_backward(e, f, params, 2.0 * out);
        analytic.names = {"text", "visual"};
        analytic.values = {g.text, g.visual};
        for (std::size_t k = 0; k < g.heads.size(); ++k) {
            const std::array<const Matrix*, 4> grads{&g.heads[k].wq, &g.heads[k].wk, &g.heads[k].wv, &g.heads[k].wo};
            for (std::size_t t = 0; t < kTensorNames.size(); ++t) {
                analytic.names.push_back(fmt::format("head{}.{}", k, kTensorNames[t]));
                analytic.values.push_back(*grads[t]);
            }
        }
    }
    if (options.tamper) options.tamper(analytic);

    std::vector<Matrix*> targets{&e, &f};
    if (op == CheckedOp::DsmForward) {
        for (auto& h : params.heads) {
            for (std::size_t t = 0; t < kTensorNames.size(); ++t) targets.push_back(&tensor(h, t));
        }
    }
    if (analytic.values.size() != targets.size()) {
        throw ShapeError("tampered gradient set no longer matches the checked tensors");
    }

    GradCheckReport report;
    for (std::size_t s = 0; s < targets.size(); ++s) {
        Matrix& x = *targets[s];
        const Matrix& grad = analytic.values[s];
        if (grad.rows() != x.rows() || grad.cols() != x.cols()) {
            throw ShapeError(fmt::format("gradient for {} has the wrong shape", analytic.names[s]));
        }
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                const double saved = x(r, c);
                x(r, c) = saved + options.step;
                const double up = loss();
                x(r, c) = saved - options.step;
                const double down = loss();
                x(r, c) = saved;
                const double numeric = (up - down) / (2.0 * options.step);
                const double a = grad(r, c);
                if (!std::isfinite(numeric) || !std::isfinite(a)) {
                    throw ValidationError(fmt::format("non-finite gradient for {}({}, {})", analytic.names[s], r, c));
                }
                const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
                ++report.checked;
                if (rel > report.max_relative_error || report.worst_tensor.empty()) {
                    report.max_relative_error = std::max(rel, report.max_relative_error);
                    report.worst_tensor = analytic.names[s];
                    report.worst_row = r;
                    report.worst_col = c;
                }
            }
        }
    }
    return report;
}

std::string serialize(const AdapterParams& params) {
    params.validate();
    std::vector<std::pair<std::string, const Matrix*>> tensors;
    auto collect = [&](const OffsetHead& o, const std::string& prefix) {
        for (std::size_t k = 0; k < o.heads.size(); ++k) {
            for (std::size_t t = 0; t < kTensorNames.size(); ++t) {
                tensors.emplace_back(fmt::format("{}.h{}.{}", prefix, k, kTensorNames[t]), &tensor(o.heads[k], t));
            }
        }
    };
    collect(params.global, "global");
    for (std::size_t l = 0; l < params.layers.size(); ++l) collect(params.layers[l], fmt::format("layer{}", l));

    std::string out(kMagic);
    binary::put_le<std::uint32_t>(out, kVersion);
    binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
        binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m->rows()));
        binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m->cols()));
        for (Eigen::Index r = 0; r < m->rows(); ++r) {
            for (Eigen::Index c = 0; c < m->cols(); ++c) binary::put_f64(out, (*m)(r, c));
        }
    }
    return out;
}

AdapterParams deserialize(std::string_view bytes) {
    binary::Reader reader(bytes);
    // (layer or -1 for global, head) -> head tensors
    std::map<std::pair<int, int>, std::array<std::optional<Matrix>, 4>> found;
    try {
        if (reader.get_bytes(kMagic.size(), "magic") != kMagic) {
            throw ParseError("bad magic: not an ASTRADSM checkpoint");
        }
        const auto version = reader.get_le<std::uint32_t>("version");
        if (version != kVersion) {
            throw ParseError(fmt::format("unsupported checkpoint version {} (expected {})", version, kVersion));
        }
        const auto count = reader.get_le<std::uint32_t>("tensor count");
        for (std::uint32_t n = 0; n < count; ++n) {
            const std::string name(reader.get_bytes(reader.get_le<std::uint32_t>("name length"), "tensor name"));
            const auto rows = reader.get_le<std::uint32_t>("rows");
            const auto cols = reader.get_le<std::uint32_t>("cols");
            if (std::uint64_t{rows} * cols > reader.remaining() / 8) {
                throw ParseError(fmt::format("truncated data for tensor '{}'", name));
            }
            Matrix m(rows, cols);
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = reader.get_f64("tensor data");
            }

            int layer = -1, head = -1;
            char kind[3] = {};
            int used = 0;
            if (std::sscanf(name.c_str(), "global.h%d.%2s%n", &head, kind, &used) == 2 &&
                used == static_cast<int>(name.size())) {
                layer = -1;
            } else if (std::sscanf(name.c_str(), "layer%d.h%d.%2s%n", &layer, &head, kind, &used) == 3 &&
                       used == static_cast<int>(name.size()) && layer >= 0) {
            } else {
                throw ParseError(fmt::format("unrecognized tensor name '{}'", name));
            }
            const auto it = std::find(kTensorNames.begin(), kTensorNames.end(), std::string_view(kind));
            if (it == kTensorNames.end() || head < 0) {
                throw ParseError(fmt::format("unrecognized tensor name '{}'", name));
            }
            auto& slot = found[{layer, head}][static_cast<std::size_t>(it - kTensorNames.begin())];
            if (slot) {
                throw ParseError(fmt::format("duplicate tensor '{}'", name));
            }
            slot = std::move(m);
        }
        if (reader.remaining() != 0) {
            throw ParseError(fmt::format("{} trailing bytes after the last tensor", reader.remaining()));
        }
    } catch (const ParseError& e) {
        throw ParseError(fmt::format("checkpoint: {}", e.what()));
    }

    AdapterParams params;
    for (auto& [key, tensors] : found) {
        const auto [layer, head] = key;
        OffsetHead* target = &params.global;
        if (layer >= 0) {
            const auto next = static_cast<int>(params.layers.size());
            if (layer == next) {
                params.layers.emplace_back();
            } else if (layer != next - 1) {
                throw ParseError(fmt::format("checkpoint: layer heads skip from layer{} to layer{}", next - 1, layer));
            }
            target = &params.layers.back();
        }
        const std::string owner = layer < 0 ? std::string("global") : fmt::format("layer{}", layer);
        if (head != static_cast<int>(target->heads.size())) {
            throw ParseError(fmt::format("checkpoint: {} heads are not numbered consecutively at h{}", owner, head));
        }
        HeadParams h;
        for (std::size_t t = 0; t < kTensorNames.size(); ++t) {
            if (!tensors[t]) {
                throw ParseError(fmt::format("checkpoint: {}.h{} is missing {}", owner, head, kTensorNames[t]));
            }
            tensor(h, t) = std::move(*tensors[t]);
        }
        target->heads.push_back(std::move(h));
    }
    try {
        params.validate();
    } catch (const ShapeError& e) {
        throw ParseError(fmt::format("checkpoint: {}", e.what()));
    }
    return params;
}

void save_checkpoint(const std::filesystem::path& path, const AdapterParams& params) {
    write_file(path, serialize(params));
}

AdapterParams load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    try {
        return deserialize(bytes);
    } catch (const ParseError& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

Matrix load_features(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    Matrix m;
    if (path.extension() == ".jsonl") {
        std::vector<std::vector<double>> rows;
        for (const auto& [line_no, line] : nonblank_lines(bytes)) {
            try {
                rows.push_back(nlohmann::json::parse(line).get<std::vector<double>>());
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(fmt::format("{} line {}: {}", path.string(), line_no, e.what()));
            }
            if (rows.back().size() != rows.front().size()) {
                throw ParseError(fmt::format("{} line {}: {} values, expected {}", path.string(), line_no,
                                             rows.back().size(), rows.front().size()));
            }
        }
        if (rows.empty() || rows.front().empty()) {
            throw ValidationError(fmt::format("{}: no feature rows", path.string()));
        }
        m.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < rows[r].size(); ++c) {
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
            }
        }
    } else {
        binary::Reader reader(bytes);
        try {
            const auto rows = reader.get_le<std::uint32_t>("rows");
            const auto cols = reader.get_le<std::uint32_t>("cols");
            if (rows == 0 || cols == 0) {
                throw ValidationError(fmt::format("{}: feature block is {}x{}", path.string(), rows, cols));
            }
            if (std::uint64_t{rows} * cols * 4 != reader.remaining()) {
                throw ParseError(fmt::format("header declares {}x{} f32 values but {} bytes follow", rows, cols,
                                             reader.remaining()));
            }
            m.resize(rows, cols);
            for (Eigen::Index r = 0; r < m.rows(); ++r) {
                for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = reader.get_f32("feature data");
            }
        } catch (const ParseError& e) {
            throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
        }
    }
    require_finite(m, path.string());
    return m;
}

void save_features_f32(const std::filesystem::path& path, const Matrix& m) {
    std::string out;
    binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) binary::put_f32(out, static_cast<float>(m(r, c)));
    }
    write_file(path, out);
}

void save_features_jsonl(const std::filesystem::path& path, const Matrix& m) {
    std::string out;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        out += nlohmann::json(std::vector<double>(m.row(r).begin(), m.row(r).end())).dump();
        out += '\n';
    }
    write_file(path, out);
}

void require_finite(const Matrix& m, std::string_view what) {
    if (!m.allFinite()) {
        throw ValidationError(fmt::format("{} contain non-finite values", what));
    }
}

}  // namespace astra::dsm
