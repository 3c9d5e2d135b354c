#include "astra/europe/kernel.hpp"

#include <fmt/format.h>

#include <cmath>

#include "astra/common/error.hpp"
#include "astra/common/io.hpp"

namespace astra::europe {

using nlohmann::json;

namespace {

void check_extent(const GridSize& g, std::string_view what) {
    if (g.w < 1 || g.h < 1) {
        throw ValidationError(fmt::format("{} extent {}x{} must be at least 1x1", what, g.w, g.h));
    }
}

std::vector<PositionIndex> grid_positions(GridSize g, PositionIndex offset = {}) {
    std::vector<PositionIndex> out;
    out.reserve(static_cast<std::size_t>(g.count()));
    for (int j = 0; j < g.h; ++j) {
        for (int i = 0; i < g.w; ++i) out.push_back({i + offset.i, j + offset.j});
    }
    return out;
}

json positions_json(std::span<const PositionIndex> positions) {
    json out = json::array();
    for (const auto& p : positions) out.push_back({p.i, p.j});
    return out;
}

void rotate_pairs(Eigen::VectorXd& x, Eigen::Index start, Eigen::Index width, int pos, double base) {
    const double d_axis = static_cast<double>(width);
    for (Eigen::Index m = 0; 2 * m < width; ++m) {
        const double theta = pos * std::pow(base, -2.0 * static_cast<double>(m) / d_axis);
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const double a = x[start + 2 * m];
        const double b = x[start + 2 * m + 1];
        x[start + 2 * m] = a * c - b * s;
        x[start + 2 * m + 1] = a * s + b * c;
    }
}

void check_image(const ImageTokens& image, Role role, int ref, std::string_view what) {
    check_extent(image.size, what);
    if (static_cast<int>(image.tokens.size()) != image.size.count()) {
        throw ValidationError(fmt::format("{} holds {} tokens for a {}x{} grid", what, image.tokens.size(),
                                          image.size.w, image.size.h));
    }
    for (const auto& t : image.tokens) {
        if (t.role != role || (role == Role::Ref && t.ref != ref)) {
            throw ValidationError(fmt::format("{} contains a {} token", what, to_string(t.role)));
        }
    }
}

}  // namespace

void LayoutSpec::validate() const {
    check_extent(latent, "latent");
    for (std::size_t k = 0; k < refs.size(); ++k) check_extent(refs[k], fmt::format("reference {}", k));
    if (pose) {
        check_extent(*pose, "pose");
        if (pose->w > latent.w || pose->h > latent.h) {
            throw ValidationError(fmt::format("pose extent {}x{} exceeds latent {}x{}", pose->w, pose->h, latent.w,
                                              latent.h));
        }
    }
    if (text_len < 0) {
        throw ValidationError("text_len must be non-negative");
    }
}

std::string_view to_string(Role role) {
    switch (role) {
        case Role::Text: return "text";
        case Role::Ref: return "ref";
        case Role::Pose: return "pose";
        case Role::Latent: return "latent";
    }
    return "?";
}

Role role_from_string(std::string_view name) {
    for (Role r : {Role::Text, Role::Ref, Role::Pose, Role::Latent}) {
        if (to_string(r) == name) return r;
    }
    throw ParseError(fmt::format("unknown token role '{}'", name));
}

std::string_view to_string(EncodingMode mode) {
    switch (mode) {
        case EncodingMode::EuropeAsymmetric: return "asymmetric";
        case EncodingMode::SymmetricRope: return "symmetric_rope";
        case EncodingMode::SymmetricUnope: return "symmetric_unope";
    }
    return "?";
}

EncodingMode mode_from_string(std::string_view name) {
    for (auto m : {EncodingMode::EuropeAsymmetric, EncodingMode::SymmetricRope, EncodingMode::SymmetricUnope}) {
        if (to_string(m) == name) return m;
    }
    throw ValidationError(
        fmt::format("unknown encoding mode '{}' (expected asymmetric, symmetric_rope or symmetric_unope)", name));
}

ImageTokens tokenize_image(const PatchGrid& grid, Role role, int ref, const Eigen::MatrixXd* projection) {
    if (grid.size.w < 1 || grid.size.h < 1 || grid.patches.empty()) {
        throw ValidationError("cannot tokenize an empty patch grid");
    }
    if (static_cast<int>(grid.patches.size()) != grid.size.count()) {
        throw ValidationError(fmt::format("patch grid {}x{} holds {} patches", grid.size.w, grid.size.h,
                                          grid.patches.size()));
    }
    const Eigen::Index d_in = grid.patches.front().size();
    if (projection != nullptr && projection->cols() != d_in) {
        throw ValidationError(fmt::format("projection expects {} inputs, patches have {}", projection->cols(), d_in));
    }
    ImageTokens out{grid.size, {}};
    out.tokens.reserve(grid.patches.size());
    const auto positions = grid_positions(grid.size);
    for (std::size_t n = 0; n < grid.patches.size(); ++n) {
        const auto& patch = grid.patches[n];
        if (patch.size() != d_in) {
            throw ValidationError(fmt::format("patch {} has {} features, expected {}", n, patch.size(), d_in));
        }
        Token t;
        t.role = role;
        t.ref = role == Role::Ref ? ref : -1;
        t.features = projection != nullptr ? Eigen::VectorXd(*projection * patch) : patch;
        t.position = positions[n];
        out.tokens.push_back(std::move(t));
    }
    return out;
}

json PositionTable::to_json() const {
    json refs_json = json::array();
    for (const auto& r : refs) refs_json.push_back(positions_json(r));
    return {{"text", positions_json(text)},
            {"refs", refs_json},
            {"pose", positions_json(pose)},
            {"latent", positions_json(latent)}};
}

std::vector<PositionIndex> reference_offsets(const LayoutSpec& layout) {
    std::vector<PositionIndex> offsets;
    PositionIndex running{layout.latent.w, layout.latent.h};
    for (const auto& r : layout.refs) {
        offsets.push_back(running);
        running.i += r.w;
        running.j += r.h;
    }
    return offsets;
}

PositionTable assign_positions(const LayoutSpec& layout, EncodingMode mode) {
    layout.validate();
    PositionTable table;
    table.text.assign(static_cast<std::size_t>(layout.text_len), PositionIndex{0, 0});
    table.latent = grid_positions(layout.latent);

    const auto offsets = reference_offsets(layout);
    for (std::size_t k = 0; k < layout.refs.size(); ++k) {
        const bool native = mode == EncodingMode::SymmetricRope;
        table.refs.push_back(grid_positions(layout.refs[k], native ? PositionIndex{} : offsets[k]));
    }

    if (layout.pose) {
        PositionIndex offset{};
        if (mode == EncodingMode::SymmetricUnope) {
            offset = {layout.latent.w, layout.latent.h};
            for (const auto& r : layout.refs) {
                offset.i += r.w;
                offset.j += r.h;
            }
        }
        table.pose = grid_positions(*layout.pose, offset);
    }
    return table;
}

std::set<PositionIndex> index_set(std::span<const PositionIndex> positions) {
    return {positions.begin(), positions.end()};
}

TokenSequence assemble_sequence(const std::vector<Token>& text, const std::vector<ImageTokens>& refs,
                                const std::optional<ImageTokens>& pose, const ImageTokens& latent,
                                EncodingMode mode) {
    TokenSequence seq;
    seq.mode = mode;
    seq.layout.latent = latent.size;
    seq.layout.text_len = static_cast<int>(text.size());
    for (const auto& r : refs) seq.layout.refs.push_back(r.size);
    if (pose) seq.layout.pose = pose->size;

    for (const auto& t : text) {
        if (t.role != Role::Text) {
            throw ValidationError(fmt::format("text stream contains a {} token", to_string(t.role)));
        }
    }
    for (std::size_t k = 0; k < refs.size(); ++k) {
        check_image(refs[k], Role::Ref, static_cast<int>(k), fmt::format("reference {}", k));
    }
    if (pose) check_image(*pose, Role::Pose, -1, "pose");
    check_image(latent, Role::Latent, -1, "latent");

    const auto table = assign_positions(seq.layout, mode);
    auto append = [&seq](const std::vector<Token>& tokens, const std::vector<PositionIndex>& positions) {
        for (std::size_t n = 0; n < tokens.size(); ++n) {
            Token t = tokens[n];
            t.position = positions[n];
            seq.tokens.push_back(std::move(t));
        }
    };
    append(text, table.text);
    for (std::size_t k = 0; k < refs.size(); ++k) append(refs[k].tokens, table.refs[k]);
    if (pose) append(pose->tokens, table.pose);
    append(latent.tokens, table.latent);

    const Eigen::Index d = seq.dim();
    for (std::size_t n = 0; n < seq.tokens.size(); ++n) {
        if (seq.tokens[n].features.size() != d) {
            throw ValidationError(
                fmt::format("token {} has {} features, expected {}", n, seq.tokens[n].features.size(), d));
        }
    }
    return seq;
}

Eigen::VectorXd rope_apply(const Eigen::VectorXd& x, PositionIndex pos, double base) {
    const Eigen::Index d = x.size();
    if (d == 0 || d % 4 != 0) {
        throw ShapeError(fmt::format("rotary dimension {} is not a positive multiple of 4", d));
    }
    Eigen::VectorXd out = x;
    rotate_pairs(out, 0, d / 2, pos.i, base);
    rotate_pairs(out, d / 2, d / 2, pos.j, base);
    return out;
}

void AttentionParams::validate(Eigen::Index d_model) const {
    for (const auto* w : {&wq, &wk, &wv}) {
        if (w->rows() != d_model) {
            throw ShapeError(fmt::format("projection has {} rows, tokens have {} features", w->rows(), d_model));
        }
    }
    if (wk.cols() != wq.cols() || wv.cols() != wq.cols()) {
        throw ShapeError("query, key and value projections must share a head width");
    }
    if (wq.cols() == 0 || wq.cols() % 4 != 0) {
        throw ShapeError(fmt::format("head width {} is not a positive multiple of 4", wq.cols()));
    }
}

AttentionResult attention_forward(const TokenSequence& seq, const AttentionParams& params, double base) {
    if (seq.tokens.empty()) {
        throw ShapeError("attention over an empty sequence");
    }
    params.validate(seq.dim());
    const auto n = static_cast<Eigen::Index>(seq.tokens.size());
    const Eigen::Index d_head = params.wq.cols();

    Eigen::MatrixXd x(n, seq.dim());
    for (Eigen::Index r = 0; r < n; ++r) x.row(r) = seq.tokens[static_cast<std::size_t>(r)].features.transpose();
    Eigen::MatrixXd q = x * params.wq;
    Eigen::MatrixXd k = x * params.wk;
    const Eigen::MatrixXd v = x * params.wv;
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto pos = seq.tokens[static_cast<std::size_t>(r)].position;
        q.row(r) = rope_apply(q.row(r).transpose(), pos, base).transpose();
        k.row(r) = rope_apply(k.row(r).transpose(), pos, base).transpose();
    }

    AttentionResult result;
    result.logits = (q * k.transpose()) / std::sqrt(static_cast<double>(d_head));
    Eigen::MatrixXd weights = result.logits;
    for (Eigen::Index r = 0; r < n; ++r) {
        const double peak = weights.row(r).maxCoeff();
        weights.row(r) = (weights.row(r).array() - peak).exp().matrix();
        weights.row(r) /= weights.row(r).sum();
    }
    result.output = weights * v;
    return result;
}

std::string tokens_to_jsonl(std::span<const Token> tokens) {
    std::string out;
    for (const auto& t : tokens) {
        json line{{"role", to_string(t.role)},
                  {"ref", t.ref},
                  {"i", t.position.i},
                  {"j", t.position.j},
                  {"features", std::vector<double>(t.features.begin(), t.features.end())}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

std::vector<Token> tokens_from_jsonl(std::string_view text) {
    std::vector<Token> tokens;
    for (const auto& [line_no, line] : nonblank_lines(text)) {
        try {
            const auto doc = json::parse(line);
            Token t;
            t.role = role_from_string(doc.at("role").get<std::string>());
            t.ref = doc.value("ref", -1);
            t.position = {doc.at("i").get<int>(), doc.at("j").get<int>()};
            const auto features = doc.at("features").get<std::vector<double>>();
            t.features = Eigen::Map<const Eigen::VectorXd>(features.data(), static_cast<Eigen::Index>(features.size()));
            tokens.push_back(std::move(t));
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("token line {}: {}", line_no, e.what()));
        } catch (const ParseError& e) {
            throw ParseError(fmt::format("token line {}: {}", line_no, e.what()));
        }
    }
    return tokens;
}

std::string matrix_to_jsonl(const Eigen::MatrixXd& m) {
    std::string out;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out += row.dump();
        out += '\n';
    }
    return out;
}

Eigen::MatrixXd matrix_from_jsonl(std::string_view text) {
    std::vector<std::vector<double>> rows;
    for (const auto& [line_no, line] : nonblank_lines(text)) {
        try {
            rows.push_back(json::parse(line).get<std::vector<double>>());
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("matrix line {}: {}", line_no, e.what()));
        }
        if (rows.back().size() != rows.front().size()) {
            throw ParseError(fmt::format("matrix line {} has {} columns, expected {}", line_no, rows.back().size(),
                                         rows.front().size()));
        }
    }
    const auto cols = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
    }
    return m;
}

}  // namespace astra::europe
