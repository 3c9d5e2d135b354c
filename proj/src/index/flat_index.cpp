#include "astra/index/flat_index.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <unordered_set>

#include "astra/common/binary.hpp"
#include "astra/common/error.hpp"
#include "astra/common/io.hpp"

namespace astra::index {

namespace {

double norm_of(std::span<const float> v) {
    double sum = 0.0;
    for (float x : v) sum += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(sum);
}

double dot(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return sum;
}

bool ranks_before(const SearchHit& a, const SearchHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
}

}  // namespace

EmbeddingVector EmbeddingVector::from_unit(std::vector<float> values, std::size_t expected_dim) {
    if (values.size() != expected_dim) {
        throw IndexError(fmt::format("embedding has dimension {}, expected {}", values.size(), expected_dim));
    }
    const double norm = norm_of(values);
    if (!(std::abs(norm - 1.0) <= kUnitNormTolerance)) {
        throw IndexError(fmt::format("embedding norm {} is not 1 within {}", norm, kUnitNormTolerance));
    }
    return EmbeddingVector(std::move(values));
}

EmbeddingVector l2_normalize(std::span<const float> raw, std::size_t expected_dim) {
    if (raw.size() != expected_dim) {
        throw IndexError(fmt::format("embedding has dimension {}, expected {}", raw.size(), expected_dim));
    }
    const double norm = norm_of(raw);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw IndexError("cannot normalize a zero or non-finite vector");
    }
    std::vector<float> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out[i] = static_cast<float>(static_cast<double>(raw[i]) / norm);
    }
    return EmbeddingVector(std::move(out));
}

std::vector<float> mean_pool(std::span<const float> tokens, std::size_t rows, std::size_t dim) {
    if (rows == 0) {
        throw IndexError("mean pooling needs at least one token row");
    }
    if (tokens.size() != rows * dim) {
        throw IndexError(fmt::format("token buffer holds {} values, expected {} x {}", tokens.size(), rows, dim));
    }
    std::vector<double> sums(dim, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < dim; ++c) {
            sums[c] += tokens[r * dim + c];
        }
    }
    std::vector<float> out(dim);
    for (std::size_t c = 0; c < dim; ++c) {
        out[c] = static_cast<float>(sums[c] / static_cast<double>(rows));
    }
    return out;
}

FlatIndex FlatIndex::build(std::vector<IndexEntry> entries, std::size_t dim) {
    FlatIndex index;
    index.dim_ = dim;
    index.vectors_.reserve(entries.size() * dim);
    std::unordered_set<EntryId> seen;
    for (auto& entry : entries) {
        if (!seen.insert(entry.id).second) {
            throw IndexError(fmt::format("duplicate entry id {}", entry.id));
        }
        if (entry.vector.dim() != dim) {
            throw IndexError(
                fmt::format("entry {} has dimension {}, index expects {}", entry.id, entry.vector.dim(), dim));
        }
        const auto values = entry.vector.values();
        index.vectors_.insert(index.vectors_.end(), values.begin(), values.end());
        index.ids_.push_back(entry.id);
        index.prompts_.push_back(std::move(entry.prompt));
        index.pose_refs_.push_back(std::move(entry.pose_ref));
    }
    return index;
}

std::span<const float> FlatIndex::vector_at(std::size_t slot) const {
    if (slot >= size()) {
        throw IndexError(fmt::format("slot {} out of range for {} entries", slot, size()));
    }
    return std::span<const float>(vectors_).subspan(slot * dim_, dim_);
}

std::optional<std::size_t> FlatIndex::find(EntryId id) const {
    const auto it = std::find(ids_.begin(), ids_.end(), id);
    if (it == ids_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - ids_.begin());
}

std::vector<SearchHit> FlatIndex::search(const EmbeddingVector& query, std::size_t k) const {
    if (k == 0) {
        throw IndexError("search needs k >= 1");
    }
    if (query.dim() != dim_) {
        throw IndexError(fmt::format("query has dimension {}, index expects {}", query.dim(), dim_));
    }
    const auto q = query.values();
    std::vector<SearchHit> hits(size());
    for (std::size_t slot = 0; slot < size(); ++slot) {
        hits[slot] = {ids_[slot], dot(q, vector_at(slot)), 0, slot};
    }
    const std::size_t keep = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), ranks_before);
    hits.resize(keep);
    for (std::size_t r = 0; r < hits.size(); ++r) {
        hits[r].rank = r + 1;
    }
    return hits;
}

std::string FlatIndex::serialize() const {
    std::string out;
    out.reserve(kVectorBlockOffset + vectors_.size() * 4 + 64 * size());
    out.append(kMagic);
    binary::put_le<std::uint32_t>(out, kVersion);
    binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
    binary::put_le<std::uint64_t>(out, size());
    for (float v : vectors_) binary::put_f32(out, v);

    std::string meta;
    for (std::size_t slot = 0; slot < size(); ++slot) {
        binary::put_le<std::int64_t>(meta, ids_[slot]);
        binary::put_le<std::uint32_t>(meta, static_cast<std::uint32_t>(prompts_[slot].size()));
        meta.append(prompts_[slot]);
        binary::put_le<std::uint32_t>(meta, static_cast<std::uint32_t>(pose_refs_[slot].size()));
        meta.append(pose_refs_[slot]);
    }
    binary::put_le<std::uint64_t>(out, meta.size());
    out.append(meta);
    return out;
}

FlatIndex FlatIndex::deserialize(std::string_view bytes) {
    binary::Reader reader(bytes);
    try {
        if (reader.get_bytes(kMagic.size(), "magic") != kMagic) {
            throw IndexError("bad magic: not an ASTRAIDX index file");
        }
        const auto version = reader.get_le<std::uint32_t>("version");
        if (version != kVersion) {
            throw IndexError(fmt::format("unsupported index version {} (expected {})", version, kVersion));
        }
        const auto dim = reader.get_le<std::uint32_t>("dim");
        if (dim == 0) {
            throw IndexError("index header declares dimension 0");
        }
        const auto count = reader.get_le<std::uint64_t>("count");
        if (count > reader.remaining() / (4ull * dim)) {
            throw IndexError(fmt::format("truncated vector block: header declares {} entries of dimension {}", count,
                                         dim));
        }
        std::vector<float> block(count * dim);
        for (auto& v : block) v = reader.get_f32("vector block");

        const auto meta_len = reader.get_le<std::uint64_t>("metadata length");
        if (meta_len != reader.remaining()) {
            throw IndexError(fmt::format("metadata block length {} does not match the {} remaining bytes", meta_len,
                                         reader.remaining()));
        }
        std::vector<IndexEntry> entries;
        entries.reserve(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            const auto id = reader.get_le<std::int64_t>("entry id");
            std::string prompt(reader.get_bytes(reader.get_le<std::uint32_t>("prompt length"), "prompt"));
            std::string pose_ref(reader.get_bytes(reader.get_le<std::uint32_t>("pose_ref length"), "pose_ref"));
            std::vector<float> values(block.begin() + static_cast<std::ptrdiff_t>(i * dim),
                                      block.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
            try {
                entries.push_back(IndexEntry{id, std::move(prompt), EmbeddingVector::from_unit(std::move(values), dim),
                                             std::move(pose_ref)});
            } catch (const IndexError& e) {
                throw IndexError(fmt::format("entry {}: {}", id, e.what()));
            }
        }
        if (reader.remaining() != 0) {
            throw IndexError(fmt::format("{} trailing bytes after metadata", reader.remaining()));
        }
        return build(std::move(entries), dim);
    } catch (const ParseError& e) {
        throw IndexError(e.what());
    }
}

void FlatIndex::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

FlatIndex FlatIndex::load(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    try {
        return deserialize(bytes);
    } catch (const IndexError& e) {
        throw IndexError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::vector<IngestRecord> parse_ingest_jsonl(std::string_view text) {
    std::vector<IngestRecord> records;
    for (const auto& [line_no, line] : nonblank_lines(text)) {
        try {
            const auto doc = nlohmann::json::parse(line);
            IngestRecord rec;
            rec.id = doc.at("id").get<EntryId>();
            rec.prompt = doc.at("prompt").get<std::string>();
            rec.pose_ref = doc.at("pose_ref").get<std::string>();
            if (auto it = doc.find("vector"); it != doc.end() && !it->is_null()) {
                rec.vector = it->get<std::vector<float>>();
            }
            records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(fmt::format("ingest line {}: {}", line_no, e.what()));
        }
    }
    return records;
}

}  // namespace astra::index
