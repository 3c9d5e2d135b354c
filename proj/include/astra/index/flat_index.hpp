#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace astra::index {

inline constexpr std::size_t kEmbeddingDim = 384;
inline constexpr double kUnitNormTolerance = 1e-4;

/// An L2-normalized embedding. Only constructible through l2_normalize or
/// from_unit, so holding one means the norm is 1 within kUnitNormTolerance.
class EmbeddingVector {
public:
    /// Adopts already-normalized values; throws IndexError when the norm is
    /// off by more than kUnitNormTolerance or the dimension is wrong.
    static EmbeddingVector from_unit(std::vector<float> values, std::size_t expected_dim = kEmbeddingDim);

    std::span<const float> values() const { return values_; }
    std::size_t dim() const { return values_.size(); }

private:
    explicit EmbeddingVector(std::vector<float> values) : values_(std::move(values)) {}
    friend EmbeddingVector l2_normalize(std::span<const float>, std::size_t);

    std::vector<float> values_;
};

/// v / ||v||_2, computed in double. Throws IndexError for a zero vector or a
/// dimension other than `expected_dim`.
EmbeddingVector l2_normalize(std::span<const float> raw, std::size_t expected_dim = kEmbeddingDim);

/// Column means of a row-major rows x dim token matrix. Throws IndexError
/// when rows is zero or the buffer size does not match.
std::vector<float> mean_pool(std::span<const float> tokens, std::size_t rows, std::size_t dim = kEmbeddingDim);

using EntryId = std::int64_t;

struct IndexEntry {
    EntryId id = 0;
    std::string prompt;
    EmbeddingVector vector;
    std::string pose_ref;
};

struct SearchHit {
    EntryId id = 0;
    /// Inner product with the query; cosine similarity for unit vectors.
    double score = 0.0;
    /// 1-based.
    std::size_t rank = 0;
    /// Storage slot, for metadata lookups.
    std::size_t slot = 0;

    friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

/// Exact maximum-inner-product index over a contiguous vector block.
/// Immutable once built; safe for concurrent searches.
class FlatIndex {
public:
    static constexpr std::string_view kMagic = "ASTRAIDX";
    static constexpr std::uint32_t kVersion = 1;

    /// Throws IndexError on duplicate ids or mismatched dimensions.
    static FlatIndex build(std::vector<IndexEntry> entries, std::size_t dim = kEmbeddingDim);

    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    std::size_t dim() const { return dim_; }

    /// Top-k by descending inner product, ties by ascending id. Returns all
    /// entries when fewer than k exist.
    std::vector<SearchHit> search(const EmbeddingVector& query, std::size_t k) const;

    EntryId id_at(std::size_t slot) const { return ids_.at(slot); }
    const std::string& prompt_at(std::size_t slot) const { return prompts_.at(slot); }
    const std::string& pose_ref_at(std::size_t slot) const { return pose_refs_.at(slot); }
    std::span<const float> vector_at(std::size_t slot) const;
    std::optional<std::size_t> find(EntryId id) const;

    /// Row-major size() x dim() block, in insertion order.
    std::span<const float> vector_block() const { return vectors_; }

    // Layout (little-endian): magic "ASTRAIDX", u32 version, u32 dim,
    // u64 count, count*dim f32 vectors, u64 metadata byte length, then per
    // entry: i64 id, u32 + UTF-8 prompt, u32 + UTF-8 pose_ref.
    std::string serialize() const;
    /// Throws IndexError naming the defect (magic, version, truncation, ...).
    static FlatIndex deserialize(std::string_view bytes);

    void save(const std::filesystem::path& path) const;
    static FlatIndex load(const std::filesystem::path& path);

    /// Byte offset of the vector block inside serialize() output.
    static constexpr std::size_t kVectorBlockOffset = 8 + 4 + 4 + 8;

private:
    std::size_t dim_ = kEmbeddingDim;
    std::vector<float> vectors_;
    std::vector<EntryId> ids_;
    std::vector<std::string> prompts_;
    std::vector<std::string> pose_refs_;
};

inline FlatIndex build_index(std::vector<IndexEntry> entries) { return FlatIndex::build(std::move(entries)); }

inline std::vector<SearchHit> search(const FlatIndex& index, const EmbeddingVector& query, std::size_t k) {
    return index.search(query, k);
}

/// One line of the bulk-ingest format: {"id", "prompt", "pose_ref", "vector"?}.
struct IngestRecord {
    EntryId id = 0;
    std::string prompt;
    std::string pose_ref;
    std::optional<std::vector<float>> vector;
};

/// Parses JSON-lines ingest records; blank lines are skipped and errors name
/// the line.
std::vector<IngestRecord> parse_ingest_jsonl(std::string_view text);

}  // namespace astra::index
