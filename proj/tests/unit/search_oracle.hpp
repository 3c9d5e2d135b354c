#pragma once

// Brute-force MIPS scan used as the reference for FlatIndex::search.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace astra::test {

/// Top-k (id, score) pairs by an O(n * d) long-double scan with a full sort.
inline std::vector<std::pair<std::int64_t, long double>> brute_force_top_k(
    const std::vector<std::vector<float>>& vectors, const std::vector<std::int64_t>& ids, std::span<const float> query,
    std::size_t k) {
    std::vector<std::pair<std::int64_t, long double>> scored;
    for (std::size_t j = 0; j < vectors.size(); ++j) {
        long double s = 0.0L;
        for (std::size_t c = 0; c < query.size(); ++c) {
            s += static_cast<long double>(query[c]) * static_cast<long double>(vectors[j][c]);
        }
        scored.emplace_back(ids[j], s);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    scored.resize(std::min(k, scored.size()));
    return scored;
}

inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace astra::test
