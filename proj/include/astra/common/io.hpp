#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace astra {

/// Reads a whole file; throws IoError naming the path on failure.
std::string read_file(const std::filesystem::path& path);

/// Writes (truncating) a whole file; throws IoError naming the path on failure.
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Shortest round-trip decimal form of a real, always carrying a decimal
/// point or exponent ("1.0", not "1").
std::string format_real(double value);

/// Trims ASCII whitespace from both ends.
std::string_view trim(std::string_view text);

struct Line {
    std::size_t number;  // 1-based
    std::string_view text;
};

/// Trimmed non-blank lines of `text`, for JSON-lines style inputs.
std::vector<Line> nonblank_lines(std::string_view text);

}  // namespace astra
