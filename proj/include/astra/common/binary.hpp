#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "astra/common/error.hpp"

namespace astra::binary {

// Little-endian encoding independent of host byte order.

template <typename T>
    requires std::is_integral_v<T>
void put_le(std::string& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto bits = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>(bits & 0xFFu));
        bits = static_cast<U>(bits >> 8);
    }
}

inline void put_f32(std::string& out, float value) { put_le(out, std::bit_cast<std::uint32_t>(value)); }
inline void put_f64(std::string& out, double value) { put_le(out, std::bit_cast<std::uint64_t>(value)); }

/// Bounds-checked cursor over a byte buffer. Every read past the end throws
/// with the name of the field that was being decoded.
class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
        requires std::is_integral_v<T>
    T get_le(std::string_view field) {
        require(sizeof(T), field);
        using U = std::make_unsigned_t<T>;
        U bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            bits |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
        }
        pos_ += sizeof(T);
        return static_cast<T>(bits);
    }

    float get_f32(std::string_view field) { return std::bit_cast<float>(get_le<std::uint32_t>(field)); }
    double get_f64(std::string_view field) { return std::bit_cast<double>(get_le<std::uint64_t>(field)); }

    std::string_view get_bytes(std::size_t count, std::string_view field) {
        require(count, field);
        auto out = bytes_.substr(pos_, count);
        pos_ += count;
        return out;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void require(std::size_t count, std::string_view field) const {
        if (remaining() < count) {
            throw ParseError("truncated input while reading " + std::string(field));
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace astra::binary
