#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "dprgmi/errors.hpp"

// Little-endian binary primitives shared by the checkpoint and embedding
// file formats.

namespace dprgmi::binio {

template <typename T>
inline void write_le(std::ostream& out, T value) {
    static_assert(std::is_integral_v<T> && std::is_unsigned_v<T>);
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
inline T read_le(std::istream& in, const char* what) {
    static_assert(std::is_integral_v<T> && std::is_unsigned_v<T>);
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
        throw IoError(std::string("truncated file while reading ") + what);
    }
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<T>(bytes[i]) << (8 * i);
    }
    return value;
}

inline void write_f64(std::ostream& out, double value) {
    write_le(out, std::bit_cast<std::uint64_t>(value));
}

inline double read_f64(std::istream& in, const char* what) {
    return std::bit_cast<double>(read_le<std::uint64_t>(in, what));
}

inline void write_f32(std::ostream& out, float value) {
    write_le(out, std::bit_cast<std::uint32_t>(value));
}

inline float read_f32(std::istream& in, const char* what) {
    return std::bit_cast<float>(read_le<std::uint32_t>(in, what));
}

inline void write_magic(std::ostream& out, const char magic[4]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char magic[4], const char* format_name) {
    char got[4];
    if (!in.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
        throw IoError(std::string("not a ") + format_name + " file (bad magic)");
    }
}

}  // namespace dprgmi::binio
