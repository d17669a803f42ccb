#pragma once

// Little-endian primitives shared by the window container and checkpoints.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "canadv/error.hpp"

namespace canadv::detail {

template <typename U>
void put_le(std::ostream& out, U value) {
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    }
    out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
    std::array<unsigned char, sizeof(U)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (!in) throw IoError("unexpected end of file");
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
}

inline void put_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
inline void put_i32(std::ostream& out, std::int32_t v) { put_le(out, static_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t get_u32(std::istream& in) { return get_le<std::uint32_t>(in); }
inline std::uint64_t get_u64(std::istream& in) { return get_le<std::uint64_t>(in); }
inline std::int32_t get_i32(std::istream& in) { return static_cast<std::int32_t>(get_le<std::uint32_t>(in)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

inline void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
    const auto n = get_u32(in);
    if (n > (1u << 20)) throw IoError("string length out of range");
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw IoError("unexpected end of file");
    return s;
}

inline void expect_magic(std::istream& in, const std::array<char, 8>& magic, const std::string& what) {
    std::array<char, 8> got{};
    in.read(got.data(), got.size());
    if (!in || got != magic) throw IoError("not a " + what + " file (bad magic)");
}

}  // namespace canadv::detail
