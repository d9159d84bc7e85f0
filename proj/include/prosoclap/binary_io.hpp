#pragma once

// Little-endian primitives for the MEL1 / FEA1 / checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>

#include "prosoclap/error.hpp"

namespace prosoclap::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline void write_bytes(std::ostream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& in, void* data, std::size_t n) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) throw Error(ErrorCode::Io, "unexpected end of file");
}

inline void write_magic(std::ostream& out, std::string_view magic) { write_bytes(out, magic.data(), magic.size()); }

inline void expect_magic(std::istream& in, std::string_view magic) {
    std::string got(magic.size(), '\0');
    read_bytes(in, got.data(), got.size());
    if (got != magic) throw Error(ErrorCode::Io, "bad magic, expected " + std::string(magic));
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_bytes(out, &v, sizeof v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_bytes(out, &v, sizeof v); }
inline void write_f32(std::ostream& out, float v) { write_bytes(out, &v, sizeof v); }

inline std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v;
    read_bytes(in, &v, sizeof v);
    return v;
}
inline std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v;
    read_bytes(in, &v, sizeof v);
    return v;
}
inline float read_f32(std::istream& in) {
    float v;
    read_bytes(in, &v, sizeof v);
    return v;
}

inline void write_f32_array(std::ostream& out, std::span<const float> v) { write_bytes(out, v.data(), v.size_bytes()); }
inline void read_f32_array(std::istream& in, std::span<float> v) { read_bytes(in, v.data(), v.size_bytes()); }
inline void write_f64_array(std::ostream& out, std::span<const double> v) { write_bytes(out, v.data(), v.size_bytes()); }
inline void read_f64_array(std::istream& in, std::span<double> v) { read_bytes(in, v.data(), v.size_bytes()); }

inline void write_string(std::ostream& out, std::string_view s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    write_bytes(out, s.data(), s.size());
}

inline std::string read_string(std::istream& in) {
    std::string s(read_u32(in), '\0');
    read_bytes(in, s.data(), s.size());
    return s;
}

}  // namespace prosoclap::io
