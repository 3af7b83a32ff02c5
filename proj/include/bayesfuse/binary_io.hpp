#pragma once

// Little-endian primitive encoding shared by the RSTF and BGP1 formats.
// Values are assembled byte by byte so the files are identical on any host.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "error.hpp"

namespace bayesfuse::binio {

template <class UInt>
void write_le(std::ostream& os, UInt v) {
    std::array<char, sizeof(UInt)> buf{};
    for (std::size_t i = 0; i < sizeof(UInt); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void write_u8(std::ostream& os, std::uint8_t v) { write_le(os, v); }
inline void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
inline void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }

template <class UInt>
UInt read_le(std::istream& is, const std::string& context) {
    std::array<unsigned char, sizeof(UInt)> buf{};
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw IoError(context + ": unexpected end of file");
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(buf[i]) << (8 * i);
    return v;
}

inline std::uint8_t read_u8(std::istream& is, const std::string& ctx) { return read_le<std::uint8_t>(is, ctx); }
inline std::uint32_t read_u32(std::istream& is, const std::string& ctx) { return read_le<std::uint32_t>(is, ctx); }
inline std::uint64_t read_u64(std::istream& is, const std::string& ctx) { return read_le<std::uint64_t>(is, ctx); }
inline double read_f64(std::istream& is, const std::string& ctx) {
    return std::bit_cast<double>(read_le<std::uint64_t>(is, ctx));
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& ctx) {
    char buf[4] = {};
    is.read(buf, 4);
    if (!is || std::string(buf, 4) != std::string(magic, 4))
        throw IoError(ctx + ": bad magic bytes (expected \"" + std::string(magic, 4) + "\")");
}

} // namespace bayesfuse::binio
