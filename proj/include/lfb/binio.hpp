#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "lfb/errors.hpp"

namespace lfb::detail {

// Little-endian primitives shared by the bank and checkpoint containers.
// Reads throw FormatError(kTruncated) when the stream ends early; writes
// throw IoError on failure.

inline void write_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("write failed");
}

inline void read_bytes(std::istream& in, void* data, std::size_t n,
                       const char* context) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError(FormatError::Kind::kTruncated,
                      std::string("unexpected end of stream while reading ") +
                          context);
  }
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  write_bytes(out, b, 4);
}

inline std::uint32_t read_u32(std::istream& in, const char* context) {
  unsigned char b[4];
  read_bytes(in, b, 4, context);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float v) {
  write_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline float read_f32(std::istream& in, const char* context) {
  return std::bit_cast<float>(read_u32(in, context));
}

inline bool at_eof(std::istream& in) {
  return in.peek() == std::istream::traits_type::eof();
}

}  // namespace lfb::detail
