#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "lpdesc/error.hpp"

// Little-endian primitives shared by the checkpoint and descriptor formats.
namespace lpdesc::binio {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_f32(std::ostream& os, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  write_u32(os, bits);
}

inline void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u32(os, static_cast<std::uint32_t>(bits & 0xffffffffu));
  write_u32(os, static_cast<std::uint32_t>(bits >> 32));
}

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

/// Stream reader that tracks the byte offset for error reporting.
class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::size_t offset() const { return offset_; }

  void read_bytes(char* dst, std::size_t n, const char* what) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw DecodeError(std::string("truncated input while reading ") + what,
                        offset_ + static_cast<std::size_t>(is_.gcount()));
    }
    offset_ += n;
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    read_bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }

  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  double f64(const char* what) {
    const std::uint64_t lo = u32(what);
    const std::uint64_t hi = u32(what);
    const std::uint64_t bits = lo | (hi << 32);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }

  void expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    read_bytes(got.data(), got.size(), "magic");
    if (got != magic) {
      throw DecodeError("bad magic, expected \"" + std::string(magic) + "\"", 0);
    }
  }

  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
  std::size_t offset_ = 0;
};

}  // namespace lpdesc::binio
