#pragma once

#include "spadvae/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

// Little-endian byte packing used by every binary format in the project.
namespace spadvae::wire {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

// Bounds-checked sequential reader; throws IoError with the byte offset on
// truncation.
class Reader {
public:
  Reader(const std::uint8_t* data, std::size_t len) : data_(data), len_(len) {}

  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return len_ - pos_; }

  void bytes(void* dst, std::size_t n, const char* what) {
    if (pos_ + n > len_)
      throw IoError::at(std::string("truncated reading ") + what, pos_);
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }

  std::uint16_t u16(const char* what) {
    std::uint8_t b[2];
    bytes(b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32(const char* what) {
    std::uint8_t b[4];
    bytes(b, 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::uint64_t u64(const char* what) {
    std::uint8_t b[8];
    bytes(b, 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

private:
  const std::uint8_t* data_;
  std::size_t len_;
  std::size_t pos_ = 0;
};

} // namespace spadvae::wire
