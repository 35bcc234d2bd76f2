#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "dfn/error.hpp"

namespace dfn {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swaps");

// Little-endian binary writer/reader with byte-offset tracking so format
// errors can name the offending position.

class BinWriter {
 public:
  explicit BinWriter(std::ostream& os) : os_(os) {}

  void bytes(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    offset_ += n;
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void f32(float v) { bytes(&v, sizeof v); }
  void f32_array(const double* src, std::size_t n) {
    buf_.resize(n);
    for (std::size_t i = 0; i < n; ++i) buf_[i] = static_cast<float>(src[i]);
    bytes(buf_.data(), n * sizeof(float));
  }
  void magic(const char tag[4]) { bytes(tag, 4); }

  std::uint64_t offset() const { return offset_; }

 private:
  std::ostream& os_;
  std::uint64_t offset_ = 0;
  std::vector<float> buf_;
};

class BinReader {
 public:
  explicit BinReader(std::istream& is) : is_(is) {}

  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw FormatError("unexpected end of file", offset_);
    }
    offset_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, sizeof v);
    return v;
  }
  void f32_array(double* dst, std::size_t n) {
    buf_.resize(n);
    bytes(buf_.data(), n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<double>(buf_[i]);
  }
  void expect_magic(const char tag[4], const std::string& what) {
    char got[4];
    const std::uint64_t at = offset_;
    bytes(got, 4);
    if (std::memcmp(got, tag, 4) != 0) {
      throw FormatError("bad magic for " + what, at);
    }
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& is_;
  std::uint64_t offset_ = 0;
  std::vector<float> buf_;
};

}  // namespace dfn
