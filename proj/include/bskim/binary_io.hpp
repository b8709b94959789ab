#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "bskim/errors.hpp"

namespace bskim::binary {

// Little-endian byte sink.
class Writer {
 public:
  void bytes(std::string_view s) { buf_.append(s); }

  template <typename UInt>
  void uint(UInt v) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u8(std::uint8_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  const std::string& buffer() const noexcept { return buf_; }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!os) throw IoError("write to '" + path + "' failed");
  }

 private:
  std::string buf_;
};

// Little-endian byte source; every read reports the failing offset.
class Reader {
 public:
  explicit Reader(std::string data, std::string what = "stream") : buf_(std::move(data)), what_(std::move(what)) {}

  static Reader from_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return Reader(std::move(data), path);
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename UInt>
  UInt uint() {
    need(sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
      v |= static_cast<UInt>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(UInt);
    return v;
  }
  std::uint8_t u8() { return uint<std::uint8_t>(); }
  std::uint32_t u32() { return uint<std::uint32_t>(); }
  std::uint64_t u64() { return uint<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == buf_.size(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(what_ + ": " + msg + " at byte offset " + std::to_string(pos_));
  }

  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n)
      fail("truncated: need " + std::to_string(n) + " bytes, " + std::to_string(buf_.size() - pos_) + " left");
  }

 private:
  std::string buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace bskim::binary
