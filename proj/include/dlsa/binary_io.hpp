#pragma once

// Little-endian byte buffers with CRC-32 (IEEE, zlib polynomial).

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "dlsa/error.hpp"

namespace dlsa::io {

inline std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  void magic(const char (&m)[5]) { bytes({reinterpret_cast<const std::uint8_t*>(m), 4}); }

  template <class T>
  void uint(T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }

  std::size_t size() const { return buf_.size(); }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void expect_magic(const char (&m)[5]) {
    need(4, "magic");
    if (std::memcmp(data_.data() + pos_, m, 4) != 0) {
      throw FormatError(std::string("bad magic at offset 0, expected \"") + m + "\"");
    }
    pos_ += 4;
  }

  template <class T>
  T uint(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::uint32_t u32(const char* what) { return uint<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return uint<std::uint64_t>(what); }
  float f32(const char* what) { return std::bit_cast<float>(uint<std::uint32_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
  void f64s(std::span<double> out, const char* what) {
    need(out.size() * 8, what);
    for (double& v : out) v = f64(what);
  }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError("truncated file: " + std::string(what) + " at offset " + std::to_string(pos_) +
                        " needs " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left");
    }
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContractError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ContractError("write failed: " + path);
}

/// Appends CRC-32 of bytes [payload_begin, end) to the buffer.
inline void seal(Writer& w, std::size_t payload_begin) {
  const auto& b = w.buffer();
  w.u32(crc32({b.data() + payload_begin, b.size() - payload_begin}));
}

/// Checks the trailing CRC-32 over [payload_begin, size-4); returns the payload end.
inline std::size_t verify_seal(std::span<const std::uint8_t> bytes, std::size_t payload_begin) {
  if (bytes.size() < payload_begin + 4) {
    throw FormatError("truncated file: missing CRC footer (size " + std::to_string(bytes.size()) + ")");
  }
  const std::size_t end = bytes.size() - 4;
  Reader footer(bytes.subspan(end));
  const std::uint32_t stored = footer.u32("crc");
  const std::uint32_t actual = crc32(bytes.subspan(payload_begin, end - payload_begin));
  if (stored != actual) {
    throw FormatError("CRC mismatch at offset " + std::to_string(end) + ": stored " + std::to_string(stored) +
                      ", computed " + std::to_string(actual));
  }
  return end;
}

}  // namespace dlsa::io
