#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bers/errors.hpp"

namespace bers {

/// Append-only little-endian byte buffer.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v);
  void u32(uint32_t v);
  void u64(uint64_t v);
  void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
  void f64(double v);
  void bytes(const void* p, size_t n);
  void str(const std::string& s);  // u16 length + UTF-8 bytes

  const std::vector<uint8_t>& data() const { return buf_; }
  size_t size() const { return buf_.size(); }

 private:
  std::vector<uint8_t> buf_;
};

/// Little-endian reader over a byte buffer; throws IntegrityError on
/// truncation.
class ByteReader {
 public:
  explicit ByteReader(std::vector<uint8_t> data) : buf_(std::move(data)) {}

  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  int64_t i64() { return static_cast<int64_t>(u64()); }
  double f64();
  void bytes(void* p, size_t n);
  std::string str();

  size_t pos() const { return pos_; }
  size_t remaining() const { return buf_.size() - pos_; }
  const std::vector<uint8_t>& data() const { return buf_; }

 private:
  void need(size_t n);
  std::vector<uint8_t> buf_;
  size_t pos_ = 0;
};

void write_file(const std::string& path, const std::vector<uint8_t>& data);
std::vector<uint8_t> read_file(const std::string& path);

uint32_t crc32_of(const uint8_t* data, size_t n);
std::string sha256_hex(const uint8_t* data, size_t n);

}  // namespace bers
