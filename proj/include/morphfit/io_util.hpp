#ifndef MORPHFIT_IO_UTIL_HPP_
#define MORPHFIT_IO_UTIL_HPP_

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "morphfit/common.hpp"

namespace morphfit {

// Little-endian byte buffer writer. All file formats in this project are
// written through this, so layouts stay explicit and platform-independent.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i8(std::int8_t v) { buf_.push_back(static_cast<std::uint8_t>(v)); }
  void f32(float v);
  void f64(double v);
  void bytes(const void* data, std::size_t n);
  void str(const std::string& s);  // u64 length prefix + raw bytes

  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

// Matching reader; throws IntegrityError on truncation.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : data_(buf.data()), size_(buf.size()) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
  float f32();
  double f64();
  void bytes(void* out, std::size_t n);
  std::string str();

  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const;
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

// CRC-32 (IEEE reflected polynomial 0xEDB88320) over a byte span.
std::uint32_t crc32(const std::uint8_t* data, std::size_t n);
inline std::uint32_t crc32(const std::vector<std::uint8_t>& v) { return crc32(v.data(), v.size()); }

// Whole-file helpers. write_file_atomic writes to a sibling temp file and
// renames into place, so rerunning a command overwrites outputs atomically.
std::vector<std::uint8_t> read_file(const std::string& path);
void write_file_atomic(const std::string& path, const void* data, std::size_t size);
inline void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& buf) {
  write_file_atomic(path, buf.data(), buf.size());
}
void write_text_atomic(const std::string& path, const std::string& text);

// Doubles formatted with 17 significant digits round-trip bit-exactly
// through CSV; shared by every CSV writer in the project.
std::string format_double(double v);

}  // namespace morphfit

#endif  // MORPHFIT_IO_UTIL_HPP_
