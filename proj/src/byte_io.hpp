#pragma once

// Little-endian encoding helpers and whole-file IO shared by the binary
// containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coffe/error.hpp"

namespace coffe::detail {

class ByteWriter {
 public:
  template <typename T>
  void put_uint(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
      out_.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
  void put_f32(float v) { put_uint(std::bit_cast<std::uint32_t>(v)); }
  void put_f64(double v) { put_uint(std::bit_cast<std::uint64_t>(v)); }
  void put_bytes(std::string_view bytes) { out_.append(bytes); }
  /// u16 length prefix + bytes.
  void put_short_string(std::string_view s, const char* what) {
    if (s.size() > 0xffff) throw ValidationError(std::string(what) + " longer than 65535 bytes");
    put_uint<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    put_bytes(s);
  }

  std::string& str() { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : in_(bytes) {}

  template <typename T>
  T get_uint(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  float get_f32(const char* what) { return std::bit_cast<float>(get_uint<std::uint32_t>(what)); }
  double get_f64(const char* what) { return std::bit_cast<double>(get_uint<std::uint64_t>(what)); }
  std::string_view get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string_view v = in_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  std::string get_short_string(const char* what) {
    const auto n = get_uint<std::uint16_t>(what);
    return std::string(get_bytes(n, what));
  }

  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n)
      throw FormatError(std::string("truncated payload while reading ") + what);
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);

/// Writes via a temporary sibling file and a rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);


/// All-or-nothing publication of several files: every payload is written to
/// a temporary sibling first, and only then are they renamed into place.
void commit_outputs(const std::vector<std::pair<std::filesystem::path, std::string>>& outputs);

}  // namespace coffe::detail
