#pragma once

// Little-endian byte buffers shared by the corpus and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

#include "pixpoint/error.hpp"

namespace pixpoint::io {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }

  template <typename T>
  void put_array(const T* data, std::size_t n) {
    put<std::uint64_t>(n);
    const auto* p = reinterpret_cast<const unsigned char*>(data);
    buf_.insert(buf_.end(), p, p + n * sizeof(T));
  }

  void put_string(const std::string& s) { put_array(s.data(), s.size()); }

  /// Tagged, length-prefixed section; `body` writes the payload.
  template <typename F>
  void section(std::uint32_t tag, F body) {
    put(tag);
    const std::size_t len_at = buf_.size();
    put<std::uint64_t>(0);
    const std::size_t start = buf_.size();
    body(*this);
    const std::uint64_t len = buf_.size() - start;
    std::memcpy(buf_.data() + len_at, &len, sizeof(len));
  }

  std::vector<unsigned char>& bytes() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t n) : data_(data), n_(n) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  template <typename T>
  std::vector<T> get_array() {
    const auto n = get<std::uint64_t>();
    require(n <= (n_ - pos_) / sizeof(T), ErrorCode::kTruncated, "array length exceeds remaining bytes");
    std::vector<T> out(n);
    if (n) std::memcpy(out.data(), data_ + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return out;
  }

  std::string get_string() {
    auto v = get_array<char>();
    return {v.begin(), v.end()};
  }

  /// Reads a section header and returns a reader over its payload.
  ByteReader section(std::uint32_t expected_tag) {
    const auto tag = get<std::uint32_t>();
    require(tag == expected_tag, ErrorCode::kTruncated,
            "unexpected section tag " + std::to_string(tag) + " (wanted " + std::to_string(expected_tag) + ")");
    const auto len = get<std::uint64_t>();
    need(len);
    ByteReader sub(data_ + pos_, len);
    pos_ += len;
    return sub;
  }

  std::size_t remaining() const { return n_ - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t k) const {
    require(k <= n_ - pos_, ErrorCode::kTruncated, "unexpected end of data");
  }

  const unsigned char* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

}  // namespace pixpoint::io
