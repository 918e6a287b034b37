#pragma once
// Little-endian binary encoding shared by the image, dataset and checkpoint
// containers.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace autoddpm {

// Malformed, truncated or incompatible on-disk data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }
  template <class U>
  void scalar(U v) {
    static_assert(std::is_arithmetic_v<U>);
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    bytes(raw, sizeof(U));
  }
  void u32(std::uint32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <class U>
  void array(std::span<const U> v) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(v.data(), v.size_bytes());
    } else {
      for (const U x : v) scalar(x);
    }
  }
  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DataError(origin_ + ": truncated file");
  }
  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0) throw DataError(origin_ + ": bad magic bytes");
    pos_ += m.size();
  }
  template <class U>
  U scalar() {
    need(sizeof(U));
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, data_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, raw, sizeof(U));
    return v;
  }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  std::string string(std::size_t max_len = 4096) {
    const auto n = u32();
    if (n > max_len) throw DataError(origin_ + ": implausible string length");
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  template <class U>
  std::vector<U> array(std::size_t count) {
    if (count > (data_.size() - pos_) / sizeof(U)) throw DataError(origin_ + ": truncated file");
    std::vector<U> v(count);
    for (auto& x : v) x = scalar<U>();
    return v;
  }
  bool at_end() const noexcept { return pos_ == data_.size(); }
  void expect_end() const {
    if (!at_end()) throw DataError(origin_ + ": trailing bytes after payload");
  }
  const std::string& origin() const noexcept { return origin_; }

 private:
  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string origin_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes through a temporary file and renames, so readers never observe a
// partially written file.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace autoddpm
