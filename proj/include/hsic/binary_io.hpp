#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "hsic/error.hpp"

namespace hsic::io {

template <typename U>
U byteswap_if_big(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  } else {
    return v;
  }
}

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<char>& bytes);

/// Little-endian byte sink.
class Writer {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  template <typename V>
  void put(V value) {
    static_assert(std::is_arithmetic_v<V>);
    const V le = byteswap_if_big(value);
    const auto* p = reinterpret_cast<const char*>(&le);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }

  template <typename V>
  void put_array(const V* values, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* p = reinterpret_cast<const char*>(values);
      bytes_.insert(bytes_.end(), p, p + n * sizeof(V));
    } else {
      for (std::size_t i = 0; i < n; ++i) put(values[i]);
    }
  }

  const std::vector<char>& bytes() const { return bytes_; }
  void save(const std::filesystem::path& path) const { write_file(path, bytes_); }

 private:
  std::vector<char> bytes_;
};

/// Little-endian byte source over an in-memory file image. Every read that
/// runs past the end throws LoadError(Truncated).
class Reader {
 public:
  Reader(std::vector<char> bytes, std::string label) : bytes_(std::move(bytes)), label_(std::move(label)) {}

  static Reader open(const std::filesystem::path& path) { return Reader(read_file(path), path.string()); }

  void expect_magic(std::string_view m) {
    if (bytes_.size() < m.size() || std::string_view(bytes_.data(), m.size()) != m)
      throw LoadError(LoadFailure::BadMagic, label_ + ": bad magic, expected \"" + std::string(m) + "\"");
    pos_ = m.size();
  }

  template <typename V>
  V get() {
    require(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return byteswap_if_big(v);
  }

  template <typename V>
  void get_array(V* out, std::size_t n) {
    if (n != 0 && remaining() / n < sizeof(V)) truncated(n * sizeof(V));
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out, bytes_.data() + pos_, n * sizeof(V));
      pos_ += n * sizeof(V);
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = get<V>();
    }
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& label() const { return label_; }

  void expect_end() const {
    if (remaining() != 0)
      throw LoadError(LoadFailure::TrailingBytes,
                      label_ + ": " + std::to_string(remaining()) + " unexpected trailing bytes");
  }

 private:
  void require(std::size_t n) const {
    if (remaining() < n) truncated(n);
  }
  [[noreturn]] void truncated(std::size_t wanted) const {
    throw LoadError(LoadFailure::Truncated, label_ + ": truncated payload (needed " + std::to_string(wanted) +
                                                " more bytes, " + std::to_string(remaining()) + " available)");
  }

  std::vector<char> bytes_;
  std::string label_;
  std::size_t pos_ = 0;
};

}  // namespace hsic::io
