#pragma once

// Little-endian encoding helpers shared by the binary formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>

namespace lmd::detail {

template <typename T> T byteswap_if_big(T value) noexcept {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

template <typename T> void put(std::string &buffer, T value) {
  value = byteswap_if_big(value);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buffer.append(bytes, sizeof(T));
}

template <typename T> T get(const char *bytes) noexcept {
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return byteswap_if_big(value);
}

/// Writes `contents` to `destination` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path &destination,
                       const std::string &contents);

[[nodiscard]] std::string read_file(const std::filesystem::path &source);

} // namespace lmd::detail
