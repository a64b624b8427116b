#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "motionseq/error.hpp"

namespace motionseq::binio {

// All on-disk integers and floats are little-endian regardless of host order.

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void get_bytes(std::istream& is, void* p, std::size_t n, const std::string& ctx) {
  const auto pos = is.tellg();
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    std::string at;
    if (pos >= 0) at = " at byte " + std::to_string(static_cast<long long>(pos) + is.gcount());
    throw DataError(ctx + ": truncated file" + at);
  }
}

namespace detail {

constexpr bool host_little_endian() {
  return std::endian::native == std::endian::little;
}

template <class U>
U byteswap(U v) {
  U out;
  auto* src = reinterpret_cast<const unsigned char*>(&v);
  auto* dst = reinterpret_cast<unsigned char*>(&out);
  for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
  return out;
}

template <class U>
U to_le(U v) {
  return host_little_endian() ? v : byteswap(v);
}

template <class U>
U from_le(U v) {
  return host_little_endian() ? v : byteswap(v);
}

}  // namespace detail

template <class U>
void put_le(std::ostream& os, U v) {
  const U le = detail::to_le(v);
  put_bytes(os, &le, sizeof(U));
}

template <class U>
U get_le(std::istream& is, const std::string& ctx) {
  U v;
  get_bytes(is, &v, sizeof(U), ctx);
  return detail::from_le(v);
}

inline void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_le<std::uint32_t>(os, bits);
}

inline float get_f32(std::istream& is, const std::string& ctx) {
  const std::uint32_t bits = get_le<std::uint32_t>(is, ctx);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void put_f32_array(std::ostream& os, const float* p, std::size_t n) {
  if constexpr (detail::host_little_endian()) {
    put_bytes(os, p, n * 4);
  } else {
    for (std::size_t i = 0; i < n; ++i) put_f32(os, p[i]);
  }
}

inline void get_f32_array(std::istream& is, float* p, std::size_t n, const std::string& ctx) {
  if constexpr (detail::host_little_endian()) {
    get_bytes(is, p, n * 4, ctx);
  } else {
    for (std::size_t i = 0; i < n; ++i) p[i] = get_f32(is, ctx);
  }
}

}  // namespace motionseq::binio
