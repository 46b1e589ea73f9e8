#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "pcdim/common.hpp"

// Little-endian scalar serialization for store blocks and model files.
namespace pcdim::binio {

template <typename T>
  requires std::is_arithmetic_v<T>
void write(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
  U bits = std::bit_cast<U>(value);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>(bits & 0xFFU);
    bits = static_cast<U>(bits >> 8);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T read(std::istream& in) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                  std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("unexpected end of binary data");
  U bits = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) bits = static_cast<U>((bits << 8) | bytes[i]);
  return std::bit_cast<T>(bits);
}

inline void write_string(std::ostream& out, const std::string& s) {
  write<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read<std::uint32_t>(in);
  if (n > (1U << 20)) throw DataError("string length out of range in binary data");
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), n)) throw DataError("unexpected end of binary data");
  return s;
}

}  // namespace pcdim::binio
