#ifndef CEA_BINARY_IO_HPP
#define CEA_BINARY_IO_HPP

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "cea/error.hpp"

namespace cea::binary {

// Files are written in host byte order; only little-endian hosts are supported.
static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
  requires std::is_trivially_copyable_v<T>
void write(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
  requires std::is_trivially_copyable_v<T>
T read(std::istream& in, const char* what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    fail(errc::corrupt_file, std::string("truncated while reading ") + what);
  return value;
}

inline void write_doubles(std::ostream& out, const double* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

inline void read_doubles(std::istream& in, double* data, std::size_t count, const char* what) {
  if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double))))
    fail(errc::corrupt_file, std::string("truncated while reading ") + what);
}

inline void write_string(std::ostream& out, const std::string& s) {
  write<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what, std::uint32_t max_len = 1u << 20) {
  const auto len = read<std::uint32_t>(in, what);
  if (len > max_len) fail(errc::corrupt_file, std::string("implausible string length in ") + what);
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len)) fail(errc::corrupt_file, std::string("truncated while reading ") + what);
  return s;
}

inline void expect_magic(std::istream& in, const char (&magic)[9], const std::string& path) {
  char buf[8] = {};
  if (!in.read(buf, 8) || std::string(buf, 8) != std::string(magic, 8))
    fail(errc::corrupt_file, path + ": bad magic header");
}

inline void write_magic(std::ostream& out, const char (&magic)[9]) { out.write(magic, 8); }

}  // namespace cea::binary

#endif  // CEA_BINARY_IO_HPP
