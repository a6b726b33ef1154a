#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdn {

// Validation failure (bad shapes, bad files, bad configs). The CLI maps
// these to exit code 1; anything else is an internal error (exit 2).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void append_all(std::ostringstream&) {}
template <typename T, typename... Rest>
void append_all(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  append_all(os, rest...);
}
}  // namespace detail

template <typename... Parts>
std::string strcat_msg(const Parts&... parts) {
  std::ostringstream os;
  detail::append_all(os, parts...);
  return os.str();
}

template <typename... Parts>
[[noreturn]] void fail(const Parts&... parts) {
  throw Error(strcat_msg(parts...));
}

#define TDN_REQUIRE(cond, ...)        \
  do {                                \
    if (!(cond)) ::tdn::fail(__VA_ARGS__); \
  } while (0)

// 64-bit mix (splitmix64 finalizer); used to derive independent RNG streams
// from (seed, index) pairs.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(seed ^ mix64(a)) ^ mix64(b + 0x51ul));
}

// FNV-1a over a string; used for config hashes.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string to_hex(std::uint64_t v);

// Little-endian byte serialization for the normative file formats.
void put_u8(std::string& out, std::uint8_t v);
void put_u16(std::string& out, std::uint16_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);
void put_f64(std::string& out, double v);

// Readers take (buffer, cursor); they throw Error naming the byte offset on
// truncation.
std::uint8_t get_u8(const std::string& buf, std::size_t& pos, const char* what);
std::uint16_t get_u16(const std::string& buf, std::size_t& pos, const char* what);
std::uint32_t get_u32(const std::string& buf, std::size_t& pos, const char* what);
float get_f32(const std::string& buf, std::size_t& pos, const char* what);
double get_f64(const std::string& buf, std::size_t& pos, const char* what);
void get_bytes(const std::string& buf, std::size_t& pos, void* dst, std::size_t n, const char* what);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

std::string format_double(double v, int decimals);

}  // namespace tdn
