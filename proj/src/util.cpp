#include "tdn/util.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>

namespace tdn {

std::string to_hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void get_bytes(const std::string& buf, std::size_t& pos, void* dst, std::size_t n, const char* what) {
  if (pos + n > buf.size()) {
    fail("truncated file: needed ", n, " byte(s) for ", what, " at byte offset ", pos,
         ", file has ", buf.size());
  }
  std::memcpy(dst, buf.data() + pos, n);
  pos += n;
}

std::uint8_t get_u8(const std::string& buf, std::size_t& pos, const char* what) {
  std::uint8_t v;
  get_bytes(buf, pos, &v, 1, what);
  return v;
}

std::uint16_t get_u16(const std::string& buf, std::size_t& pos, const char* what) {
  unsigned char b[2];
  get_bytes(buf, pos, b, 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(const std::string& buf, std::size_t& pos, const char* what) {
  unsigned char b[4];
  get_bytes(buf, pos, b, 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(const std::string& buf, std::size_t& pos, const char* what) {
  std::uint32_t bits = get_u32(buf, pos, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

double get_f64(const std::string& buf, std::size_t& pos, const char* what) {
  unsigned char b[8];
  get_bytes(buf, pos, b, 8, what);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open file: ", path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot write file: ", path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("short write to file: ", path);
}

std::string format_double(double v, int decimals) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

}  // namespace tdn
