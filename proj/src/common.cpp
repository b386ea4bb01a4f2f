#include "dyl/common.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dyl {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Format: return "format error";
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::TooShort: return "too-short error";
    case ErrorKind::TooSmall: return "too-small error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Geometry: return "geometry error";
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::InsufficientData: return "insufficient-data error";
    case ErrorKind::Model: return "model error";
    case ErrorKind::Divergence: return "divergence error";
    case ErrorKind::DegeneratePhase: return "degenerate-phase error";
    case ErrorKind::UndefinedDistance: return "undefined-distance error";
  }
  return "error";
}

Error::Error(ErrorKind kind, std::string_view module, const std::string& what)
    : std::runtime_error(std::string(module) + ": " + to_string(kind) + ": " + what), kind_(kind) {}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
  return splitmix64(seed ^ fnv1a64(stage));
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "io", "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "io", "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "io", "rename to " + path.string() + " failed: " + ec.message());
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "io", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32le(std::vector<std::uint8_t>& out, float v) {
  put_u32le(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32le(std::span<const std::uint8_t> in, std::size_t offset) {
  if (offset + 4 > in.size()) throw Error(ErrorKind::Format, "io", "truncated binary payload");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  return v;
}

float get_f32le(std::span<const std::uint8_t> in, std::size_t offset) {
  return std::bit_cast<float>(get_u32le(in, offset));
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace dyl
