#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dyl {

enum class ErrorKind {
  Format,
  Dimension,
  TooShort,
  TooSmall,
  Io,
  Geometry,
  Parameter,
  Numeric,
  InsufficientData,
  Model,
  Divergence,
  DegeneratePhase,
  UndefinedDistance,
};

const char* to_string(ErrorKind kind);

/// Every failure in the library is reported through this type. The message is
/// prefixed with the owning module ("flow: ...") so the CLI can surface it as is.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string_view module, const std::string& what);
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Dense row-major 2D array. Used for frames (double), masks (uint8) and
/// flow components.
template <typename T>
class Grid2 {
 public:
  Grid2() = default;
  Grid2(int height, int width, T fill = T{})
      : h_(height), w_(width), data_(static_cast<std::size_t>(height) * width, fill) {}

  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool same_shape(const Grid2& o) const noexcept { return h_ == o.h_ && w_ == o.w_; }

  T& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * w_ + x]; }
  const T& operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * w_ + x]; }

  // Replicate-edge access.
  const T& clamped(int y, int x) const {
    y = y < 0 ? 0 : (y >= h_ ? h_ - 1 : y);
    x = x < 0 ? 0 : (x >= w_ ? w_ - 1 : x);
    return (*this)(y, x);
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  bool operator==(const Grid2&) const = default;

 private:
  int h_ = 0;
  int w_ = 0;
  std::vector<T> data_;
};

using Image = Grid2<double>;
using LabelImage = Grid2<std::uint8_t>;

// Seeding: every stage draws from its own stream, derived as
// splitmix64(seed ^ fnv1a64(stage_name)).
std::uint64_t fnv1a64(std::string_view s);
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage);

// File helpers. Writes go to "<path>.tmp" and are renamed into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32le(std::vector<std::uint8_t>& out, float v);
std::uint32_t get_u32le(std::span<const std::uint8_t> in, std::size_t offset);
float get_f32le(std::span<const std::uint8_t> in, std::size_t offset);

/// Shortest round-trippable decimal form; used for every CSV number so output
/// is byte-stable.
std::string format_number(double v);

}  // namespace dyl
