#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dyl/common.hpp"

namespace dyl {

enum class Label : std::uint8_t { Background = 0, LV = 1, LVM = 2, LA = 3 };

/// Grayscale frames in [0,1] with end-diastole / end-systole indices.
struct FrameSequence {
  std::vector<Image> frames;
  int ed_index = 0;
  int es_index = 1;
  std::map<std::string, std::string> meta;

  int length() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames.front().height(); }
  int width() const { return frames.empty() ? 0 : frames.front().width(); }

  /// Throws Error if any invariant (T>=2, shared shape, index range, pixel range) fails.
  void validate() const;
};

struct MaskSequence {
  std::vector<LabelImage> masks;

  int length() const { return static_cast<int>(masks.size()); }
  void validate() const;
};

struct PhantomSpec {
  int t_count = 32;
  int height = 128;
  int width = 128;
  int cycles = 1;
  double base_radius = 24.0;
  double contraction_fraction = 0.3;
  double speckle_sigma = 0.02;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Phantom LV radius at frame t: base * (1 - c * (1 - cos(2 pi t / t_count)) / 2).
double phantom_radius(const PhantomSpec& spec, int t);

// 8-bit quantization, round half up.
std::uint8_t quantize(double v);

FrameSequence load_sequence(const std::filesystem::path& path);
void save_sequence(const FrameSequence& seq, const std::filesystem::path& path);

MaskSequence load_masks(const std::filesystem::path& dir);
void save_masks(const MaskSequence& masks, const std::filesystem::path& dir);

std::pair<FrameSequence, MaskSequence> generate_phantom(const PhantomSpec& spec);

// Low-level PGM (P5, maxval <= 255) access; exposed for the heatmap writer and tests.
std::vector<std::uint8_t> encode_pgm(const Grid2<std::uint8_t>& img);
Grid2<std::uint8_t> decode_pgm(std::span<const std::uint8_t> bytes, int* maxval_out = nullptr);

}  // namespace dyl
