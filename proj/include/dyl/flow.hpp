#pragma once

#include <filesystem>
#include <vector>

#include "dyl/common.hpp"
#include "dyl/seqio.hpp"

namespace dyl {

/// Dense displacement field from one frame to the next, in pixels per frame.
struct FlowField {
  Image u;  // horizontal (+x to the right)
  Image v;  // vertical (+y downward)

  int height() const { return u.height(); }
  int width() const { return u.width(); }
};

struct FlowParams {
  double alpha = 15.0;  // smoothness weight, in 8-bit intensity units
  int iterations = 100;
  double presmooth_sigma = 1.0;

  void validate() const;
};

/// Horn-Schunck flow from `prev` to `next`, Jacobi-iterated from zero.
/// Rows of each sweep are split across OpenMP threads; results do not depend
/// on the thread count.
FlowField compute_flow(const Image& prev, const Image& next, const FlowParams& params);

/// One flow per adjacent pair, in frame order.
std::vector<FlowField> flow_sequence(const FrameSequence& seq, const FlowParams& params);

/// Gaussian blur with replicate borders; sigma == 0 returns the input.
Image gaussian_blur(const Image& img, double sigma);

double mean_flow_magnitude(const FlowField& f);

// FLW1 dump: magic, u32 H, W, then H*W f32 u followed by H*W f32 v (little-endian).
std::vector<std::uint8_t> encode_flow(const FlowField& f);
FlowField decode_flow(std::span<const std::uint8_t> bytes);

}  // namespace dyl
