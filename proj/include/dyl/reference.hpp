#pragma once

// Plain single-threaded versions of the hot kernels. They are not used by the
// pipeline; tests check the OpenMP kernels against them and the benchmark
// target times both.

#include <span>

#include "dyl/cpda.hpp"
#include "dyl/flow.hpp"
#include "dyl/metrics.hpp"

namespace dyl::reference {

FlowField compute_flow(const Image& prev, const Image& next, const FlowParams& params);

FeatureClip conv3d_same(const FeatureClip& x, std::span<const double> kernel, const Vector& bias);

/// All-pairs boundary distances, O(|dA| * |dB|).
double hd95(const BinaryMask& a, const BinaryMask& b);

}  // namespace dyl::reference
