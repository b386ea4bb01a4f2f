#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dyl/descriptor.hpp"

namespace dyl {

/// T x H x W x C feature tensor, row-major with channels fastest.
struct FeatureClip {
  int t = 0, h = 0, w = 0, c = 0;
  int level = 1;
  std::vector<double> data;

  FeatureClip() = default;
  FeatureClip(int frames, int height, int width, int channels, double fill = 0.0)
      : t(frames), h(height), w(width), c(channels),
        data(static_cast<std::size_t>(frames) * height * width * channels, fill) {}

  std::size_t index(int ti, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(ti) * h + y) * w + x) * c + ch;
  }
  double& at(int ti, int y, int x, int ch) { return data[index(ti, y, x, ch)]; }
  double at(int ti, int y, int x, int ch) const { return data[index(ti, y, x, ch)]; }
  bool same_shape(const FeatureClip& o) const { return t == o.t && h == o.h && w == o.w && c == o.c; }
};

struct PhaseTrack {
  std::vector<double> phi;
};

/// y = weight * x + bias, weight is out x in.
struct Dense {
  Matrix weight;
  Vector bias;

  int in() const { return static_cast<int>(weight.cols()); }
  int out() const { return static_cast<int>(weight.rows()); }
  Vector apply(const Vector& x) const { return weight * x + bias; }
};

/// Linear -> max(0, x) -> Linear.
struct Mlp {
  Dense hidden;
  Dense output;

  Vector apply(const Vector& x) const;
};

/// Projections are d x d and bias-free; heads must divide d.
struct AttentionWeights {
  Matrix q, k, v, out;
  int heads = 1;

  int dim() const { return static_cast<int>(q.rows()); }
};

struct CpdaWeights {
  Mlp phase_mlp;  // 2 -> d_p -> d_p
  Mlp edg_mlp;    // k2 -> d_e -> d_e
  AttentionWeights attention;
  Dense gate;     // d -> C
  std::vector<double> conv_kernel;  // [out][in][kt][ky][kx], C*C*27
  Vector conv_bias;                 // C
  double alpha = 0.5;

  int channels() const { return gate.out(); }
  int phase_dim() const { return phase_mlp.output.out(); }
  int edg_dim() const { return edg_mlp.output.out(); }
  int pedg_dim() const { return edg_mlp.hidden.in(); }
  int token_dim() const { return channels() + phase_dim() + edg_dim(); }

  /// Throws Error(Model) naming the first inconsistent tensor.
  void validate() const;
};

struct CpdaShape {
  int channels = 4;
  int pedg_dim = 8;
  int phase_dim = 4;
  int edg_dim = 4;
  int heads = 2;
  double alpha = 0.5;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor, drawn in a fixed order.
CpdaWeights seed_weights(const CpdaShape& shape, std::uint64_t seed);

/// Zero gate and a centre-tap identity 3D kernel: cpda_forward returns its input.
CpdaWeights identity_weights(const CpdaShape& shape);

/// phi(ed) = 0, phi(es) = 0.5, linear in t with period 2|es - ed|, wrapped into [0, 1).
PhaseTrack phase_track(int frames, int ed_index, int es_index);

/// Per-frame, per-channel spatial mean: T x C.
Matrix pool_spatial(const FeatureClip& clip);

/// Scaled dot-product self-attention over the rows of `tokens` (T x d).
/// When `attention_out` is given it receives one T x T softmax matrix per head.
Matrix mha_forward(const Matrix& tokens, const AttentionWeights& weights,
                   std::vector<Matrix>* attention_out = nullptr);

/// Zero-padded 3x3x3 convolution over (T, H, W), channels mixed by the kernel.
FeatureClip conv3d_same(const FeatureClip& x, std::span<const double> kernel, const Vector& bias);

struct CpdaTrace {
  Matrix pooled;  // T x C
  Matrix fused;   // T x d
  Matrix attended;
  Matrix modulation;  // S, T x C
  FeatureClip modulated;
};

FeatureClip cpda_forward(const FeatureClip& clip, const PhaseTrack& phase, const Matrix& pedg,
                         const CpdaWeights& weights, CpdaTrace* trace = nullptr);

/// Pads a (T-1)-row dynamic feature to T rows by repeating the last row.
Matrix align_pedg(const Matrix& pedg, int frames);

// FTC1 clip file: magic, u32 T, H, W, C, little-endian f32 row-major data.
std::vector<std::uint8_t> encode_clip(const FeatureClip& clip);
FeatureClip decode_clip(std::span<const std::uint8_t> bytes);

nlohmann::json to_json(const CpdaWeights& w);
CpdaWeights cpda_weights_from_json(const nlohmann::json& j);

}  // namespace dyl
