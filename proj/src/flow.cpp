#include "dyl/flow.hpp"

#include <cmath>

namespace dyl {

namespace {

constexpr const char* kModule = "flow";
constexpr double kIntensityScale = 255.0;

void check_pair(const Image& prev, const Image& next) {
  if (!prev.same_shape(next)) throw Error(ErrorKind::Dimension, kModule, "frame pair differs in size");
  if (prev.height() < 3 || prev.width() < 3) throw Error(ErrorKind::TooSmall, kModule, "frames must be at least 3x3");
}

}  // namespace

void FlowParams::validate() const {
  if (!(alpha > 0.0)) throw Error(ErrorKind::Parameter, kModule, "alpha must be > 0");
  if (iterations < 1) throw Error(ErrorKind::Parameter, kModule, "iterations must be >= 1");
  if (!(presmooth_sigma >= 0.0)) throw Error(ErrorKind::Parameter, kModule, "presmooth_sigma must be >= 0");
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& k : kernel) k /= sum;

  const int h = img.height(), w = img.width();
  Image tmp(h, w), out(h, w);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * img.clamped(y, x + i);
      tmp(y, x) = acc;
    }
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp.clamped(y + i, x);
      out(y, x) = acc;
    }
  return out;
}

FlowField compute_flow(const Image& prev, const Image& next, const FlowParams& params) {
  check_pair(prev, next);
  params.validate();
  const int h = prev.height(), w = prev.width();
  const Image p = gaussian_blur(prev, params.presmooth_sigma);
  const Image n = gaussian_blur(next, params.presmooth_sigma);

  Image ix(h, w), iy(h, w), it(h, w), denom(h, w);
  const double a2 = params.alpha * params.alpha;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto avg = [&](int yy, int xx) { return 0.5 * (p.clamped(yy, xx) + n.clamped(yy, xx)); };
      const double gx = kIntensityScale * 0.5 * (avg(y, x + 1) - avg(y, x - 1));
      const double gy = kIntensityScale * 0.5 * (avg(y + 1, x) - avg(y - 1, x));
      ix(y, x) = gx;
      iy(y, x) = gy;
      it(y, x) = kIntensityScale * (n(y, x) - p(y, x));
      denom(y, x) = a2 + gx * gx + gy * gy;
    }

  FlowField cur{Image(h, w), Image(h, w)};
  FlowField nxt{Image(h, w), Image(h, w)};
  for (int iter = 0; iter < params.iterations; ++iter) {
#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double ub = 0.25 * (cur.u.clamped(y, x - 1) + cur.u.clamped(y, x + 1) + cur.u.clamped(y - 1, x) +
                                  cur.u.clamped(y + 1, x));
        const double vb = 0.25 * (cur.v.clamped(y, x - 1) + cur.v.clamped(y, x + 1) + cur.v.clamped(y - 1, x) +
                                  cur.v.clamped(y + 1, x));
        const double gx = ix(y, x), gy = iy(y, x);
        const double r = (gx * ub + gy * vb + it(y, x)) / denom(y, x);
        nxt.u(y, x) = ub - gx * r;
        nxt.v(y, x) = vb - gy * r;
      }
    std::swap(cur, nxt);
  }
  return cur;
}

std::vector<FlowField> flow_sequence(const FrameSequence& seq, const FlowParams& params) {
  if (seq.length() < 2) throw Error(ErrorKind::TooShort, kModule, "sequence needs at least 2 frames");
  params.validate();
  std::vector<FlowField> out(seq.length() - 1);
  for (int t = 0; t + 1 < seq.length(); ++t) out[t] = compute_flow(seq.frames[t], seq.frames[t + 1], params);
  return out;
}

double mean_flow_magnitude(const FlowField& f) {
  double acc = 0.0;
  for (std::size_t i = 0; i < f.u.size(); ++i) acc += std::hypot(f.u.data()[i], f.v.data()[i]);
  return f.u.size() ? acc / static_cast<double>(f.u.size()) : 0.0;
}

std::vector<std::uint8_t> encode_flow(const FlowField& f) {
  std::vector<std::uint8_t> out = {'F', 'L', 'W', '1'};
  put_u32le(out, static_cast<std::uint32_t>(f.height()));
  put_u32le(out, static_cast<std::uint32_t>(f.width()));
  for (double v : f.u.values()) put_f32le(out, static_cast<float>(v));
  for (double v : f.v.values()) put_f32le(out, static_cast<float>(v));
  return out;
}

FlowField decode_flow(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::string(bytes.begin(), bytes.begin() + 4) != "FLW1")
    throw Error(ErrorKind::Format, kModule, "missing FLW1 header");
  const int h = static_cast<int>(get_u32le(bytes, 4));
  const int w = static_cast<int>(get_u32le(bytes, 8));
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (bytes.size() != 12 + 8 * n) throw Error(ErrorKind::Format, kModule, "FLW1 payload size mismatch");
  FlowField f{Image(h, w), Image(h, w)};
  for (std::size_t i = 0; i < n; ++i) {
    f.u.data()[i] = get_f32le(bytes, 12 + 4 * i);
    f.v.data()[i] = get_f32le(bytes, 12 + 4 * (n + i));
  }
  return f;
}

}  // namespace dyl
