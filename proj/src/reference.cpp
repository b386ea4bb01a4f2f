#include "dyl/reference.hpp"

#include <cmath>
#include <limits>

namespace dyl::reference {

namespace {

double blur_at(const Image& img, const std::vector<double>& kernel, int y, int x, bool vertical) {
  const int radius = static_cast<int>(kernel.size() / 2);
  double acc = 0.0;
  for (int i = -radius; i <= radius; ++i)
    acc += kernel[i + radius] * (vertical ? img.clamped(y + i, x) : img.clamped(y, x + i));
  return acc;
}

Image blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& k : kernel) k /= sum;
  Image tmp(img.height(), img.width()), out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) tmp(y, x) = blur_at(img, kernel, y, x, false);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out(y, x) = blur_at(tmp, kernel, y, x, true);
  return out;
}

double neighbour_mean(const Image& f, int y, int x) {
  return 0.25 * (f.clamped(y, x - 1) + f.clamped(y, x + 1) + f.clamped(y - 1, x) + f.clamped(y + 1, x));
}

}  // namespace

FlowField compute_flow(const Image& prev, const Image& next, const FlowParams& params) {
  params.validate();
  const int h = prev.height(), w = prev.width();
  const Image p = blur(prev, params.presmooth_sigma);
  const Image n = blur(next, params.presmooth_sigma);
  Image avg(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) avg(y, x) = 0.5 * (p(y, x) + n(y, x));

  FlowField f{Image(h, w), Image(h, w)};
  const double a2 = params.alpha * params.alpha;
  for (int iter = 0; iter < params.iterations; ++iter) {
    FlowField next_f{Image(h, w), Image(h, w)};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double gx = 255.0 * 0.5 * (avg.clamped(y, x + 1) - avg.clamped(y, x - 1));
        const double gy = 255.0 * 0.5 * (avg.clamped(y + 1, x) - avg.clamped(y - 1, x));
        const double gt = 255.0 * (n(y, x) - p(y, x));
        const double ub = neighbour_mean(f.u, y, x), vb = neighbour_mean(f.v, y, x);
        const double r = (gx * ub + gy * vb + gt) / (a2 + gx * gx + gy * gy);
        next_f.u(y, x) = ub - gx * r;
        next_f.v(y, x) = vb - gy * r;
      }
    f = std::move(next_f);
  }
  return f;
}

FeatureClip conv3d_same(const FeatureClip& x, std::span<const double> kernel, const Vector& bias) {
  const int C = x.c;
  FeatureClip out(x.t, x.h, x.w, C);
  out.level = x.level;
  for (int t = 0; t < x.t; ++t)
    for (int y = 0; y < x.h; ++y)
      for (int xx = 0; xx < x.w; ++xx)
        for (int o = 0; o < C; ++o) {
          double acc = bias[o];
          for (int kt = 0; kt < 3; ++kt)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int ts = t + kt - 1, ys = y + ky - 1, xs = xx + kx - 1;
                if (ts < 0 || ts >= x.t || ys < 0 || ys >= x.h || xs < 0 || xs >= x.w) continue;
                for (int i = 0; i < C; ++i) acc += kernel[(o * C + i) * 27 + kt * 9 + ky * 3 + kx] * x.at(ts, ys, xs, i);
              }
          out.at(t, y, xx, o) = acc;
        }
  return out;
}

double hd95(const BinaryMask& a, const BinaryMask& b) {
  const auto ba = boundary_pixels(a), bb = boundary_pixels(b);
  if (ba.empty() || bb.empty()) throw Error(ErrorKind::UndefinedDistance, "metrics", "hd95 is undefined for an empty mask");
  auto nearest = [](const std::array<int, 2>& p, const std::vector<std::array<int, 2>>& set) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : set) best = std::min(best, std::hypot(double(p[0] - q[0]), double(p[1] - q[1])));
    return best;
  };
  std::vector<double> d;
  for (const auto& p : ba) d.push_back(nearest(p, bb));
  for (const auto& q : bb) d.push_back(nearest(q, ba));
  return percentile_linear(std::move(d), 0.95);
}

}  // namespace dyl::reference
