#include "dyl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dyl {

using nlohmann::json;

namespace {

constexpr const char* kModule = "metrics";
constexpr double kInf = std::numeric_limits<double>::infinity();

// Exact 1D squared-distance transform (lower envelope of parabolas).
void edt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  int first = 0;
  while (first < n && f[first] == kInf) ++first;
  if (first == n) {
    std::fill(d, d + n, kInf);
    return;
  }
  v[0] = first;
  for (int q = first + 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s;
    while (true) {
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared Euclidean distance from every pixel to the nearest seed pixel.
Image squared_distance_map(int h, int w, const std::vector<std::array<int, 2>>& seeds) {
  Image g(h, w, kInf);
  for (const auto& p : seeds) g(p[0], p[1]) = 0.0;
  const int n = std::max(h, w);
  Image out(h, w);
#pragma omp parallel
  {
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
#pragma omp for schedule(static)
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) f[y] = g(y, x);
      edt_1d(f.data(), d.data(), h, v, z);
      for (int y = 0; y < h; ++y) g(y, x) = d[y];
    }
#pragma omp for schedule(static)
    for (int y = 0; y < h; ++y) {
      edt_1d(&g(y, 0), d.data(), w, v, z);
      for (int x = 0; x < w; ++x) out(y, x) = d[x];
    }
  }
  return out;
}

std::size_t count_nonzero(const BinaryMask& m) {
  return static_cast<std::size_t>(std::count_if(m.values().begin(), m.values().end(), [](auto v) { return v != 0; }));
}

}  // namespace

double dice(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::Dimension, kModule, "dice masks differ in size");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a.data()[i] != 0, pb = b.data()[i] != 0;
    na += pa;
    nb += pb;
    both += pa && pb;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<std::array<int, 2>> boundary_pixels(const BinaryMask& m) {
  std::vector<std::array<int, 2>> out;
  const int h = m.height(), w = m.width();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!m(y, x)) continue;
      bool edge = false;
      for (int dy = -1; dy <= 1 && !edge; ++dy)
        for (int dx = -1; dx <= 1 && !edge; ++dx) {
          const int yy = y + dy, xx = x + dx;
          edge = yy < 0 || yy >= h || xx < 0 || xx >= w || !m(yy, xx);
        }
      if (edge) out.push_back({y, x});
    }
  return out;
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::InsufficientData, kModule, "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::Dimension, kModule, "hd95 masks differ in size");
  const auto ba = boundary_pixels(a), bb = boundary_pixels(b);
  if (ba.empty() || bb.empty()) throw Error(ErrorKind::UndefinedDistance, kModule, "hd95 is undefined for an empty mask");
  const Image da = squared_distance_map(a.height(), a.width(), ba);
  const Image db = squared_distance_map(b.height(), b.width(), bb);
  std::vector<double> d;
  d.reserve(ba.size() + bb.size());
  for (const auto& p : ba) d.push_back(std::sqrt(db(p[0], p[1])));
  for (const auto& q : bb) d.push_back(std::sqrt(da(q[0], q[1])));
  return percentile_linear(std::move(d), 0.95);
}

double tcd(const std::vector<double>& series) {
  if (series.size() < 2) throw Error(ErrorKind::InsufficientData, kModule, "TCD needs at least 2 frames");
  double acc = 0.0;
  for (std::size_t t = 1; t < series.size(); ++t) acc += std::abs(series[t] - series[t - 1]);
  return acc / static_cast<double>(series.size() - 1);
}

BinaryMask binarize(const LabelImage& labels, Label label) {
  BinaryMask out(labels.height(), labels.width());
  const auto want = static_cast<std::uint8_t>(label);
  for (std::size_t i = 0; i < labels.size(); ++i) out.data()[i] = labels.data()[i] == want;
  return out;
}

const char* label_name(Label l) {
  switch (l) {
    case Label::LV: return "LV";
    case Label::LVM: return "LVM";
    case Label::LA: return "LA";
    case Label::Background: return "background";
  }
  return "?";
}

double MetricsReport::mean_dice() const {
  double acc = 0.0;
  for (const auto& l : per_label) acc += l.mean_dice;
  return per_label.empty() ? 0.0 : acc / static_cast<double>(per_label.size());
}

std::optional<double> MetricsReport::mean_hd95() const {
  double acc = 0.0;
  int n = 0;
  for (const auto& l : per_label)
    if (l.mean_hd95) {
      acc += *l.mean_hd95;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return acc / n;
}

MetricsReport evaluate(const MaskSequence& pred, const MaskSequence& gt) {
  if (pred.length() != gt.length())
    throw Error(ErrorKind::Dimension, kModule, "prediction has " + std::to_string(pred.length()) +
                                                   " frames, ground truth " + std::to_string(gt.length()));
  const int T = gt.length();
  for (int t = 0; t < T; ++t)
    if (!pred.masks[t].same_shape(gt.masks[t]))
      throw Error(ErrorKind::Dimension, kModule, "frame " + std::to_string(t) + " differs in size");

  MetricsReport report;
  for (Label label : {Label::LV, Label::LVM, Label::LA}) {
    LabelReport lr;
    lr.label = label;
    lr.dice_per_frame.resize(T);
    lr.hd95_per_frame.resize(T);
    std::vector<char> skipped(T, 0);
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < T; ++t) {
      const BinaryMask p = binarize(pred.masks[t], label);
      const BinaryMask g = binarize(gt.masks[t], label);
      lr.dice_per_frame[t] = dice(p, g);
      if (count_nonzero(g) == 0) {
        skipped[t] = 1;
      } else if (count_nonzero(p) > 0) {
        lr.hd95_per_frame[t] = hd95(p, g);
      }
    }
    for (int t = 0; t < T; ++t)
      if (skipped[t]) lr.skipped_frames.push_back(t);

    double acc = 0.0;
    for (double d : lr.dice_per_frame) acc += d;
    lr.mean_dice = T ? acc / T : 0.0;
    double hacc = 0.0;
    int hn = 0;
    for (const auto& h : lr.hd95_per_frame)
      if (h) {
        hacc += *h;
        ++hn;
      }
    if (hn) lr.mean_hd95 = hacc / hn;
    lr.tcd = T >= 2 ? tcd(lr.dice_per_frame) : 0.0;
    report.per_label.push_back(std::move(lr));
  }
  double acc = 0.0;
  for (const auto& l : report.per_label) acc += l.tcd;
  report.average_tcd = acc / static_cast<double>(report.per_label.size());
  return report;
}

json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json labels = json::object();
  for (const auto& l : r.per_label) {
    json h = json::array();
    for (const auto& v : l.hd95_per_frame) h.push_back(opt(v));
    labels[label_name(l.label)] = {{"dice_per_frame", l.dice_per_frame}, {"mean_dice", l.mean_dice},
                                   {"hd95_per_frame", h},                {"mean_hd95", opt(l.mean_hd95)},
                                   {"tcd", l.tcd},                       {"skipped_hd95_frames", l.skipped_frames}};
  }
  return {{"per_label", labels},
          {"mean_dice", r.mean_dice()},
          {"mean_hd95", opt(r.mean_hd95())},
          {"average_tcd", r.average_tcd}};
}

std::string to_csv(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  std::string out = "label,frame,dice,hd95\n";
  for (const auto& l : r.per_label)
    for (std::size_t t = 0; t < l.dice_per_frame.size(); ++t)
      out += std::string(label_name(l.label)) + "," + std::to_string(t) + "," + format_number(l.dice_per_frame[t]) +
             "," + opt(l.hd95_per_frame[t]) + "\n";
  for (const auto& l : r.per_label) {
    out += std::string(label_name(l.label)) + ",mean," + format_number(l.mean_dice) + "," + opt(l.mean_hd95) + "\n";
    out += std::string(label_name(l.label)) + ",tcd," + format_number(l.tcd) + ",\n";
  }
  out += "average,mean," + format_number(r.mean_dice()) + "," + opt(r.mean_hd95()) + "\n";
  out += "average,tcd," + format_number(r.average_tcd) + ",\n";
  return out;
}

}  // namespace dyl
