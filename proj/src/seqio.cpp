#include "dyl/seqio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include <json.hpp>

namespace dyl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModule = "seqio";
constexpr double kLvAspect = 1.2;  // vertical / horizontal semi-axis ratio
constexpr double kInteriorGray = 0.2;
constexpr double kWallGray = 0.8;
constexpr double kBackgroundGray = 0.45;
constexpr int kSubsamples = 4;

double bilinear(const Image& img, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * img.clamped(y0, x0) + fx * img.clamped(y0, x0 + 1)) +
         fy * ((1 - fx) * img.clamped(y0 + 1, x0) + fx * img.clamped(y0 + 1, x0 + 1));
}

double gray_of(Label l) {
  switch (l) {
    case Label::LV:
    case Label::LA: return kInteriorGray;
    case Label::LVM: return kWallGray;
    case Label::Background: break;
  }
  return kBackgroundGray;
}

std::string indexed_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d.pgm", prefix, i);
  return buf;
}

// Skips whitespace and '#' comments inside a PNM header.
void skip_pnm_space(std::span<const std::uint8_t> b, std::size_t& pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
}

int read_pnm_int(std::span<const std::uint8_t> b, std::size_t& pos) {
  skip_pnm_space(b, pos);
  if (pos >= b.size() || !std::isdigit(b[pos])) throw Error(ErrorKind::Format, kModule, "malformed PGM header");
  long v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    if (v > (1L << 30)) throw Error(ErrorKind::Format, kModule, "PGM header value too large");
    ++pos;
  }
  return static_cast<int>(v);
}

struct SequenceHeader {
  int t, h, w, ed, es;
};

void check_header(const SequenceHeader& hd) {
  if (hd.t < 2) throw Error(ErrorKind::TooShort, kModule, "sequence needs at least 2 frames, got " + std::to_string(hd.t));
  if (hd.h <= 0 || hd.w <= 0) throw Error(ErrorKind::Dimension, kModule, "non-positive frame size");
}

FrameSequence load_eds(const fs::path& path) {
  auto bytes = read_file(path);
  if (bytes.size() < 24 || std::string(bytes.begin(), bytes.begin() + 4) != "EDS1")
    throw Error(ErrorKind::Format, kModule, "missing EDS1 header in " + path.string());
  SequenceHeader hd{};
  hd.t = static_cast<int>(get_u32le(bytes, 4));
  hd.h = static_cast<int>(get_u32le(bytes, 8));
  hd.w = static_cast<int>(get_u32le(bytes, 12));
  hd.ed = static_cast<int>(get_u32le(bytes, 16));
  hd.es = static_cast<int>(get_u32le(bytes, 20));
  check_header(hd);
  const std::size_t plane = static_cast<std::size_t>(hd.h) * hd.w;
  if (bytes.size() != 24 + plane * hd.t)
    throw Error(ErrorKind::Dimension, kModule, "EDS payload size does not match T*H*W");
  FrameSequence seq;
  seq.ed_index = hd.ed;
  seq.es_index = hd.es;
  for (int t = 0; t < hd.t; ++t) {
    Image img(hd.h, hd.w);
    const std::uint8_t* src = bytes.data() + 24 + plane * t;
    for (std::size_t i = 0; i < plane; ++i) img.data()[i] = src[i] / 255.0;
    seq.frames.push_back(std::move(img));
  }
  seq.validate();
  return seq;
}

void save_eds(const FrameSequence& seq, const fs::path& path) {
  std::vector<std::uint8_t> out = {'E', 'D', 'S', '1'};
  put_u32le(out, static_cast<std::uint32_t>(seq.length()));
  put_u32le(out, static_cast<std::uint32_t>(seq.height()));
  put_u32le(out, static_cast<std::uint32_t>(seq.width()));
  put_u32le(out, static_cast<std::uint32_t>(seq.ed_index));
  put_u32le(out, static_cast<std::uint32_t>(seq.es_index));
  for (const auto& f : seq.frames)
    for (double v : f.values()) out.push_back(quantize(v));
  write_file_atomic(path, out);
}

}  // namespace

void FrameSequence::validate() const {
  if (frames.size() < 2) throw Error(ErrorKind::TooShort, kModule, "sequence needs at least 2 frames");
  for (const auto& f : frames) {
    if (!f.same_shape(frames.front())) throw Error(ErrorKind::Dimension, kModule, "frames differ in size");
    for (double v : f.values())
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::Format, kModule, "pixel value outside [0,1]");
  }
  const int t = length();
  if (ed_index < 0 || ed_index >= t || es_index < 0 || es_index >= t)
    throw Error(ErrorKind::Format, kModule, "ed/es index out of range");
  if (ed_index == es_index) throw Error(ErrorKind::Format, kModule, "ed and es indices coincide");
}

void MaskSequence::validate() const {
  for (const auto& m : masks) {
    if (!m.same_shape(masks.front())) throw Error(ErrorKind::Dimension, kModule, "masks differ in size");
    for (auto v : m.values())
      if (v > 3) throw Error(ErrorKind::Format, kModule, "mask label outside {0,1,2,3}");
  }
}

void PhantomSpec::validate() const {
  if (t_count < 3) throw Error(ErrorKind::Parameter, kModule, "phantom t_count must be >= 3");
  if (cycles < 1) throw Error(ErrorKind::Parameter, kModule, "phantom cycles must be >= 1");
  if (height < 3 || width < 3) throw Error(ErrorKind::Parameter, kModule, "phantom image too small");
  if (!(contraction_fraction >= 0.0 && contraction_fraction < 0.9))
    throw Error(ErrorKind::Parameter, kModule, "contraction_fraction must lie in [0, 0.9)");
  if (!(speckle_sigma >= 0.0)) throw Error(ErrorKind::Parameter, kModule, "speckle_sigma must be >= 0");
  if (!(base_radius > 0.0)) throw Error(ErrorKind::Parameter, kModule, "base_radius must be > 0");
}

double phantom_radius(const PhantomSpec& spec, int t) {
  const double phase = 2.0 * std::numbers::pi * t / spec.t_count;
  return spec.base_radius * (1.0 - spec.contraction_fraction * (1.0 - std::cos(phase)) / 2.0);
}

std::uint8_t quantize(double v) {
  const double q = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  return static_cast<std::uint8_t>(q);
}

std::vector<std::uint8_t> encode_pgm(const Grid2<std::uint8_t>& img) {
  std::string header = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.values().begin(), img.values().end());
  return out;
}

Grid2<std::uint8_t> decode_pgm(std::span<const std::uint8_t> b, int* maxval_out) {
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw Error(ErrorKind::Format, kModule, "not a binary PGM (P5)");
  std::size_t pos = 2;
  const int w = read_pnm_int(b, pos);
  const int h = read_pnm_int(b, pos);
  const int maxval = read_pnm_int(b, pos);
  if (w <= 0 || h <= 0) throw Error(ErrorKind::Format, kModule, "PGM has zero size");
  if (maxval <= 0 || maxval > 255) throw Error(ErrorKind::Format, kModule, "only 8-bit PGM supported");
  if (pos >= b.size() || !std::isspace(b[pos])) throw Error(ErrorKind::Format, kModule, "malformed PGM header");
  ++pos;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (b.size() - pos < n) throw Error(ErrorKind::Format, kModule, "truncated PGM payload");
  Grid2<std::uint8_t> img(h, w);
  std::copy_n(b.begin() + static_cast<std::ptrdiff_t>(pos), n, img.data());
  if (maxval_out) *maxval_out = maxval;
  return img;
}

FrameSequence load_sequence(const fs::path& path) {
  if (fs::is_regular_file(path) && path.extension() == ".eds") return load_eds(path);
  if (!fs::is_directory(path)) throw Error(ErrorKind::Io, kModule, "no such sequence: " + path.string());
  const fs::path meta_path = path / "meta.json";
  if (!fs::exists(meta_path)) throw Error(ErrorKind::Format, kModule, "missing meta.json in " + path.string());

  json meta;
  try {
    meta = json::parse(read_text(meta_path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, kModule, std::string("meta.json: ") + e.what());
  }
  SequenceHeader hd{};
  try {
    hd = {meta.at("t").get<int>(), meta.at("h").get<int>(), meta.at("w").get<int>(), meta.at("ed").get<int>(),
          meta.at("es").get<int>()};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, kModule, std::string("meta.json: ") + e.what());
  }
  check_header(hd);

  FrameSequence seq;
  seq.ed_index = hd.ed;
  seq.es_index = hd.es;
  if (meta.contains("meta") && meta["meta"].is_object())
    for (auto& [k, v] : meta["meta"].items()) seq.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();

  for (int t = 0; t < hd.t; ++t) {
    const fs::path fp = path / indexed_name("frame", t);
    int maxval = 0;
    auto raw = decode_pgm(read_file(fp), &maxval);
    if (maxval != 255) throw Error(ErrorKind::Format, kModule, fp.filename().string() + ": frame maxval must be 255");
    if (raw.height() != hd.h || raw.width() != hd.w)
      throw Error(ErrorKind::Dimension, kModule, fp.filename().string() + " does not match meta.json size");
    Image img(hd.h, hd.w);
    for (std::size_t i = 0; i < raw.size(); ++i) img.data()[i] = raw.data()[i] / 255.0;
    seq.frames.push_back(std::move(img));
  }
  seq.validate();
  return seq;
}

void save_sequence(const FrameSequence& seq, const fs::path& path) {
  seq.validate();
  if (path.extension() == ".eds") {
    save_eds(seq, path);
    return;
  }
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw Error(ErrorKind::Io, kModule, "cannot create " + path.string() + ": " + ec.message());

  json meta = {{"t", seq.length()}, {"h", seq.height()}, {"w", seq.width()}, {"ed", seq.ed_index}, {"es", seq.es_index}};
  if (!seq.meta.empty()) meta["meta"] = seq.meta;
  write_text_atomic(path / "meta.json", meta.dump(2) + "\n");

  for (int t = 0; t < seq.length(); ++t) {
    const auto& f = seq.frames[t];
    Grid2<std::uint8_t> q(f.height(), f.width());
    for (std::size_t i = 0; i < f.size(); ++i) q.data()[i] = quantize(f.data()[i]);
    write_file_atomic(path / indexed_name("frame", t), encode_pgm(q));
  }
}

MaskSequence load_masks(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, kModule, "no such mask directory: " + dir.string());
  MaskSequence out;
  for (int t = 0;; ++t) {
    const fs::path fp = dir / indexed_name("mask", t);
    if (!fs::exists(fp)) break;
    out.masks.push_back(decode_pgm(read_file(fp)));
  }
  if (out.masks.empty()) throw Error(ErrorKind::Format, kModule, "no mask_0000.pgm in " + dir.string());
  out.validate();
  return out;
}

void save_masks(const MaskSequence& masks, const fs::path& dir) {
  masks.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, kModule, "cannot create " + dir.string() + ": " + ec.message());
  for (int t = 0; t < masks.length(); ++t) write_file_atomic(dir / indexed_name("mask", t), encode_pgm(masks.masks[t]));
}

std::pair<FrameSequence, MaskSequence> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const double cx = spec.width / 2;
  const double cy = spec.height / 2;
  const double wall = std::max(2.0, spec.base_radius / 5.0);
  const double la_radius = 0.5 * spec.base_radius;
  const double la_cy = cy + kLvAspect * spec.base_radius + wall + la_radius + 1.0;

  const double outer_x = spec.base_radius + wall;
  const double outer_y = kLvAspect * spec.base_radius + wall;
  if (cx - outer_x < 0 || cx + outer_x > spec.width - 1 || cy - outer_y < 0 || la_cy + la_radius > spec.height - 1)
    throw Error(ErrorKind::Geometry, kModule, "phantom geometry exceeds the image bounds");

  const int total = spec.t_count * spec.cycles;
  // Speckle is a fixed interference pattern: drawn once, shared by every frame.
  std::mt19937_64 rng(derive_seed(spec.seed, "phantom.speckle"));
  std::normal_distribution<double> normal(0.0, 1.0);
  Image speckle(spec.height, spec.width, 0.0);
  for (double& v : speckle.values()) v = spec.speckle_sigma * normal(rng);

  FrameSequence seq;
  MaskSequence masks;
  for (int t = 0; t < total; ++t) {
    const double a = phantom_radius(spec, t);
    const double b = kLvAspect * a;
    const double oa = a + wall, ob = b + wall;
    auto classify = [&](double px, double py) {
      const double dx = px - cx, dy = py - cy, ldy = py - la_cy;
      if ((dx * dx) / (a * a) + (dy * dy) / (b * b) <= 1.0) return Label::LV;
      if ((dx * dx) / (oa * oa) + (dy * dy) / (ob * ob) <= 1.0) return Label::LVM;
      if (dx * dx + ldy * ldy <= la_radius * la_radius) return Label::LA;
      return Label::Background;
    };
    Image img(spec.height, spec.width);
    LabelImage lab(spec.height, spec.width, 0);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        lab(y, x) = static_cast<std::uint8_t>(classify(x, y));
        // Gray is the area average over a kSubsamples^2 grid so edges move smoothly.
        double acc = 0.0;
        for (int sy = 0; sy < kSubsamples; ++sy)
          for (int sx = 0; sx < kSubsamples; ++sx) {
            const double px = x + (sx + 0.5) / kSubsamples - 0.5;
            const double py = y + (sy + 0.5) / kSubsamples - 0.5;
            acc += gray_of(classify(px, py));
          }
        img(y, x) = acc / (kSubsamples * kSubsamples);
      }
    }
    // Speckle inside the ventricle is carried with the tissue: sample the
    // reference pattern at the position scaled back to the rest radius.
    const double back = spec.base_radius / a;
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        double n = speckle(y, x);
        const Label l = static_cast<Label>(lab(y, x));
        if (l == Label::LV || l == Label::LVM) n = bilinear(speckle, cx + (x - cx) * back, cy + (y - cy) * back);
        img(y, x) = std::clamp(img(y, x) + n, 0.0, 1.0);
      }
    seq.frames.push_back(std::move(img));
    masks.masks.push_back(std::move(lab));
  }

  // First-occurrence extremes over the first cycle; ties within rounding count as equal.
  const double tol = 1e-12 * spec.base_radius;
  int ed = 0, es = 0;
  for (int t = 1; t < spec.t_count; ++t) {
    const double r = phantom_radius(spec, t);
    if (r > phantom_radius(spec, ed) + tol) ed = t;
    if (r < phantom_radius(spec, es) - tol) es = t;
  }
  if (ed == es) es = spec.t_count / 2;  // static heart: no extremes, keep indices distinct
  seq.ed_index = ed;
  seq.es_index = es;
  seq.meta["source"] = "phantom";
  seq.meta["seed"] = std::to_string(spec.seed);
  return {std::move(seq), std::move(masks)};
}

}  // namespace dyl
