#include "dyl/cpda.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace dyl {

using nlohmann::json;

namespace {

constexpr const char* kModule = "cpda";
constexpr int kTaps = 27;

void expect(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::Model, kModule, what);
}

std::string dims(Eigen::Index r, Eigen::Index c) { return std::to_string(r) + "x" + std::to_string(c); }

Matrix uniform_matrix(std::mt19937_64& rng, int rows, int cols, int fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

Dense uniform_dense(std::mt19937_64& rng, int in, int out) {
  return {uniform_matrix(rng, out, in, in), uniform_matrix(rng, out, 1, in).col(0)};
}

json tensor(const Matrix& m) {
  return {{"dims", {m.rows(), m.cols()}}, {"data", std::vector<double>(m.reshaped<Eigen::RowMajor>().begin(),
                                                                          m.reshaped<Eigen::RowMajor>().end())}};
}

json tensor(const Vector& v) { return {{"dims", {v.size()}}, {"data", std::vector<double>(v.begin(), v.end())}}; }

Matrix read_matrix(const json& tensors, const std::string& name) {
  const auto& t = tensors.at(name);
  const auto d = t.at("dims").get<std::vector<long>>();
  const auto data = t.at("data").get<std::vector<double>>();
  expect(d.size() == 2 && static_cast<long>(data.size()) == d[0] * d[1], name + ": dims do not match data length");
  Matrix m(d[0], d[1]);
  for (long r = 0; r < d[0]; ++r)
    for (long c = 0; c < d[1]; ++c) m(r, c) = data[r * d[1] + c];
  return m;
}

Vector read_vector(const json& tensors, const std::string& name) {
  const auto& t = tensors.at(name);
  const auto d = t.at("dims").get<std::vector<long>>();
  auto data = t.at("data").get<std::vector<double>>();
  expect(d.size() == 1 && static_cast<long>(data.size()) == d[0], name + ": dims do not match data length");
  return Eigen::Map<Vector>(data.data(), d[0]);
}

void check_dense(const Dense& d, const std::string& name) {
  expect(d.bias.size() == d.out(), name + " bias has " + std::to_string(d.bias.size()) + " entries, expected " +
                                       std::to_string(d.out()));
  expect(d.weight.allFinite() && d.bias.allFinite(), name + " contains non-finite values");
}

}  // namespace

Vector Mlp::apply(const Vector& x) const { return output.apply(hidden.apply(x).cwiseMax(0.0)); }

void CpdaWeights::validate() const {
  check_dense(phase_mlp.hidden, "phase_mlp.hidden");
  check_dense(phase_mlp.output, "phase_mlp.output");
  check_dense(edg_mlp.hidden, "edg_mlp.hidden");
  check_dense(edg_mlp.output, "edg_mlp.output");
  check_dense(gate, "gate");
  expect(phase_mlp.hidden.in() == 2, "phase_mlp.hidden takes " + std::to_string(phase_mlp.hidden.in()) +
                                          " inputs, expected 2 (sin, cos)");
  expect(phase_mlp.output.in() == phase_mlp.hidden.out(), "phase_mlp layers do not chain");
  expect(edg_mlp.output.in() == edg_mlp.hidden.out(), "edg_mlp layers do not chain");
  const int d = token_dim();
  for (const auto* m : {&attention.q, &attention.k, &attention.v, &attention.out})
    expect(m->rows() == d && m->cols() == d && m->allFinite(),
           "attention projection is " + dims(m->rows(), m->cols()) + ", expected " + dims(d, d));
  expect(attention.heads >= 1 && d % attention.heads == 0,
         "heads=" + std::to_string(attention.heads) + " does not divide token dim " + std::to_string(d));
  expect(gate.in() == d, "gate takes " + std::to_string(gate.in()) + " inputs, expected token dim " + std::to_string(d));
  const int c = channels();
  expect(static_cast<int>(conv_kernel.size()) == c * c * kTaps, "conv3d kernel has " +
                                                                   std::to_string(conv_kernel.size()) + " taps, expected " +
                                                                   std::to_string(c * c * kTaps));
  expect(conv_bias.size() == c, "conv3d bias length differs from channel count " + std::to_string(c));
  expect(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
}

CpdaWeights seed_weights(const CpdaShape& s, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "cpda.weights"));
  const int d = s.channels + s.phase_dim + s.edg_dim;
  CpdaWeights w;
  w.phase_mlp = {uniform_dense(rng, 2, s.phase_dim), uniform_dense(rng, s.phase_dim, s.phase_dim)};
  w.edg_mlp = {uniform_dense(rng, s.pedg_dim, s.edg_dim), uniform_dense(rng, s.edg_dim, s.edg_dim)};
  w.attention.q = uniform_matrix(rng, d, d, d);
  w.attention.k = uniform_matrix(rng, d, d, d);
  w.attention.v = uniform_matrix(rng, d, d, d);
  w.attention.out = uniform_matrix(rng, d, d, d);
  w.attention.heads = s.heads;
  w.gate = uniform_dense(rng, d, s.channels);
  const Matrix k = uniform_matrix(rng, 1, s.channels * s.channels * kTaps, s.channels * kTaps);
  w.conv_kernel.assign(k.data(), k.data() + k.size());
  w.conv_bias = uniform_matrix(rng, s.channels, 1, s.channels * kTaps).col(0);
  w.alpha = s.alpha;
  w.validate();
  return w;
}

CpdaWeights identity_weights(const CpdaShape& s) {
  CpdaWeights w = seed_weights(s, 0);
  w.gate.weight.setZero();
  w.gate.bias.setZero();
  std::fill(w.conv_kernel.begin(), w.conv_kernel.end(), 0.0);
  for (int c = 0; c < s.channels; ++c) w.conv_kernel[(c * s.channels + c) * kTaps + 13] = 1.0;
  w.conv_bias.setZero();
  return w;
}

PhaseTrack phase_track(int frames, int ed, int es) {
  if (frames < 1 || ed < 0 || es < 0 || ed >= frames || es >= frames)
    throw Error(ErrorKind::Parameter, kModule, "ed/es index outside the sequence");
  if (ed == es) throw Error(ErrorKind::DegeneratePhase, kModule, "ed and es coincide; phase is undefined");
  const double period = 2.0 * std::abs(es - ed);
  PhaseTrack track;
  track.phi.resize(frames);
  for (int t = 0; t < frames; ++t) {
    const double x = (t - ed) / period;
    double phi = x - std::floor(x);
    if (phi >= 1.0) phi = 0.0;
    track.phi[t] = phi;
  }
  return track;
}

Matrix pool_spatial(const FeatureClip& clip) {
  Matrix pooled = Matrix::Zero(clip.t, clip.c);
  const double n = static_cast<double>(clip.h) * clip.w;
  for (int t = 0; t < clip.t; ++t) {
    for (int y = 0; y < clip.h; ++y)
      for (int x = 0; x < clip.w; ++x)
        for (int c = 0; c < clip.c; ++c) pooled(t, c) += clip.at(t, y, x, c);
    if (n > 0) pooled.row(t) /= n;
  }
  return pooled;
}

Matrix mha_forward(const Matrix& tokens, const AttentionWeights& w, std::vector<Matrix>* attention_out) {
  const int d = w.dim();
  if (tokens.cols() != d) throw Error(ErrorKind::Model, kModule, "token width " + std::to_string(tokens.cols()) +
                                                                     " differs from attention dim " + std::to_string(d));
  if (w.heads < 1 || d % w.heads != 0) throw Error(ErrorKind::Model, kModule, "heads must divide the token dim");
  if (!tokens.allFinite()) throw Error(ErrorKind::Numeric, kModule, "attention input contains non-finite values");

  const Matrix q = tokens * w.q.transpose();
  const Matrix k = tokens * w.k.transpose();
  const Matrix v = tokens * w.v.transpose();
  const int hd = d / w.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix concat(tokens.rows(), d);
  if (attention_out) attention_out->clear();
  for (int h = 0; h < w.heads; ++h) {
    Matrix scores = q.middleCols(h * hd, hd) * k.middleCols(h * hd, hd).transpose() * scale;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      const double mx = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - mx).exp().matrix();
      scores.row(r) /= scores.row(r).sum();
    }
    concat.middleCols(h * hd, hd) = scores * v.middleCols(h * hd, hd);
    if (attention_out) attention_out->push_back(std::move(scores));
  }
  Matrix out = concat * w.out.transpose();
  if (!out.allFinite()) throw Error(ErrorKind::Numeric, kModule, "attention produced non-finite values");
  return out;
}

FeatureClip conv3d_same(const FeatureClip& x, std::span<const double> kernel, const Vector& bias) {
  const int C = x.c;
  if (static_cast<int>(kernel.size()) != C * C * kTaps || bias.size() != C)
    throw Error(ErrorKind::Model, kModule, "conv3d kernel does not match channel count " + std::to_string(C));
  FeatureClip out(x.t, x.h, x.w, C);
  out.level = x.level;
  const int planes = x.t * x.h;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const int t = p / x.h, y = p % x.h;
    for (int xx = 0; xx < x.w; ++xx)
      for (int o = 0; o < C; ++o) {
        double acc = bias[o];
        for (int dt = -1; dt <= 1; ++dt) {
          const int ts = t + dt;
          if (ts < 0 || ts >= x.t) continue;
          for (int dy = -1; dy <= 1; ++dy) {
            const int ys = y + dy;
            if (ys < 0 || ys >= x.h) continue;
            for (int dx = -1; dx <= 1; ++dx) {
              const int xs = xx + dx;
              if (xs < 0 || xs >= x.w) continue;
              const int tap = (dt + 1) * 9 + (dy + 1) * 3 + (dx + 1);
              const double* src = &x.data[x.index(ts, ys, xs, 0)];
              for (int i = 0; i < C; ++i) acc += kernel[(o * C + i) * kTaps + tap] * src[i];
            }
          }
        }
        out.at(t, y, xx, o) = acc;
      }
  }
  return out;
}

FeatureClip cpda_forward(const FeatureClip& clip, const PhaseTrack& phase, const Matrix& pedg,
                         const CpdaWeights& w, CpdaTrace* trace) {
  w.validate();
  if (clip.t < 1) throw Error(ErrorKind::Model, kModule, "clip has no frames");
  if (clip.c != w.channels())
    throw Error(ErrorKind::Model, kModule, "clip channels C=" + std::to_string(clip.c) + " but weights expect C=" +
                                               std::to_string(w.channels()));
  if (static_cast<int>(phase.phi.size()) != clip.t)
    throw Error(ErrorKind::Model, kModule, "phase track length " + std::to_string(phase.phi.size()) +
                                               " differs from clip T=" + std::to_string(clip.t));
  if (pedg.rows() != clip.t)
    throw Error(ErrorKind::Model, kModule, "P_EDG has " + std::to_string(pedg.rows()) + " rows, clip T=" +
                                               std::to_string(clip.t));
  if (pedg.cols() != w.pedg_dim())
    throw Error(ErrorKind::Model, kModule, "P_EDG width k2=" + std::to_string(pedg.cols()) + " but weights expect k2=" +
                                               std::to_string(w.pedg_dim()));
  for (double v : clip.data)
    if (!std::isfinite(v)) throw Error(ErrorKind::Numeric, kModule, "clip contains non-finite values");

  const int T = clip.t, C = clip.c;
  const Matrix pooled = pool_spatial(clip);
  Matrix fused(T, w.token_dim());
  for (int t = 0; t < T; ++t) {
    const double angle = 2.0 * std::numbers::pi * phase.phi[t];
    Vector ph(2);
    ph << std::sin(angle), std::cos(angle);
    fused.row(t) << pooled.row(t), w.phase_mlp.apply(ph).transpose(), w.edg_mlp.apply(pedg.row(t).transpose()).transpose();
  }
  const Matrix attended = mha_forward(fused, w.attention);
  Matrix s(T, C);
  for (int t = 0; t < T; ++t) {
    const Vector g = w.gate.apply(attended.row(t).transpose());
    for (int c = 0; c < C; ++c) s(t, c) = 1.0 / (1.0 + std::exp(-g[c]));
  }

  FeatureClip mod = clip;
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < clip.h; ++y)
      for (int x = 0; x < clip.w; ++x)
        for (int c = 0; c < C; ++c) mod.at(t, y, x, c) *= 1.0 + w.alpha * (2.0 * s(t, c) - 1.0);

  const FeatureClip conv = conv3d_same(mod, w.conv_kernel, w.conv_bias);
  FeatureClip out = mod;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = 0.5 * mod.data[i] + 0.5 * conv.data[i];

  if (trace) *trace = {pooled, fused, attended, s, std::move(mod)};
  return out;
}

Matrix align_pedg(const Matrix& pedg, int frames) {
  if (pedg.rows() == frames) return pedg;
  if (pedg.rows() < 1 || pedg.rows() > frames)
    throw Error(ErrorKind::Model, kModule, "cannot align " + std::to_string(pedg.rows()) + " P_EDG rows to T=" +
                                               std::to_string(frames));
  Matrix out(frames, pedg.cols());
  out.topRows(pedg.rows()) = pedg;
  for (Eigen::Index r = pedg.rows(); r < frames; ++r) out.row(r) = pedg.row(pedg.rows() - 1);
  return out;
}

std::vector<std::uint8_t> encode_clip(const FeatureClip& clip) {
  std::vector<std::uint8_t> out = {'F', 'T', 'C', '1'};
  for (int v : {clip.t, clip.h, clip.w, clip.c}) put_u32le(out, static_cast<std::uint32_t>(v));
  for (double v : clip.data) put_f32le(out, static_cast<float>(v));
  return out;
}

FeatureClip decode_clip(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 20 || std::string(bytes.begin(), bytes.begin() + 4) != "FTC1")
    throw Error(ErrorKind::Format, kModule, "missing FTC1 header");
  FeatureClip clip(static_cast<int>(get_u32le(bytes, 4)), static_cast<int>(get_u32le(bytes, 8)),
                   static_cast<int>(get_u32le(bytes, 12)), static_cast<int>(get_u32le(bytes, 16)));
  if (bytes.size() != 20 + 4 * clip.data.size()) throw Error(ErrorKind::Format, kModule, "FTC1 payload size mismatch");
  for (std::size_t i = 0; i < clip.data.size(); ++i) clip.data[i] = get_f32le(bytes, 20 + 4 * i);
  return clip;
}

json to_json(const CpdaWeights& w) {
  json t;
  t["phase_mlp.hidden.weight"] = tensor(w.phase_mlp.hidden.weight);
  t["phase_mlp.hidden.bias"] = tensor(w.phase_mlp.hidden.bias);
  t["phase_mlp.output.weight"] = tensor(w.phase_mlp.output.weight);
  t["phase_mlp.output.bias"] = tensor(w.phase_mlp.output.bias);
  t["edg_mlp.hidden.weight"] = tensor(w.edg_mlp.hidden.weight);
  t["edg_mlp.hidden.bias"] = tensor(w.edg_mlp.hidden.bias);
  t["edg_mlp.output.weight"] = tensor(w.edg_mlp.output.weight);
  t["edg_mlp.output.bias"] = tensor(w.edg_mlp.output.bias);
  t["attention.q"] = tensor(w.attention.q);
  t["attention.k"] = tensor(w.attention.k);
  t["attention.v"] = tensor(w.attention.v);
  t["attention.out"] = tensor(w.attention.out);
  t["gate.weight"] = tensor(w.gate.weight);
  t["gate.bias"] = tensor(w.gate.bias);
  const int c = w.channels();
  t["conv3d.kernel"] = {{"dims", {c, c, 3, 3, 3}}, {"data", w.conv_kernel}};
  t["conv3d.bias"] = tensor(w.conv_bias);
  return {{"heads", w.attention.heads}, {"alpha", w.alpha}, {"tensors", t}};
}

CpdaWeights cpda_weights_from_json(const json& j) {
  try {
    const auto& t = j.at("tensors");
    CpdaWeights w;
    w.phase_mlp = {{read_matrix(t, "phase_mlp.hidden.weight"), read_vector(t, "phase_mlp.hidden.bias")},
                   {read_matrix(t, "phase_mlp.output.weight"), read_vector(t, "phase_mlp.output.bias")}};
    w.edg_mlp = {{read_matrix(t, "edg_mlp.hidden.weight"), read_vector(t, "edg_mlp.hidden.bias")},
                 {read_matrix(t, "edg_mlp.output.weight"), read_vector(t, "edg_mlp.output.bias")}};
    w.attention = {read_matrix(t, "attention.q"), read_matrix(t, "attention.k"), read_matrix(t, "attention.v"),
                   read_matrix(t, "attention.out"), j.at("heads").get<int>()};
    w.gate = {read_matrix(t, "gate.weight"), read_vector(t, "gate.bias")};
    w.conv_kernel = t.at("conv3d.kernel").at("data").get<std::vector<double>>();
    w.conv_bias = read_vector(t, "conv3d.bias");
    w.alpha = j.at("alpha").get<double>();
    w.validate();
    return w;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, kModule, std::string("weights JSON: ") + e.what());
  }
}

}  // namespace dyl
