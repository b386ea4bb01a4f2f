#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "dyl/cpda.hpp"
#include "dyl/metrics.hpp"
#include "oracles/cpda_oracle.hpp"
#include "oracles/hausdorff_brute.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("dyl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline dyl::Image gaussian_blob(int h, int w, double cx, double cy, double sigma, double amp = 0.8,
                                double base = 0.1) {
  dyl::Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      img(y, x) = base + amp * std::exp(-r2 / (2 * sigma * sigma));
    }
  return img;
}

inline dyl::BinaryMask random_blobs(int h, int w, std::mt19937_64& rng) {
  dyl::BinaryMask m(h, w, 0);
  std::uniform_int_distribution<int> count(1, 3), cy(0, h - 1), cx(0, w - 1), rad(1, 7);
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const int y0 = cy(rng), x0 = cx(rng), r = rad(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((y - y0) * (y - y0) + (x - x0) * (x - x0) <= r * r) m(y, x) = 1;
  }
  return m;
}

inline oracle::Mask to_oracle(const dyl::BinaryMask& m) {
  return {m.height(), m.width(), std::vector<std::uint8_t>(m.values().begin(), m.values().end())};
}

inline oracle::Rows rows_of(const dyl::Matrix& m) {
  oracle::Rows r(m.rows(), std::vector<double>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  return r;
}

inline oracle::Layer layer_of(const dyl::Dense& d) {
  return {rows_of(d.weight), std::vector<double>(d.bias.begin(), d.bias.end())};
}

inline oracle::CpdaParams params_of(const dyl::CpdaWeights& w) {
  oracle::CpdaParams p;
  p.phase_hidden = layer_of(w.phase_mlp.hidden);
  p.phase_out = layer_of(w.phase_mlp.output);
  p.edg_hidden = layer_of(w.edg_mlp.hidden);
  p.edg_out = layer_of(w.edg_mlp.output);
  p.q = rows_of(w.attention.q);
  p.k = rows_of(w.attention.k);
  p.v = rows_of(w.attention.v);
  p.o = rows_of(w.attention.out);
  p.heads = w.attention.heads;
  p.gate = layer_of(w.gate);
  p.kernel = w.conv_kernel;
  p.conv_bias.assign(w.conv_bias.begin(), w.conv_bias.end());
  p.alpha = w.alpha;
  return p;
}

inline dyl::FeatureClip random_clip(int t, int h, int w, int c, std::uint64_t seed) {
  dyl::FeatureClip clip(t, h, w, c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : clip.data) v = u(rng);
  return clip;
}

/// Runs a shell command and returns its exit status and stdout.
inline std::pair<int, std::string> run(const std::string& cmd) {
  std::string out;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return {-1, out};
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), p)) > 0) out.append(buf, n);
  const int status = ::pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

}  // namespace testing
