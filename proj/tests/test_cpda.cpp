#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dyl/cpda.hpp"
#include "support.hpp"

using namespace dyl;

namespace {

CpdaShape tiny_shape() {
  CpdaShape s;
  s.channels = 2;
  s.pedg_dim = 2;
  s.phase_dim = 2;
  s.edg_dim = 2;
  s.heads = 1;
  return s;
}

Matrix random_pedg(int t, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix p(t, k);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < k; ++j) p(i, j) = g(rng);
  return p;
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Format;
}

}  // namespace

TEST_CASE("phase track examples") {
  CHECK(phase_track(4, 0, 2).phi == std::vector<double>{0, 0.25, 0.5, 0.75});
  CHECK(phase_track(2, 0, 1).phi == std::vector<double>{0, 0.5});
  const auto p = phase_track(6, 1, 4).phi;
  const std::vector<double> want = {5.0 / 6, 0, 1.0 / 6, 2.0 / 6, 3.0 / 6, 4.0 / 6};
  for (int i = 0; i < 6; ++i) CHECK(p[i] == doctest::Approx(want[i]).epsilon(1e-12));
  CHECK(kind_of([] { phase_track(4, 2, 2); }) == ErrorKind::DegeneratePhase);
  CHECK(kind_of([] { phase_track(4, 0, 4); }) == ErrorKind::Parameter);
}

TEST_CASE("phase wraps into [0,1) with exact anchors") {
  for (int frames : {2, 5, 17, 40})
    for (int ed = 0; ed < frames; ed += 3)
      for (int es = 0; es < frames; es += 2) {
        if (ed == es) continue;
        const auto p = phase_track(frames, ed, es).phi;
        const auto o = oracle::phase(frames, ed, es);
        for (int t = 0; t < frames; ++t) {
          CHECK(p[t] >= 0.0);
          CHECK(p[t] < 1.0);
          CHECK(p[t] == doctest::Approx(o[t]).epsilon(1e-12));
        }
        CHECK(p[ed] == 0.0);
        CHECK(p[es] == 0.5);
      }
}

TEST_CASE("spatial pooling") {
  FeatureClip c(2, 3, 3, 2, 1.75);
  Matrix p = pool_spatial(c);
  CHECK(p.isApproxToConstant(1.75));
  FeatureClip one(1, 4, 5, 1, 0.0);
  one.at(0, 2, 3, 0) = 1.0;
  CHECK(pool_spatial(one)(0, 0) == doctest::Approx(1.0 / 20));

  const auto r = testing::random_clip(2, 3, 3, 2, 4);
  p = pool_spatial(r);
  for (int t = 0; t < 2; ++t)
    for (int ch = 0; ch < 2; ++ch) {
      double s = 0;
      for (int i = 0; i < 9; ++i) s += r.data[(t * 9 + i) * 2 + ch];
      CHECK(p(t, ch) == doctest::Approx(s / 9).epsilon(1e-14));
    }
}

TEST_CASE("attention with one token returns out(v(token))") {
  AttentionWeights w;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1);
  auto rnd = [&](int n) {
    Matrix m(n, n);
    for (int i = 0; i < n * n; ++i) m.data()[i] = g(rng);
    return m;
  };
  w.q = rnd(4);
  w.k = rnd(4);
  w.v = rnd(4);
  w.out = rnd(4);
  w.heads = 2;
  Matrix tok(1, 4);
  tok << 0.3, -1.0, 2.0, 0.5;
  std::vector<Matrix> attn;
  const Matrix y = mha_forward(tok, w, &attn);
  const Vector want = w.out * (w.v * tok.row(0).transpose());
  CHECK((y.row(0).transpose() - want).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(attn.size() == 2);
  CHECK(attn[0](0, 0) == 1.0);

  // Identical tokens give identical outputs.
  Matrix same(3, 4);
  for (int t = 0; t < 3; ++t) same.row(t) = tok.row(0);
  const Matrix ys = mha_forward(same, w);
  CHECK((ys.row(1) - ys.row(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ys.row(2) - ys.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention 2x2 worked by hand") {
  // Q = K = identity projections, V swaps the coordinates, out is identity.
  AttentionWeights w;
  w.q = Matrix::Identity(2, 2);
  w.k = Matrix::Identity(2, 2);
  w.v = Matrix(2, 2);
  w.v << 0, 1, 1, 0;
  w.out = Matrix::Identity(2, 2);
  w.heads = 1;
  Matrix x(2, 2);
  x << 1, 0, 0, 2;
  // Scores / sqrt(2): row 0 = [1, 0]/sqrt2, row 1 = [0, 4]/sqrt2.
  const double a0 = 1.0 / (1.0 + std::exp(-1.0 / std::sqrt(2.0)));
  const double a1 = 1.0 / (1.0 + std::exp(4.0 / std::sqrt(2.0)));
  // v(x0) = (0, 1), v(x1) = (2, 0).
  const Matrix y = mha_forward(x, w);
  CHECK(y(0, 0) == doctest::Approx((1 - a0) * 2).epsilon(1e-12));
  CHECK(y(0, 1) == doctest::Approx(a0 * 1).epsilon(1e-12));
  CHECK(y(1, 0) == doctest::Approx((1 - a1) * 2).epsilon(1e-12));
  CHECK(y(1, 1) == doctest::Approx(a1 * 1).epsilon(1e-12));
}

TEST_CASE("attention rows are distributions and permutation equivariant") {
  const auto w = seed_weights(CpdaShape{}, 5).attention;
  const int d = w.dim();
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0, 2);
  Matrix x(7, d);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
  std::vector<Matrix> attn;
  const Matrix y = mha_forward(x, w, &attn);
  REQUIRE(attn.size() == static_cast<std::size_t>(w.heads));
  for (const auto& a : attn) {
    CHECK(a.minCoeff() >= 0.0);
    for (int r = 0; r < a.rows(); ++r) CHECK(std::abs(a.row(r).sum() - 1.0) < 1e-6);
  }
  const std::vector<int> perm = {3, 0, 6, 1, 5, 2, 4};
  Matrix xp(7, d);
  for (int i = 0; i < 7; ++i) xp.row(i) = x.row(perm[i]);
  const Matrix yp = mha_forward(xp, w);
  for (int i = 0; i < 7; ++i) CHECK((yp.row(i) - y.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention errors") {
  auto w = seed_weights(CpdaShape{}, 5).attention;
  CHECK(kind_of([&] { mha_forward(Matrix::Zero(2, 3), w); }) == ErrorKind::Model);
  Matrix bad = Matrix::Zero(2, w.dim());
  bad(1, 1) = std::nan("");
  CHECK(kind_of([&] { mha_forward(bad, w); }) == ErrorKind::Numeric);
  w.heads = 5;
  CHECK(kind_of([&] { mha_forward(Matrix::Zero(2, w.dim()), w); }) == ErrorKind::Model);
}

TEST_CASE("zero gate leaves the modulation at one") {
  auto w = seed_weights(CpdaShape{}, 11);
  w.gate.weight.setZero();
  w.gate.bias.setZero();
  const auto clip = testing::random_clip(4, 5, 6, 4, 2);
  CpdaTrace tr;
  cpda_forward(clip, phase_track(4, 0, 2), random_pedg(4, 8, 1), w, &tr);
  CHECK(tr.modulation.isApproxToConstant(0.5));
  CHECK(tr.modulated.data == clip.data);
}

TEST_CASE("identity path returns the input") {
  const auto w = identity_weights(CpdaShape{});
  const auto clip = testing::random_clip(5, 6, 7, 4, 3);
  const auto out = cpda_forward(clip, phase_track(5, 0, 2), random_pedg(5, 8, 2), w);
  double worst = 0;
  for (std::size_t i = 0; i < clip.data.size(); ++i) worst = std::max(worst, std::abs(out.data[i] - clip.data[i]));
  CHECK(worst <= 1e-6);
}

TEST_CASE("alpha zero disables modulation") {
  auto w = seed_weights(CpdaShape{}, 4);
  w.alpha = 0.0;
  const auto clip = testing::random_clip(3, 4, 4, 4, 6);
  CpdaTrace tr;
  cpda_forward(clip, phase_track(3, 0, 1), random_pedg(3, 8, 5), w, &tr);
  CHECK(tr.modulated.data == clip.data);
}

TEST_CASE("modulation factor bound") {
  for (double alpha : {0.25, 0.5, 1.0}) {
    auto w = seed_weights(CpdaShape{}, 9);
    w.alpha = alpha;
    w.gate.weight *= 8.0;  // push S toward the ends of (0, 1)
    const auto clip = testing::random_clip(6, 4, 4, 4, 8);
    CpdaTrace tr;
    cpda_forward(clip, phase_track(6, 1, 4), random_pedg(6, 8, 3), w, &tr);
    CHECK(tr.modulation.minCoeff() >= 0.0);
    CHECK(tr.modulation.maxCoeff() <= 1.0);
    for (std::size_t i = 0; i < clip.data.size(); ++i) {
      const double x = std::abs(clip.data[i]), m = std::abs(tr.modulated.data[i]);
      CHECK(m <= (1 + alpha) * x + 1e-15);
      CHECK(m >= (1 - alpha) * x - 1e-15);
    }
  }
}

TEST_CASE("tiny instance matches the loop oracle") {
  const auto shape = tiny_shape();
  const auto w = seed_weights(shape, 42);
  const auto clip = testing::random_clip(3, 4, 4, 2, 17);
  const auto pedg = random_pedg(3, 2, 23);
  const auto phase = phase_track(3, 0, 2);
  const auto out = cpda_forward(clip, phase, pedg, w);
  const auto ref = oracle::cpda_forward(clip.data, 3, 4, 4, 2, phase.phi, testing::rows_of(pedg),
                                        testing::params_of(w));
  double worst = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - out.data[i]));
  CHECK(worst <= 1e-5);
  CHECK(worst <= 1e-12);
}

TEST_CASE("two-head default shape matches the loop oracle") {
  const auto w = seed_weights(CpdaShape{}, 7);
  const auto clip = testing::random_clip(5, 3, 4, 4, 1);
  const auto pedg = random_pedg(5, 8, 9);
  const auto phase = phase_track(5, 4, 1);
  const auto out = cpda_forward(clip, phase, pedg, w);
  const auto ref = oracle::cpda_forward(clip.data, 5, 3, 4, 4, phase.phi, testing::rows_of(pedg),
                                        testing::params_of(w));
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(out.data[i] == doctest::Approx(ref[i]).epsilon(1e-10));
}

TEST_CASE("finite-difference sensitivity") {
  const auto shape = tiny_shape();
  const auto w = seed_weights(shape, 42);
  const auto clip = testing::random_clip(3, 4, 4, 2, 17);
  const auto pedg = random_pedg(3, 2, 23);
  const auto phase = phase_track(3, 0, 2);
  auto total = [&](const FeatureClip& c) {
    const auto o = cpda_forward(c, phase, pedg, w);
    return std::accumulate(o.data.begin(), o.data.end(), 0.0);
  };
  for (std::size_t idx : {std::size_t{0}, std::size_t{13}, std::size_t{47}, std::size_t{95}}) {
    std::vector<oracle::Dual> x(clip.data.begin(), clip.data.end());
    x[idx].d = 1.0;
    const auto y = oracle::cpda_forward(x, 3, 4, 4, 2, phase.phi, testing::rows_of(pedg), testing::params_of(w));
    double exact = 0;
    for (const auto& v : y) exact += v.d;
    const double h = 1e-5;
    FeatureClip up = clip, down = clip;
    up.data[idx] += h;
    down.data[idx] -= h;
    const double fd = (total(up) - total(down)) / (2 * h);
    CAPTURE(idx);
    CHECK(std::abs(fd - exact) <= 1e-3 * std::max(1.0, std::abs(exact)));
  }
}

TEST_CASE("conv3d: zero padding and channel mixing") {
  FeatureClip x(2, 2, 2, 2, 1.0);
  std::vector<double> k(2 * 2 * 27, 0.0);
  k[(0 * 2 + 1) * 27 + 13] = 2.0;  // out 0 <- 2 * in 1, centre tap
  for (int tap = 0; tap < 27; ++tap) k[(1 * 2 + 1) * 27 + tap] = 1.0;  // out 1 <- box sum of in 1
  Vector b(2);
  b << 0.5, 0.0;
  const auto y = conv3d_same(x, k, b);
  for (int t = 0; t < 2; ++t)
    for (int yy = 0; yy < 2; ++yy)
      for (int xx = 0; xx < 2; ++xx) {
        CHECK(y.at(t, yy, xx, 0) == 2.5);
        CHECK(y.at(t, yy, xx, 1) == 8.0);  // every 3x3x3 window sees all 8 voxels
      }
  CHECK_THROWS_AS(conv3d_same(x, std::span<const double>(k.data(), 27), b), Error);
}

TEST_CASE("forward shape errors name the offending dimension") {
  const auto w = seed_weights(CpdaShape{}, 1);
  const auto clip = testing::random_clip(4, 3, 3, 4, 1);
  const auto ph = phase_track(4, 0, 2);
  try {
    cpda_forward(testing::random_clip(4, 3, 3, 3, 1), ph, random_pedg(4, 8, 1), w);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Model);
    CHECK(std::string(e.what()).find("C=3") != std::string::npos);
  }
  CHECK(kind_of([&] { cpda_forward(clip, ph, random_pedg(3, 8, 1), w); }) == ErrorKind::Model);
  CHECK(kind_of([&] { cpda_forward(clip, ph, random_pedg(4, 7, 1), w); }) == ErrorKind::Model);
  CHECK(kind_of([&] { cpda_forward(clip, phase_track(3, 0, 1), random_pedg(4, 8, 1), w); }) == ErrorKind::Model);
  auto bad = w;
  bad.attention.heads = 5;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::Model);
  bad = w;
  bad.alpha = 1.5;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::Model);
  bad = w;
  bad.conv_kernel.pop_back();
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::Model);
}

TEST_CASE("P_EDG alignment repeats the last row") {
  Matrix p(2, 3);
  p << 1, 2, 3, 4, 5, 6;
  const Matrix a = align_pedg(p, 3);
  REQUIRE(a.rows() == 3);
  CHECK(a.row(2) == p.row(1));
  CHECK(align_pedg(p, 2) == p);
  CHECK_THROWS_AS(align_pedg(p, 1), Error);
}

TEST_CASE("seeded weights are reproducible and serialisable") {
  const auto a = seed_weights(CpdaShape{}, 3);
  const auto b = seed_weights(CpdaShape{}, 3);
  CHECK(a.attention.q == b.attention.q);
  CHECK(a.conv_kernel == b.conv_kernel);
  CHECK_FALSE(seed_weights(CpdaShape{}, 4).attention.q == a.attention.q);
  const double bound = 1.0 / std::sqrt(double(a.token_dim()));
  CHECK(a.attention.q.cwiseAbs().maxCoeff() <= bound);

  const auto back = cpda_weights_from_json(nlohmann::json::parse(to_json(a).dump()));
  CHECK(back.attention.k == a.attention.k);
  CHECK(back.edg_mlp.hidden.weight == a.edg_mlp.hidden.weight);
  CHECK(back.gate.bias == a.gate.bias);
  CHECK(back.conv_kernel == a.conv_kernel);
  CHECK(back.alpha == a.alpha);
  CHECK(back.attention.heads == a.attention.heads);

  auto j = to_json(a);
  j["tensors"]["gate.weight"]["dims"] = {3, 3};
  CHECK_THROWS_AS(cpda_weights_from_json(j), Error);
}

TEST_CASE("FTC1 round-trip") {
  const auto c = testing::random_clip(2, 3, 4, 5, 12);
  const auto bytes = encode_clip(c);
  CHECK(bytes.size() == 20 + 4 * c.data.size());
  const auto d = decode_clip(bytes);
  CHECK(d.same_shape(c));
  for (std::size_t i = 0; i < c.data.size(); ++i) CHECK(d.data[i] == static_cast<float>(c.data[i]));
  auto bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_clip(bad), Error);
}
