#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "dyl/seqio.hpp"
#include "support.hpp"

using namespace dyl;
using testing::TempDir;

namespace {

FrameSequence ramp_sequence(int t, int h, int w) {
  FrameSequence s;
  for (int i = 0; i < t; ++i) {
    Image f(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) f(y, x) = std::fmod(0.013 * (y * w + x) + 0.1 * i, 1.0);
    s.frames.push_back(f);
  }
  s.ed_index = 0;
  s.es_index = t - 1;
  return s;
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::Format;
}

}  // namespace

TEST_CASE("quantize rounds half up and clips") {
  CHECK(quantize(0.0) == 0);
  CHECK(quantize(1.0) == 255);
  CHECK(quantize(0.5) == 128);
  CHECK(quantize(-3.0) == 0);
  CHECK(quantize(7.0) == 255);
}

TEST_CASE("two identical 8x8 frames load with equal values") {
  TempDir d("seq2");
  FrameSequence s;
  s.frames = {Image(8, 8, 0.25), Image(8, 8, 0.25)};
  s.ed_index = 0;
  s.es_index = 1;
  save_sequence(s, d.path());
  const auto r = load_sequence(d.path());
  CHECK(r.length() == 2);
  CHECK(r.frames[0] == r.frames[1]);
  CHECK(r.ed_index == 0);
  CHECK(r.es_index == 1);
}

TEST_CASE("pixel byte 128 loads as 128/255") {
  TempDir d("byte128");
  Grid2<std::uint8_t> g(2, 2, 128);
  write_file_atomic(d / "frame_0000.pgm", encode_pgm(g));
  write_file_atomic(d / "frame_0001.pgm", encode_pgm(g));
  write_text_atomic(d / "meta.json", R"({"t":2,"h":2,"w":2,"ed":0,"es":1})");
  const auto s = load_sequence(d.path());
  CHECK(s.frames[0](1, 1) == doctest::Approx(0.50196).epsilon(1e-5));
  CHECK(s.frames[0](1, 1) == 128.0 / 255.0);
}

TEST_CASE("save writes quantized bytes") {
  TempDir d("savebytes");
  FrameSequence s;
  s.frames = {Image(3, 3, 0.0), Image(3, 3, 1.0), Image(3, 3, 0.5)};
  s.ed_index = 0;
  s.es_index = 2;
  save_sequence(s, d.path());
  auto check = [&](const char* name, std::uint8_t v) {
    const auto img = decode_pgm(read_file(d / name));
    for (auto b : img.values()) CHECK(b == v);
  };
  check("frame_0000.pgm", 0);
  check("frame_0001.pgm", 255);
  check("frame_0002.pgm", 128);
}

TEST_CASE("directory and eds round-trips are exact after quantization") {
  auto s = ramp_sequence(5, 7, 9);
  s.meta["note"] = "ramp";
  for (const char* where : {"dir", "seq.eds"}) {
    TempDir d("rt");
    const auto p = d / where;
    save_sequence(s, p);
    const auto r = load_sequence(p);
    REQUIRE(r.length() == s.length());
    CHECK(r.ed_index == s.ed_index);
    CHECK(r.es_index == s.es_index);
    for (int t = 0; t < s.length(); ++t)
      for (std::size_t i = 0; i < s.frames[t].size(); ++i) {
        CHECK(std::abs(r.frames[t].data()[i] - s.frames[t].data()[i]) <= 1.0 / 510 + 1e-12);
        CHECK(r.frames[t].data()[i] == quantize(s.frames[t].data()[i]) / 255.0);
      }
    if (std::string(where) == "dir") CHECK(r.meta.at("note") == "ramp");
    // Saving the loaded sequence again gives the same bytes.
    TempDir d2("rt2");
    save_sequence(r, d2 / where);
    if (std::string(where) == "dir") {
      for (int t = 0; t < s.length(); ++t) {
        char n[32];
        std::snprintf(n, sizeof n, "frame_%04d.pgm", t);
        CHECK(read_file(p / n) == read_file(d2 / where / n));
      }
    } else {
      CHECK(read_file(p) == read_file(d2 / where));
    }
  }
}

TEST_CASE("eds header layout") {
  TempDir d("eds");
  auto s = ramp_sequence(3, 2, 4);
  save_sequence(s, d / "a.eds");
  const auto b = read_file(d / "a.eds");
  REQUIRE(b.size() == 4 + 5 * 4 + 3 * 2 * 4);
  CHECK(std::string(b.begin(), b.begin() + 4) == "EDS1");
  CHECK(get_u32le(b, 4) == 3);
  CHECK(get_u32le(b, 8) == 2);
  CHECK(get_u32le(b, 12) == 4);
  CHECK(get_u32le(b, 16) == 0);
  CHECK(get_u32le(b, 20) == 2);
}

TEST_CASE("load errors") {
  SUBCASE("missing metadata") {
    TempDir d("nometa");
    write_file_atomic(d / "frame_0000.pgm", encode_pgm(Grid2<std::uint8_t>(2, 2, 0)));
    CHECK(kind_of([&] { load_sequence(d.path()); }) == ErrorKind::Format);
  }
  SUBCASE("metadata missing a field") {
    TempDir d("badmeta");
    write_text_atomic(d / "meta.json", R"({"t":2,"h":2,"w":2,"ed":0})");
    CHECK(kind_of([&] { load_sequence(d.path()); }) == ErrorKind::Format);
  }
  SUBCASE("inconsistent frame size") {
    TempDir d("dims");
    write_file_atomic(d / "frame_0000.pgm", encode_pgm(Grid2<std::uint8_t>(2, 2, 0)));
    write_file_atomic(d / "frame_0001.pgm", encode_pgm(Grid2<std::uint8_t>(3, 2, 0)));
    write_text_atomic(d / "meta.json", R"({"t":2,"h":2,"w":2,"ed":0,"es":1})");
    CHECK(kind_of([&] { load_sequence(d.path()); }) == ErrorKind::Dimension);
  }
  SUBCASE("single frame") {
    TempDir d("short");
    write_file_atomic(d / "frame_0000.pgm", encode_pgm(Grid2<std::uint8_t>(2, 2, 0)));
    write_text_atomic(d / "meta.json", R"({"t":1,"h":2,"w":2,"ed":0,"es":0})");
    CHECK(kind_of([&] { load_sequence(d.path()); }) == ErrorKind::TooShort);
  }
  SUBCASE("not a pgm") {
    const std::vector<std::uint8_t> junk = {'P', '2', '\n'};
    CHECK(kind_of([&] { decode_pgm(junk); }) == ErrorKind::Format);
  }
  SUBCASE("truncated pgm") {
    auto b = encode_pgm(Grid2<std::uint8_t>(4, 4, 9));
    b.resize(b.size() - 3);
    CHECK(kind_of([&] { decode_pgm(b); }) == ErrorKind::Format);
  }
  SUBCASE("nonexistent path") {
    CHECK(kind_of([&] { load_sequence("/nonexistent/dyl/seq"); }) == ErrorKind::Io);
  }
}

TEST_CASE("sequence validation") {
  FrameSequence s;
  s.frames = {Image(2, 2, 0.1), Image(2, 2, 0.2)};
  s.ed_index = 0;
  s.es_index = 0;
  CHECK_THROWS_AS(s.validate(), Error);
  s.es_index = 1;
  CHECK_NOTHROW(s.validate());
  s.frames[1](0, 0) = 1.5;
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("mask round-trip stores labels directly") {
  TempDir d("masks");
  MaskSequence m;
  for (int t = 0; t < 3; ++t) {
    LabelImage l(4, 5, 0);
    l(1, 1) = 1;
    l(2, 2) = 2;
    l(3, t) = 3;
    m.masks.push_back(l);
  }
  save_masks(m, d.path());
  const auto raw = decode_pgm(read_file(d / "mask_0001.pgm"));
  CHECK(raw(2, 2) == 2);
  const auto r = load_masks(d.path());
  REQUIRE(r.length() == 3);
  for (int t = 0; t < 3; ++t) CHECK(r.masks[t] == m.masks[t]);
  m.masks[0](0, 0) = 7;
  CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("phantom radius law") {
  PhantomSpec s;
  CHECK(phantom_radius(s, 0) == s.base_radius);
  CHECK(phantom_radius(s, s.t_count / 2) == doctest::Approx(s.base_radius * (1 - s.contraction_fraction)));
}

TEST_CASE("phantom ed/es extremes") {
  PhantomSpec s;
  s.t_count = 16;
  s.height = s.width = 96;
  s.base_radius = 16;
  auto [seq, masks] = generate_phantom(s);
  // Brute-force argmax/argmin of the radius law.
  int ed = 0, es = 0;
  for (int t = 0; t < s.t_count; ++t) {
    if (phantom_radius(s, t) > phantom_radius(s, ed)) ed = t;
    if (phantom_radius(s, t) < phantom_radius(s, es)) es = t;
  }
  CHECK(seq.ed_index == ed);
  CHECK(seq.es_index == es);
  CHECK(seq.ed_index == 0);
  CHECK(seq.es_index == 8);

  auto area = [&](int t) {
    int n = 0;
    for (auto v : masks.masks[t].values()) n += v == static_cast<std::uint8_t>(Label::LV);
    return n;
  };
  for (int t = 0; t < s.t_count; ++t) {
    CHECK(area(seq.ed_index) >= area(t));
    CHECK(area(t) >= area(seq.es_index));
  }
}

TEST_CASE("phantom with three frames: es is the first minimum") {
  PhantomSpec s;
  s.t_count = 3;
  s.height = s.width = 96;
  s.base_radius = 16;
  // r(1) == r(2) by symmetry of cos(2 pi t / 3).
  auto [seq, masks] = generate_phantom(s);
  CHECK(seq.ed_index == 0);
  CHECK(seq.es_index == 1);
}

TEST_CASE("phantom without contraction is static in its masks") {
  PhantomSpec s;
  s.contraction_fraction = 0.0;
  s.t_count = 6;
  auto [seq, masks] = generate_phantom(s);
  for (int t = 1; t < s.t_count; ++t) CHECK(masks.masks[t] == masks.masks[0]);
  CHECK(seq.ed_index != seq.es_index);
}

TEST_CASE("phantom labels partition the image and stay in range") {
  PhantomSpec s;
  s.t_count = 8;
  auto [seq, masks] = generate_phantom(s);
  REQUIRE(seq.length() == 8);
  REQUIRE(masks.length() == 8);
  for (int t = 0; t < 8; ++t) {
    int counts[4] = {0, 0, 0, 0};
    for (auto v : masks.masks[t].values()) {
      REQUIRE(v <= 3);
      ++counts[v];
    }
    CHECK(counts[0] + counts[1] + counts[2] + counts[3] == s.height * s.width);
    CHECK(counts[1] > 0);
    CHECK(counts[2] > 0);
    CHECK(counts[3] > 0);
    for (double v : seq.frames[t].values()) CHECK((v >= 0.0 && v <= 1.0));
  }
  // Interior is dark, wall is bright: compare the LV centre with a wall pixel row.
  const auto& f = seq.frames[0];
  const auto& m = masks.masks[0];
  double lv = 0, wall = 0;
  int nlv = 0, nwall = 0;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      if (m(y, x) == 1) lv += f(y, x), ++nlv;
      if (m(y, x) == 2) wall += f(y, x), ++nwall;
    }
  CHECK(lv / nlv == doctest::Approx(0.2).epsilon(0.1));
  CHECK(wall / nwall > 0.6);
}

TEST_CASE("phantom is deterministic and seed dependent") {
  PhantomSpec s;
  s.t_count = 6;
  auto a = generate_phantom(s);
  auto b = generate_phantom(s);
  for (int t = 0; t < 6; ++t) {
    CHECK(a.first.frames[t] == b.first.frames[t]);
    CHECK(a.second.masks[t] == b.second.masks[t]);
  }
  s.seed = 8;
  auto c = generate_phantom(s);
  CHECK_FALSE(a.first.frames[0] == c.first.frames[0]);
  CHECK(a.second.masks[0] == c.second.masks[0]);
}

TEST_CASE("phantom spec errors") {
  PhantomSpec s;
  s.base_radius = 60;
  CHECK(kind_of([&] { generate_phantom(s); }) == ErrorKind::Geometry);
  s = {};
  s.t_count = 3;
  CHECK_NOTHROW(s.validate());
  s.t_count = 1;
  CHECK_THROWS_AS(s.validate(), Error);
  s = {};
  s.contraction_fraction = 0.95;
  CHECK_THROWS_AS(s.validate(), Error);
  s = {};
  s.speckle_sigma = -1;
  CHECK_THROWS_AS(s.validate(), Error);
}
