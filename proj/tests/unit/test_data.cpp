#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "doctest.h"
#include "maeface/data/geometry.hpp"
#include "maeface/data/image.hpp"
#include "maeface/data/manifest.hpp"
#include "maeface/data/synth.hpp"
#include "maeface/error.hpp"

using namespace maeface;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("maeface_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Image random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image img(c, h, w);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

SampleRecord rec(const std::string& subject, long frame) {
  SampleRecord r;
  r.image = subject + "_" + std::to_string(frame) + ".pgm";
  r.subject = subject;
  r.frame = frame;
  return r;
}

}  // namespace

TEST_CASE("pnm round trip and format checks") {
  auto dir = scratch_dir("pnm");
  for (std::size_t c : {1u, 3u}) {
    auto img = random_image(c, 7, 5, c);
    const auto path = (dir / (c == 1 ? "a.pgm" : "a.ppm")).string();
    write_image(img, path);
    CHECK(read_image(path) == img);
  }

  std::string p6 = "P6\n4 2\n255\n" + std::string(24, '\x10');
  auto img = decode_pnm(p6);
  CHECK(img.channels == 3);
  CHECK(img.height == 2);
  CHECK(img.width == 4);

  CHECK_THROWS_WITH_AS(decode_pnm("P3\n1 1\n255\n0 0 0\n"), doctest::Contains("P6"), DataError);
  CHECK_THROWS_WITH_AS(decode_pnm("P6\n4 2\n255\n" + std::string(10, 'x')), doctest::Contains("truncated"), DataError);
  CHECK_THROWS_WITH_AS(decode_pnm("P5\n1 1\n65535\n\x01\x02"), doctest::Contains("maxval"), DataError);
  CHECK(decode_pnm("P5 # comment\n2 1\n255\n\x01\x02").pixels == std::vector<std::uint8_t>{1, 2});
  CHECK_THROWS_AS(read_image((dir / "missing.pgm").string()), DataError);

  auto t = to_tensor(img);
  CHECK(t.shape() == Shape{3, 2, 4});
  CHECK(from_tensor(t) == img);
  fs::remove_all(dir);
}

TEST_CASE("align_face") {
  auto img = random_image(1, 100, 100, 4);
  auto same = align_face(img, {30, 40}, {70, 40});
  CHECK(same.angle == 0.0);
  CHECK(same.image == img);

  auto diag = align_face(img, {30, 30}, {70, 70}, {{30, 30}, {70, 70}});
  CHECK(diag.angle == doctest::Approx(-M_PI / 4));
  CHECK(std::abs(diag.landmarks[0].y - diag.landmarks[1].y) < 0.5);
  CHECK_THROWS_AS(align_face(img, {5, 5}, {5, 5}), DomainError);

  // Random eye pairs always come out level.
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(10, 90);
  for (int i = 0; i < 50; ++i) {
    Point l{u(gen), u(gen)}, r{u(gen), u(gen)};
    if (std::hypot(l.x - r.x, l.y - r.y) < 1) continue;
    auto res = align_face(Image(1, 8, 8), l, r, {l, r});
    CHECK(std::abs(res.landmarks[0].y - res.landmarks[1].y) < 0.5);
    CHECK(res.landmarks[1].x > res.landmarks[0].x);
  }
}

TEST_CASE("rotation round trip through align_face") {
  SynthOptions o;
  o.image_size = 96;
  auto corpus = synth_corpus(3, 4, o);
  for (std::size_t k = 0; k < corpus.images.size(); ++k) {
    const Image& face = corpus.images[k];
    const auto& lm = *corpus.manifest.records[k].landmarks;
    const Point mid{(lm[0].x + lm[1].x) / 2, (lm[0].y + lm[1].y) / 2};
    const double angle = 17.0 * M_PI / 180.0;
    Image rotated = from_tensor(rotate_image(to_tensor(face), angle, mid));
    const Point le = rotate_point(lm[0], angle, mid), re = rotate_point(lm[1], angle, mid);
    auto back = align_face(rotated, le, re);
    CHECK(back.angle == doctest::Approx(-angle));
    double mad = 0;
    std::size_t n = 0;
    for (std::size_t y = 24; y < 72; ++y) {
      for (std::size_t x = 24; x < 72; ++x) {
        mad += std::abs(double(back.image.at(0, y, x)) - double(face.at(0, y, x)));
        ++n;
      }
    }
    CHECK(mad / double(n) < 4.0);
  }
}

TEST_CASE("crop_square") {
  auto img = random_image(1, 100, 100, 2);
  auto c = crop_square(img, {30, 30, 40, 40});
  CHECK(c.height == 40);
  CHECK(c.width == 40);
  for (std::size_t y = 0; y < 40; ++y) {
    for (std::size_t x = 0; x < 40; ++x) REQUIRE(c.at(0, y, x) == img.at(0, 30 + y, 30 + x));
  }

  auto tall = square_region({40, 30, 20, 40});
  CHECK(tall.w == 40);
  CHECK(tall.h == 40);
  CHECK(tall.x == 30);
  CHECK(tall.y == 30);

  // Touching the left edge: expansion pushes 10 columns out of frame.
  Image white(1, 100, 100, 255);
  auto edge = crop_square(white, {0, 20, 20, 40});
  CHECK(edge.width == 40);
  CHECK(edge.height == 40);
  for (std::size_t y = 0; y < 40; ++y) {
    for (std::size_t x = 0; x < 10; ++x) REQUIRE(edge.at(0, y, x) == 0);
    for (std::size_t x = 10; x < 40; ++x) REQUIRE(edge.at(0, y, x) == 255);
  }

  std::mt19937_64 gen(1);
  for (int i = 0; i < 100; ++i) {
    BBox b{int(gen() % 120) - 10, int(gen() % 120) - 10, 1 + int(gen() % 60), 1 + int(gen() % 60)};
    const double margin = double(gen() % 3) * 0.1;
    auto out = crop_square(white, b, margin);
    const BBox sq = square_region(b, margin);
    REQUIRE(out.width == out.height);
    REQUIRE(int(out.width) == sq.w);
    REQUIRE(sq.w >= std::max(b.w, b.h));
    for (int y = 0; y < sq.h; ++y) {
      for (int x = 0; x < sq.w; ++x) {
        const bool inside = sq.x + x >= 0 && sq.x + x < 100 && sq.y + y >= 0 && sq.y + y < 100;
        REQUIRE(out.at(0, std::size_t(y), std::size_t(x)) == (inside ? 255 : 0));
      }
    }
  }
  CHECK_THROWS_AS(crop_square(img, {0, 0, 0, 5}), DomainError);
}

TEST_CASE("resize_bilinear") {
  auto img = random_image(3, 9, 9, 5);
  CHECK(resize_bilinear(img, 9) == img);
  Image flat(1, 13, 13, 77);
  auto r = resize_bilinear(flat, 5);
  for (auto p : r.pixels) CHECK(p == 77);
  auto up = resize_bilinear(flat, 40);
  for (auto p : up.pixels) CHECK(p == 77);

  // 2x2 checkerboard to 4x4 with half-pixel centers: source positions are
  // -0.25, 0.25, 0.75, 1.25, clamped to [0, 1].
  Tensor<float> cb(Shape{1, 2, 2}, std::vector<float>{1, 0, 0, 1});
  auto out = resize_bilinear(cb, 4, 4);
  const double pos[4] = {0, 0.25, 0.75, 1};
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const double ax = pos[x], ay = pos[y];
      const double expect = (1 - ay) * (1 - ax) * 1 + ay * ax * 1;
      CHECK(out[y * 4 + x] == doctest::Approx(expect).epsilon(1e-6));
    }
  }
  CHECK(out[0] == 1.0f);
  CHECK(out[3] == 0.0f);
  CHECK(out[15] == 1.0f);
  CHECK_THROWS_AS(resize_bilinear(img, 0), DomainError);
}

TEST_CASE("manifest round trip and validation") {
  Manifest m;
  m.dataset = "demo";
  m.aus = {"AU1", "AU2", "AU3"};
  m.image_size = 32;
  auto a = rec("s1", 0);
  a.occurrence = std::vector<int>{1, 0, 1};
  a.intensity = std::vector<int>{3, 0, 5};
  a.landmarks = Landmarks{Point{1, 2}, Point{3, 4}, Point{5, 6}, Point{7, 8}, Point{9, 10.5}};
  a.bbox = BBox{1, 2, 20, 21};
  a.extra["note"] = "\"left profile\"";
  a.extra["quality"] = "{\"blur\":0.25}";
  auto b = rec("s2", 4);
  b.occurrence = std::vector<int>{0, 0, 0};
  m.records = {a, b};

  auto dir = scratch_dir("manifest");
  const auto path = (dir / "m.jsonl").string();
  write_manifest(m, path);
  auto back = read_manifest(path);
  CHECK(back.dataset == m.dataset);
  CHECK(back.aus == m.aus);
  CHECK(back.image_size == 32);
  CHECK(back.records == m.records);
  CHECK(back.base_dir == dir.string());
  CHECK(format_manifest(back) == format_manifest(m));

  Manifest empty;
  empty.aus = {"AU1"};
  CHECK(parse_manifest(format_manifest(empty)).records.empty());

  std::string bad = format_manifest(m);
  bad += R"({"image":"x.pgm","subject":"s3","frame":1,"occurrence":[1,0]})" "\n";
  CHECK_THROWS_WITH_AS(parse_manifest(bad, "m"), doctest::Contains("m:4"), DataError);
  CHECK_THROWS_WITH_AS(parse_manifest(bad, "m"), doctest::Contains("expected 3"), DataError);

  std::string dup = format_manifest(m) + R"({"image":"x.pgm","subject":"s1","frame":0})" "\n";
  CHECK_THROWS_WITH_AS(parse_manifest(dup), doctest::Contains("duplicate"), DataError);
  std::string range = format_manifest(empty) + R"({"image":"x.pgm","subject":"s","frame":0,"intensity":[6]})" "\n";
  CHECK_THROWS_AS(parse_manifest(range), DataError);
  CHECK_THROWS_AS(parse_manifest("{\"format\":\"other\"}\n"), DataError);
  CHECK_THROWS_AS(parse_manifest("not json\n"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("subsample_every_n") {
  Manifest m;
  m.aus = {"AU1"};
  for (long f = 0; f < 1000; ++f) m.records.push_back(rec("a", f));
  auto s = subsample_every_n(m, 10);
  REQUIRE(s.records.size() == 100);
  for (std::size_t i = 0; i < 100; ++i) CHECK(s.records[i].frame == long(i * 10));
  CHECK(subsample_every_n(m, 1).records == m.records);
  CHECK_THROWS_AS(subsample_every_n(m, 0), DomainError);

  Manifest two;
  two.aus = {"AU1"};
  for (long f = 0; f < 35; ++f) two.records.push_back(rec("x", f));
  for (long f = 0; f < 64; ++f) two.records.push_back(rec("y", f));
  CHECK(subsample_every_n(two, 10).records.size() == 11);

  // Shuffled, interleaved subjects with gaps in frame numbering.
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 30; ++trial) {
    Manifest r;
    r.aus = {"AU1"};
    std::map<std::string, std::vector<long>> frames;
    const int subjects = 1 + int(gen() % 5);
    for (int s = 0; s < subjects; ++s) {
      const int count = int(gen() % 80);
      long f = 0;
      for (int k = 0; k < count; ++k) {
        f += 1 + long(gen() % 3);
        frames["s" + std::to_string(s)].push_back(f);
      }
    }
    for (auto& [sub, fs_] : frames) {
      for (long f : fs_) r.records.push_back(rec(sub, f));
    }
    std::shuffle(r.records.begin(), r.records.end(), gen);
    const std::size_t n = 1 + gen() % 12;
    auto out = subsample_every_n(r, n);
    std::size_t expect = 0;
    for (auto& [sub, fs_] : frames) expect += (fs_.size() + n - 1) / n;
    REQUIRE(out.records.size() == expect);
    // Kept frames are the 0th, n-th, ... of each subject's sorted list.
    for (const auto& kept : out.records) {
      auto list = frames[kept.subject];
      const auto pos = std::find(list.begin(), list.end(), kept.frame) - list.begin();
      REQUIRE(pos % long(n) == 0);
    }
  }
}

TEST_CASE("clean_filter") {
  auto dir = scratch_dir("clean");
  write_image(random_image(1, 63, 100, 1), (dir / "small.pgm").string());
  write_image(random_image(1, 64, 64, 2), (dir / "edge.pgm").string());
  write_image(random_image(3, 80, 90, 3), (dir / "ok.ppm").string());
  write_bytes(dir / "trunc.pgm", "P5\n64 64\n255\n" + std::string(100, 'x'));
  Manifest m;
  m.aus = {"AU1"};
  m.base_dir = dir.string();
  for (const char* n : {"small.pgm", "edge.pgm", "ok.ppm", "trunc.pgm", "gone.pgm"}) {
    SampleRecord r;
    r.image = n;
    r.subject = n;
    m.records.push_back(r);
  }
  auto res = clean_filter(m, 64);
  REQUIRE(res.kept.records.size() == 2);
  CHECK(res.kept.records[0].image == "edge.pgm");
  CHECK(res.kept.records[1].image == "ok.ppm");
  REQUIRE(res.dropped.size() == 3);
  CHECK(res.dropped[0].image == "small.pgm");
  CHECK(res.dropped[0].reason.find("too small") == 0);
  CHECK(res.dropped[1].reason.find("corrupt") == 0);
  CHECK(res.dropped[2].reason.find("corrupt") == 0);
  fs::remove_all(dir);
}

TEST_CASE("synthetic corpus") {
  auto a = synth_corpus(5, 30), b = synth_corpus(5, 30), c = synth_corpus(6, 30);
  CHECK(a.images == b.images);
  CHECK(format_manifest(a.manifest) == format_manifest(b.manifest));
  CHECK(a.images != c.images);
  a.manifest.validate();
  CHECK(a.manifest.aus.size() == 4);

  // Neutral faces of a subject are all identical, and differ from expressive ones.
  const auto g = subject_geometry(5, 2);
  auto neutral = render_face(g, {0, 0, 0, 0}, 32);
  CHECK(render_face(g, {0, 0, 0, 0}, 32) == neutral);
  for (int au = 0; au < 4; ++au) {
    std::array<int, 4> l{0, 0, 0, 0};
    l[au] = 5;
    CHECK(render_face(g, l, 32) != neutral);
  }
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    const auto& r = a.manifest.records[i];
    const auto& in = *r.intensity;
    if (std::all_of(in.begin(), in.end(), [](int v) { return v == 0; })) {
      const auto sid = std::stoul(r.subject.substr(1));
      CHECK(a.images[i] == render_face(subject_geometry(5, sid), {0, 0, 0, 0}, 32));
    }
    for (std::size_t k = 0; k < 4; ++k) CHECK((*r.occurrence)[k] == (in[k] > 0 ? 1 : 0));
  }

  auto d = intensity_distribution(0.55, 0.5);
  double total = 0;
  for (double p : d) total += p;
  CHECK(total == doctest::Approx(1.0));
  CHECK(d[1] / d[2] == doctest::Approx(2.0));
}

TEST_CASE("synthetic AU rates follow the generator") {
  SynthOptions o;
  o.image_size = 8;  // pixels are irrelevant here
  auto big = synth_corpus(11, 10000, o);
  for (std::size_t a = 0; a < 4; ++a) {
    double pos = 0;
    for (const auto& r : big.manifest.records) pos += (*r.occurrence)[a];
    CHECK(std::abs(pos / 10000 - 0.45) <= 0.015);
  }
}

TEST_CASE("corpus on disk") {
  auto dir = scratch_dir("synth");
  auto c = synth_corpus(1, 5);
  const auto path = write_corpus(c, dir.string());
  auto m = read_manifest(path);
  REQUIRE(m.records.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(read_image(m.image_path(m.records[i])) == c.images[i]);
  fs::remove_all(dir);
}
