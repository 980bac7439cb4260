#include "maeface/data/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "maeface/error.hpp"
#include "maeface/rng.hpp"

namespace maeface {

std::array<double, 6> intensity_distribution(double p_zero, double q) {
  if (!(p_zero >= 0 && p_zero <= 1) || !(q > 0 && q <= 1)) throw DomainError("intensity distribution parameters out of range");
  std::array<double, 6> p{};
  p[0] = p_zero;
  double z = 0;
  for (int k = 1; k <= 5; ++k) z += std::pow(q, k - 1);
  for (int k = 1; k <= 5; ++k) p[k] = (1 - p_zero) * std::pow(q, k - 1) / z;
  return p;
}

FaceGeometry subject_geometry(std::uint64_t seed, std::size_t subject) {
  auto rng = make_rng(seed, Stream::synth, 1, subject);
  auto u = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  FaceGeometry g;
  g.cx = 0.5 + u(-0.03, 0.03);
  g.cy = 0.52 + u(-0.03, 0.03);
  g.ax = 0.34 + u(-0.04, 0.04);
  g.ay = 0.42 + u(-0.04, 0.04);
  g.skin = u(0.55, 0.8);
  g.background = u(0.05, 0.15);
  g.ink = u(0.08, 0.2);
  g.eye_dx = 0.14 + u(-0.02, 0.02);
  g.eye_y = 0.42 + u(-0.02, 0.02);
  g.eye_r = 0.05 + u(-0.003, 0.003);
  g.brow_gap = 0.09 + u(-0.004, 0.004);
  g.brow_half = 0.075 + u(-0.01, 0.01);
  g.brow_thick = 0.03;
  g.mouth_y = 0.7 + u(-0.02, 0.02);
  g.mouth_half = 0.12 + u(-0.02, 0.02);
  return g;
}

namespace {

struct Pose {
  double brow_y, eye_r, lift, gap;
};

Pose pose_of(const FaceGeometry& g, const std::array<int, 4>& l) {
  Pose p;
  p.brow_y = g.eye_y - g.brow_gap - 0.06 * l[0] / 5.0;
  p.eye_r = g.eye_r * (1 + 0.4 * l[1] / 5.0);
  p.lift = 0.10 * l[2] / 5.0;
  p.gap = 0.12 * l[3] / 5.0;
  return p;
}

// Scene intensity at unit coordinates (u, v).
double shade(const FaceGeometry& g, const Pose& p, double u, double v) {
  const double hx = (u - g.cx) / g.ax, hy = (v - g.cy) / g.ay;
  if (hx * hx + hy * hy > 1) return g.background;
  for (double side : {-1.0, 1.0}) {
    const double ex = g.cx + side * g.eye_dx;
    const double dx = u - ex, dy = v - g.eye_y;
    if (dx * dx + dy * dy <= p.eye_r * p.eye_r) return g.ink;
    if (std::abs(u - ex) <= g.brow_half && std::abs(v - p.brow_y) <= g.brow_thick / 2) return g.ink + 0.1;
  }
  // Nose: short vertical stroke.
  if (std::abs(u - g.cx) <= 0.015 && v >= g.eye_y + 0.04 && v <= g.eye_y + 0.15) return g.skin - 0.2;
  const double mx = u - g.cx;
  if (std::abs(mx) <= g.mouth_half) {
    const double t = mx / g.mouth_half;
    const double center = g.mouth_y - p.lift * t * t;
    const double lip = 0.015;
    const double half_open = p.gap / 2 * (1 - t * t);
    const double dv = std::abs(v - center);
    if (dv <= half_open) return g.ink * 0.5;
    if (dv <= half_open + lip) return g.ink + 0.15;
  }
  return g.skin;
}

}  // namespace

Image render_face(const FaceGeometry& g, const std::array<int, 4>& intensity, std::size_t size) {
  const Pose p = pose_of(g, intensity);
  Image img(1, size, size);
  constexpr int ss = 4;
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      double acc = 0;
      for (int a = 0; a < ss; ++a) {
        for (int b = 0; b < ss; ++b) {
          const double u = (double(j) + (b + 0.5) / ss) / double(size);
          const double v = (double(i) + (a + 0.5) / ss) / double(size);
          acc += shade(g, p, u, v);
        }
      }
      img.at(0, i, j) = static_cast<std::uint8_t>(std::lround(std::clamp(acc / (ss * ss), 0.0, 1.0) * 255.0));
    }
  }
  return img;
}

Landmarks face_landmarks(const FaceGeometry& g, const std::array<int, 4>& intensity, std::size_t size) {
  const Pose p = pose_of(g, intensity);
  const double s = double(size);
  auto px = [s](double u, double v) { return Point{u * s - 0.5, v * s - 0.5}; };
  return {px(g.cx - g.eye_dx, g.eye_y), px(g.cx + g.eye_dx, g.eye_y), px(g.cx, g.eye_y + 0.15),
          px(g.cx - g.mouth_half, g.mouth_y - p.lift), px(g.cx + g.mouth_half, g.mouth_y - p.lift)};
}

BBox face_bbox(const FaceGeometry& g, std::size_t size) {
  const double s = double(size);
  const int x0 = static_cast<int>(std::floor((g.cx - g.ax) * s)), x1 = static_cast<int>(std::ceil((g.cx + g.ax) * s));
  const int y0 = static_cast<int>(std::floor((g.cy - g.ay) * s)), y1 = static_cast<int>(std::ceil((g.cy + g.ay) * s));
  return {x0, y0, x1 - x0, y1 - y0};
}

SynthCorpus synth_corpus(std::uint64_t seed, std::size_t count, const SynthOptions& o) {
  if (o.num_aus < 1 || o.num_aus > 4) throw DomainError("synth_corpus: num_aus must be 1..4");
  if (o.num_subjects < 1) throw DomainError("synth_corpus: need at least one subject");
  if (o.image_size < 8) throw DomainError("synth_corpus: image_size must be at least 8");
  const auto dist = intensity_distribution(o.p_zero, o.tail_q);
  std::discrete_distribution<int> level(dist.begin(), dist.end());

  SynthCorpus c;
  c.manifest.dataset = o.dataset;
  c.manifest.image_size = o.image_size;
  for (std::size_t a = 0; a < o.num_aus; ++a) c.manifest.aus.push_back("AU" + std::to_string(a + 1));
  std::vector<long> next_frame(o.num_subjects, 0);
  std::vector<FaceGeometry> geo;
  for (std::size_t s = 0; s < o.num_subjects; ++s) geo.push_back(subject_geometry(seed, o.first_subject + s));

  for (std::size_t i = 0; i < count; ++i) {
    auto rng = make_rng(seed, Stream::synth, 2, i);
    const std::size_t s = std::uniform_int_distribution<std::size_t>(0, o.num_subjects - 1)(rng);
    std::array<int, 4> l{0, 0, 0, 0};
    for (std::size_t a = 0; a < o.num_aus; ++a) l[a] = level(rng);

    SampleRecord r;
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.pgm", i);
    r.image = name;
    char subj[32];
    std::snprintf(subj, sizeof subj, "S%03zu", o.first_subject + s);
    r.subject = subj;
    r.frame = next_frame[s]++;
    r.landmarks = face_landmarks(geo[s], l, o.image_size);
    r.bbox = face_bbox(geo[s], o.image_size);
    r.intensity.emplace(l.begin(), l.begin() + static_cast<std::ptrdiff_t>(o.num_aus));
    r.occurrence.emplace();
    for (int v : *r.intensity) r.occurrence->push_back(v > 0 ? 1 : 0);
    c.images.push_back(render_face(geo[s], l, o.image_size));
    c.manifest.records.push_back(std::move(r));
  }
  return c;
}

std::string write_corpus(const SynthCorpus& corpus, const std::string& dir, const std::string& manifest_name) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  for (std::size_t i = 0; i < corpus.images.size(); ++i) {
    write_image(corpus.images[i], (fs::path(dir) / corpus.manifest.records[i].image).string());
  }
  const std::string path = (fs::path(dir) / manifest_name).string();
  write_manifest(corpus.manifest, path);
  return path;
}

}  // namespace maeface
