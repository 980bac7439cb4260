#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "maeface/data/image.hpp"
#include "maeface/data/manifest.hpp"

namespace maeface {

// Cartoon faces with four geometric action units:
//   AU1 brow raise   brows move up by 0.06 * size * l/5
//   AU2 eye widen    eye radius scales by 1 + 0.4 * l/5
//   AU3 lip pull     mouth corners curve up in proportion to l/5
//   AU4 mouth open   lip aperture grows in proportion to l/5
// Subjects differ in head shape, tone and feature placement; a record's
// pixels depend only on its subject and its four intensities.
struct SynthOptions {
  std::size_t image_size = 32;
  std::size_t num_aus = 4;  // 1..4
  std::size_t num_subjects = 20;
  std::size_t first_subject = 0;  // subject ids start here, for disjoint pools
  double p_zero = 0.55;
  double tail_q = 0.7;  // P(l = k) proportional to q^(k-1) for k = 1..5
  std::string dataset = "synthetic";
};

// P(l = k) for k = 0..5.
std::array<double, 6> intensity_distribution(double p_zero, double tail_q);

struct FaceGeometry {
  double cx, cy, ax, ay;      // head ellipse, unit coordinates
  double skin, background, ink;
  double eye_dx, eye_y, eye_r;
  double brow_gap, brow_half, brow_thick;
  double mouth_y, mouth_half;
};

FaceGeometry subject_geometry(std::uint64_t seed, std::size_t subject);
Image render_face(const FaceGeometry& g, const std::array<int, 4>& intensity, std::size_t image_size);
Landmarks face_landmarks(const FaceGeometry& g, const std::array<int, 4>& intensity, std::size_t image_size);
BBox face_bbox(const FaceGeometry& g, std::size_t image_size);

struct SynthCorpus {
  Manifest manifest;
  std::vector<Image> images;  // parallel to manifest.records
};

SynthCorpus synth_corpus(std::uint64_t seed, std::size_t count, const SynthOptions& options = {});

// Writes images/<name>.pgm and the manifest under dir; returns the manifest
// path.
std::string write_corpus(const SynthCorpus& corpus, const std::string& dir, const std::string& manifest_name = "manifest.jsonl");

}  // namespace maeface
