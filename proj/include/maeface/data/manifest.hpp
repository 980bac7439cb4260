#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maeface/data/geometry.hpp"
#include "maeface/losses/losses.hpp"

namespace maeface {

// Landmark order: left eye, right eye, nose, left mouth corner, right mouth
// corner.
using Landmarks = std::array<Point, 5>;

struct SampleRecord {
  std::string image;  // relative to the manifest directory unless absolute
  std::string subject;
  long frame = 0;
  std::optional<Landmarks> landmarks;
  std::optional<BBox> bbox;
  std::optional<std::vector<int>> occurrence;
  std::optional<std::vector<int>> intensity;
  std::optional<std::vector<int>> valid;
  // Unrecognized fields, kept as serialized JSON values.
  std::map<std::string, std::string> extra;

  AULabels labels() const;
  bool operator==(const SampleRecord&) const = default;
};

struct Manifest {
  std::string dataset;
  std::vector<std::string> aus;
  std::size_t image_size = 0;  // 0 when images vary in size
  std::vector<SampleRecord> records;
  // Directory image paths resolve against; not serialized.
  std::string base_dir;

  std::size_t num_aus() const { return aus.size(); }
  std::string image_path(const SampleRecord& r) const;
  bool has_intensity() const;
  bool has_occurrence() const;
  // Throws DataError on label length/range violations or duplicate
  // (subject, frame) pairs.
  void validate() const;
  std::vector<std::string> subjects() const;  // sorted, unique
};

inline constexpr const char* kManifestFormat = "maeface-manifest";
inline constexpr int kManifestVersion = 1;

// JSON lines: a header object then one object per record. Errors name the
// offending line.
Manifest read_manifest(const std::string& path);
Manifest parse_manifest(const std::string& text, const std::string& origin = "<memory>");
std::string format_manifest(const Manifest& m);
void write_manifest(const Manifest& m, const std::string& path);

// Per subject, frames in index order, keeps every n-th starting with the
// first; surviving records keep their manifest order.
Manifest subsample_every_n(const Manifest& m, std::size_t n);

struct DropEntry {
  std::string image;
  std::string reason;
};

struct CleanResult {
  Manifest kept;
  std::vector<DropEntry> dropped;
};

// Drops unreadable images and those with min(H, W) < min_side.
CleanResult clean_filter(const Manifest& m, std::size_t min_side = 64);

// Records whose subject is in `subjects`.
Manifest select_subjects(const Manifest& m, const std::vector<std::string>& subjects);

}  // namespace maeface
