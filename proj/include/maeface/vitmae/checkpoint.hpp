#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "maeface/vitmae/weights.hpp"

namespace maeface {

// Little-endian container of named f32 tensors:
//   magic[4] | u32 version | u32 len + header text | u32 count |
//   count x (u16 len + name | u8 kind | u8 rank | u32 dims[rank] | u64 offset) |
//   u64 total | f32 data[total] | u32 crc32 of all preceding bytes
// Files are written to "<path>.tmp" and renamed into place.
struct ArchiveEntry {
  std::string name;
  std::uint8_t kind = 0;
  Shape shape;
  std::vector<float> data;
};

struct Archive {
  std::string header;
  std::vector<ArchiveEntry> entries;

  const ArchiveEntry* find(const std::string& name) const;
};

using Magic = std::array<char, 4>;
inline constexpr Magic kWeightsMagic{'M', 'A', 'E', 'F'};
inline constexpr Magic kStateMagic{'M', 'A', 'E', 'S'};
inline constexpr std::uint32_t kArchiveVersion = 1;

void write_archive(const std::string& path, const Magic& magic, const Archive& archive);
// Throws CheckpointError on bad magic, version, truncation or checksum.
Archive read_archive(const std::string& path, const Magic& magic);

// Per-parameter outcome of matching a checkpoint against a model.
struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // expected by the model, absent in file
  std::vector<std::string> unexpected;  // in file, unknown to the model
  std::vector<std::string> mismatched;  // present in both, shapes differ

  bool clean() const { return missing.empty() && unexpected.empty() && mismatched.empty(); }
  std::string describe() const;
};

template <typename T>
void save_weights(const ModelWeights<T>& weights, const std::string& path);

// Full checkpoint; the model config comes from the file header.
template <typename T>
ModelWeights<T> load_weights(const std::string& path);

// Overwrites the encoder parameters of `target` from a checkpoint of any
// task, leaving decoder/head untouched. All-or-nothing: on any missing or
// mismatched encoder tensor `target` is unchanged and CheckpointError carries
// the report.
template <typename T>
LoadReport load_encoder_subset(ModelWeights<T>& target, const std::string& path);

}  // namespace maeface
