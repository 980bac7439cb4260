#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "maeface/data/manifest.hpp"
#include "maeface/data/synth.hpp"
#include "maeface/losses/losses.hpp"
#include "maeface/vitmae/config.hpp"

namespace maeface {

// Decoded images at model resolution, with their labels.
struct Dataset {
  std::string name;
  std::vector<std::string> aus;
  std::vector<Tensor<float>> images;  // [C, S, S] in [0, 1]
  std::vector<AULabels> labels;
  std::vector<std::string> subjects;

  std::size_t size() const { return images.size(); }
  bool has(LabelKind kind) const;  // every sample carries the field
};

// Converts channels (gray <-> RGB) and resizes to image_size when needed.
Tensor<float> prepare_image(const Image& image, const ModelConfig& config);

// Throws DataError naming the first unreadable image.
Dataset load_dataset(const Manifest& manifest, const ModelConfig& config);
Dataset dataset_from_corpus(const SynthCorpus& corpus, const ModelConfig& config);
Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

// Throws DataError unless every sample carries labels for `task`.
void require_labels(const Dataset& data, Task task);

}  // namespace maeface
