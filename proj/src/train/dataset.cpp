#include "maeface/train/dataset.hpp"

#include <algorithm>

#include "maeface/data/geometry.hpp"
#include "maeface/data/image.hpp"
#include "maeface/error.hpp"

namespace maeface {

bool Dataset::has(LabelKind kind) const {
  return std::all_of(labels.begin(), labels.end(), [&](const AULabels& l) {
    return kind == LabelKind::occurrence ? l.occurrence.has_value() : l.intensity.has_value();
  });
}

Tensor<float> prepare_image(const Image& image, const ModelConfig& config) {
  Tensor<float> t = to_tensor(image);
  const std::size_t h = image.height, w = image.width;
  if (image.channels != config.channels) {
    Tensor<float> c({config.channels, h, w});
    if (image.channels == 1) {
      for (std::size_t ch = 0; ch < config.channels; ++ch) std::copy(t.raw(), t.raw() + h * w, c.raw() + ch * h * w);
    } else {
      // ITU-R 601 luma
      for (std::size_t i = 0; i < h * w; ++i) {
        c[i] = 0.299f * t[i] + 0.587f * t[h * w + i] + 0.114f * t[2 * h * w + i];
      }
    }
    t = std::move(c);
  }
  if (h != config.image_size || w != config.image_size) t = resize_bilinear(t, config.image_size, config.image_size);
  return t;
}

namespace {

void add_sample(Dataset& d, const SampleRecord& r, const Image& image, const ModelConfig& config) {
  d.images.push_back(prepare_image(image, config));
  d.labels.push_back(r.labels());
  d.subjects.push_back(r.subject);
}

}  // namespace

Dataset load_dataset(const Manifest& manifest, const ModelConfig& config) {
  Dataset d;
  d.name = manifest.dataset;
  d.aus = manifest.aus;
  for (const auto& r : manifest.records) add_sample(d, r, read_image(manifest.image_path(r)), config);
  return d;
}

Dataset dataset_from_corpus(const SynthCorpus& corpus, const ModelConfig& config) {
  Dataset d;
  d.name = corpus.manifest.dataset;
  d.aus = corpus.manifest.aus;
  for (std::size_t i = 0; i < corpus.images.size(); ++i) add_sample(d, corpus.manifest.records[i], corpus.images[i], config);
  return d;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset d;
  d.name = data.name;
  d.aus = data.aus;
  for (std::size_t i : indices) {
    if (i >= data.size()) throw ShapeError("subset: index out of range");
    d.images.push_back(data.images[i]);
    d.labels.push_back(data.labels[i]);
    d.subjects.push_back(data.subjects[i]);
  }
  return d;
}

void require_labels(const Dataset& data, Task task) {
  if (task == Task::pretrain) return;
  const LabelKind kind = task == Task::detect ? LabelKind::occurrence : LabelKind::intensity;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& l = data.labels[i];
    const bool ok = kind == LabelKind::occurrence ? l.occurrence.has_value() : l.intensity.has_value();
    if (!ok) {
      throw DataError(std::string(task_name(task)) + " task needs " +
                      (kind == LabelKind::occurrence ? "occurrence" : "intensity") + " labels; sample " +
                      std::to_string(i) + " (subject " + data.subjects[i] + ") has none");
    }
    l.validate(data.aus.size());
  }
}

}  // namespace maeface
