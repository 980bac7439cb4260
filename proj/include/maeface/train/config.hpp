#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "maeface/losses/losses.hpp"
#include "maeface/vitmae/config.hpp"

namespace maeface {

// Hyper-parameters of one training run. Learning rates are per-256 reference
// rates; the peak is base_lr * batch_size / 256 with batch_size the
// effective batch (micro-batches x accum_steps).
struct TrainConfig {
  Task task = Task::pretrain;
  std::size_t epochs = 100;
  std::size_t warmup_epochs = 5;
  double base_lr = 1.5e-4;
  std::size_t batch_size = 64;
  std::size_t accum_steps = 1;  // batch_size is split into this many micro-batches
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  double min_lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double drop_path_rate = 0.0;
  double mixup_alpha = 0.0;
  double cutmix_alpha = 0.0;
  double randaug_magnitude = 0.0;
  double randaug_prob = 0.0;
  double label_smoothing = 0.0;
  double crop_scale_min = 1.0;  // pre-training random crop, area fraction
  Reduction reduction = Reduction::mean;
  LossFlavor loss = LossFlavor::l1;
  bool freeze_encoder = false;
  std::size_t eval_every = 1;         // epochs; 0 = only at the end
  std::size_t checkpoint_every = 0;   // steps; 0 = only at the end
  double threshold = 0.5;

  // 800 epochs, 40 warmup, 1.5e-4, batch 4096, wd 0.05.
  static TrainConfig paper_pretrain();
  // 20 epochs, 10 warmup, batch 512, drop path 0.1, RandAug(9, 0.5); detection
  // adds mixup 0.2 and cutmix 0.75. base_lr from paper_base_lr.
  static TrainConfig paper_finetune(Task task, std::string_view dataset);
  // Small-batch settings for the desk model on the synthetic corpus.
  static TrainConfig desk_pretrain();
  static TrainConfig desk_finetune(Task task);

  double peak_lr() const { return base_lr * double(batch_size) / 256.0; }
  std::size_t micro_batch() const { return batch_size / accum_steps; }

  void validate() const;  // throws ConfigError
  std::string to_text() const;
  std::map<std::string, std::string> apply(const std::map<std::string, std::string>& kv);

  bool operator==(const TrainConfig&) const = default;
};

// Fine-tuning base rates by dataset; ConfigError for unknown pairs.
double paper_base_lr(Task task, std::string_view dataset);

}  // namespace maeface
