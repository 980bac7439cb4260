#include "maeface/train/config.hpp"

#include <sstream>

#include "maeface/error.hpp"

namespace maeface {

TrainConfig TrainConfig::paper_pretrain() {
  TrainConfig c;
  c.task = Task::pretrain;
  c.epochs = 800;
  c.warmup_epochs = 40;
  c.base_lr = 1.5e-4;
  c.batch_size = 4096;
  c.weight_decay = 0.05;
  c.beta2 = 0.95;
  c.crop_scale_min = 0.6;
  return c;
}

double paper_base_lr(Task task, std::string_view dataset) {
  if (task == Task::detect) {
    if (dataset == "BP4D") return 1e-4;
    if (dataset == "BP4D+") return 2e-4;
    if (dataset == "DISFA") return 2e-4;
  } else if (task == Task::intensity) {
    if (dataset == "BP4D") return 3e-5;
    if (dataset == "DISFA") return 1.5e-4;
  }
  throw ConfigError("no reference learning rate for " + std::string(task_name(task)) + " on '" + std::string(dataset) + "'");
}

TrainConfig TrainConfig::paper_finetune(Task task, std::string_view dataset) {
  if (task == Task::pretrain) throw ConfigError("paper_finetune: task must be detect or intensity");
  TrainConfig c;
  c.task = task;
  c.epochs = 20;
  c.warmup_epochs = 10;
  c.base_lr = paper_base_lr(task, dataset);
  c.batch_size = 512;
  c.weight_decay = 0.05;
  c.beta2 = 0.999;
  c.drop_path_rate = 0.1;
  c.randaug_magnitude = 9;
  c.randaug_prob = 0.5;
  if (task == Task::detect) {
    c.mixup_alpha = 0.2;
    c.cutmix_alpha = 0.75;
  }
  return c;
}

TrainConfig TrainConfig::desk_pretrain() {
  TrainConfig c = paper_pretrain();
  c.epochs = 20;
  c.warmup_epochs = 2;
  c.batch_size = 64;
  c.base_lr = 1.5e-3;
  return c;
}

TrainConfig TrainConfig::desk_finetune(Task task) {
  TrainConfig c = paper_finetune(task, task == Task::detect ? "BP4D" : "DISFA");
  c.epochs = 30;
  c.warmup_epochs = 5;
  c.batch_size = 32;
  c.base_lr = 1e-2;
  // 200 images for 30 epochs: regularizers only slow the head down.
  c.drop_path_rate = 0;
  c.mixup_alpha = 0;
  c.cutmix_alpha = 0;
  c.randaug_prob = 0;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (epochs == 0) fail("epochs must be at least 1");
  if (warmup_epochs > epochs) fail("warmup_epochs exceeds epochs");
  if (batch_size == 0) fail("batch_size must be at least 1");
  if (accum_steps == 0 || batch_size % accum_steps != 0) fail("batch_size must be a multiple of accum_steps");
  for (double r : {base_lr, weight_decay, min_lr, mixup_alpha, cutmix_alpha, randaug_prob, label_smoothing, adam_eps}) {
    if (!(r >= 0.0)) fail("rates must be non-negative");
  }
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) fail("drop_path_rate must lie in [0, 1)");
  if (!(randaug_magnitude >= 0.0 && randaug_magnitude <= 10.0)) fail("randaug_magnitude must lie in [0, 10]");
  if (randaug_prob > 1.0) fail("randaug_prob must lie in [0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("adam betas must lie in [0, 1)");
  if (!(crop_scale_min > 0.0 && crop_scale_min <= 1.0)) fail("crop_scale_min must lie in (0, 1]");
  if (label_smoothing >= 1.0) fail("label_smoothing must be below 1");
  if (!(threshold > 0.0 && threshold < 1.0)) fail("threshold must lie in (0, 1)");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "task = " << task_name(task) << '\n'
     << "epochs = " << epochs << '\n'
     << "warmup_epochs = " << warmup_epochs << '\n'
     << "base_lr = " << base_lr << '\n'
     << "batch_size = " << batch_size << '\n'
     << "accum_steps = " << accum_steps << '\n'
     << "weight_decay = " << weight_decay << '\n'
     << "seed = " << seed << '\n'
     << "min_lr = " << min_lr << '\n'
     << "beta1 = " << beta1 << '\n'
     << "beta2 = " << beta2 << '\n'
     << "adam_eps = " << adam_eps << '\n'
     << "drop_path_rate = " << drop_path_rate << '\n'
     << "mixup_alpha = " << mixup_alpha << '\n'
     << "cutmix_alpha = " << cutmix_alpha << '\n'
     << "randaug_magnitude = " << randaug_magnitude << '\n'
     << "randaug_prob = " << randaug_prob << '\n'
     << "label_smoothing = " << label_smoothing << '\n'
     << "crop_scale_min = " << crop_scale_min << '\n'
     << "reduction = " << reduction_name(reduction) << '\n'
     << "loss = " << flavor_name(loss) << '\n'
     << "freeze_encoder = " << (freeze_encoder ? "true" : "false") << '\n'
     << "eval_every = " << eval_every << '\n'
     << "checkpoint_every = " << checkpoint_every << '\n'
     << "threshold = " << threshold << '\n';
  return os.str();
}

std::map<std::string, std::string> TrainConfig::apply(const std::map<std::string, std::string>& kv) {
  std::map<std::string, std::string> rest;
  for (const auto& [k, v] : kv) {
    if (k == "task") task = parse_task(v);
    else if (k == "epochs") epochs = kv_size(k, v);
    else if (k == "warmup_epochs") warmup_epochs = kv_size(k, v);
    else if (k == "base_lr") base_lr = kv_double(k, v);
    else if (k == "batch_size") batch_size = kv_size(k, v);
    else if (k == "accum_steps") accum_steps = kv_size(k, v);
    else if (k == "weight_decay") weight_decay = kv_double(k, v);
    else if (k == "seed") seed = kv_size(k, v);
    else if (k == "min_lr") min_lr = kv_double(k, v);
    else if (k == "beta1") beta1 = kv_double(k, v);
    else if (k == "beta2") beta2 = kv_double(k, v);
    else if (k == "adam_eps") adam_eps = kv_double(k, v);
    else if (k == "drop_path_rate") drop_path_rate = kv_double(k, v);
    else if (k == "mixup_alpha") mixup_alpha = kv_double(k, v);
    else if (k == "cutmix_alpha") cutmix_alpha = kv_double(k, v);
    else if (k == "randaug_magnitude") randaug_magnitude = kv_double(k, v);
    else if (k == "randaug_prob") randaug_prob = kv_double(k, v);
    else if (k == "label_smoothing") label_smoothing = kv_double(k, v);
    else if (k == "crop_scale_min") crop_scale_min = kv_double(k, v);
    else if (k == "reduction") reduction = parse_reduction(v);
    else if (k == "loss") loss = parse_flavor(v);
    else if (k == "freeze_encoder") freeze_encoder = kv_bool(k, v);
    else if (k == "eval_every") eval_every = kv_size(k, v);
    else if (k == "checkpoint_every") checkpoint_every = kv_size(k, v);
    else if (k == "threshold") threshold = kv_double(k, v);
    else rest[k] = v;
  }
  return rest;
}

}  // namespace maeface
