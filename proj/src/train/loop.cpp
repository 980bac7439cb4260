#include "maeface/train/loop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "maeface/error.hpp"
#include "maeface/rng.hpp"
#include "maeface/train/augment.hpp"
#include "maeface/vitmae/checkpoint.hpp"
#include "maeface/vitmae/model.hpp"
#include "maeface/vitmae/patch.hpp"

namespace fs = std::filesystem;

namespace maeface {

std::vector<std::string> trace_metric_names(Task task) {
  switch (task) {
    case Task::pretrain: return {};
    case Task::detect: return {"eval_f1"};
    case Task::intensity: return {"eval_icc", "eval_mse", "eval_mae"};
  }
  return {};
}

std::string trace_header(Task task) {
  std::string h = "step,epoch,lr,loss";
  for (const auto& n : trace_metric_names(task)) h += "," + n;
  return h;
}

std::string format_trace_row(const TraceRow& row) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%llu,%zu,%.17g,%.9g", static_cast<unsigned long long>(row.step), row.epoch, row.lr,
                row.loss);
  std::string s = buf;
  for (const auto& m : row.metrics) {
    s += ',';
    if (m) {
      std::snprintf(buf, sizeof buf, "%.9g", *m);
      s += buf;
    }
  }
  return s;
}

std::uint64_t steps_per_epoch(std::size_t samples, const TrainConfig& config) {
  if (samples == 0) throw DataError("training set is empty");
  return (samples + config.batch_size - 1) / config.batch_size;
}

std::vector<std::size_t> batch_indices(std::size_t samples, const TrainConfig& config, std::uint64_t step) {
  const std::uint64_t spe = steps_per_epoch(samples, config);
  const std::uint64_t epoch = step / spe, b = step % spe;
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(config.seed, Stream::shuffle, epoch);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t lo = b * config.batch_size, hi = std::min(samples, lo + config.batch_size);
  return {order.begin() + lo, order.begin() + hi};
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 1099511628211ull;
  }
}

struct Grads {
  double loss = 0;
  std::vector<std::vector<float>> g;
};

// Loss and gradients of one micro-batch, already scaled by its share.
using MicroStep = std::function<Grads(const ModelWeights<float>&, const std::vector<std::size_t>&, std::uint64_t step,
                                      std::size_t micro, double share)>;

Grads collect(BoundModel<float>& m, Var<float> loss, double share) {
  Tape<float>& tape = m.tape();
  const double value = double(loss.value().item());
  if (!std::isfinite(value)) return {value, {}};
  auto scaled = share == 1.0 ? loss : scale(loss, float(share));
  tape.backward(scaled);
  Grads out;
  out.loss = value * share;
  out.g.resize(m.vars().size());
  for (std::size_t i = 0; i < m.vars().size(); ++i) {
    if (m.vars()[i].requires_grad()) out.g[i] = m.grad(i);
  }
  return out;
}

std::string join_path(const std::string& dir, const char* file) { return (fs::path(dir) / file).string(); }

// Keeps trace rows before `step`, so a resumed run appends contiguously.
void truncate_trace(const std::string& path, const std::string& header, std::uint64_t step) {
  std::vector<std::string> keep;
  if (std::ifstream in(path); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) < step) keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  out << header << '\n';
  for (const auto& l : keep) out << l << '\n';
}

struct LoopSpec {
  Task task;
  const Dataset* train;
  const Dataset* eval = nullptr;
  MicroStep micro;
};

RunResult run_loop(ModelWeights<float> weights, const TrainConfig& cfg, const LoopSpec& spec, const RunOptions& opt) {
  cfg.validate();
  const std::size_t n = spec.train->size();
  RunResult res;
  res.steps_per_epoch = steps_per_epoch(n, cfg);
  const std::uint64_t spe = res.steps_per_epoch, total = cfg.epochs * spe;
  OptimState<float> optim = OptimState<float>::fresh(weights);
  if (!opt.resume.empty()) {
    LoadedState st = load_state(opt.resume);
    if (!(st.weights.config == weights.config)) throw ConfigError("resume: model configuration differs from the state file");
    if (!(st.config == cfg)) throw ConfigError("resume: training configuration differs from the state file");
    weights = std::move(st.weights);
    optim = std::move(st.optim);
  }
  const std::uint64_t start = optim.step;
  const std::uint64_t stop = opt.stop_after ? std::min(total, opt.stop_after) : total;

  std::ofstream trace;
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    const std::string tp = join_path(opt.out_dir, kTraceFile);
    truncate_trace(tp, trace_header(spec.task), start);
    trace.open(tp, std::ios::app);
  }
  auto checkpoint = [&] {
    if (opt.out_dir.empty()) return;
    save_weights(weights, join_path(opt.out_dir, kCheckpointFile));
    save_state(join_path(opt.out_dir, kStateFile), weights, optim, cfg);
  };

  const AdamW base{0, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps};
  const std::size_t micro = cfg.micro_batch();
  std::uint64_t hash = kFnvOffset;
  double epoch_loss = 0;
  std::size_t epoch_steps = 0;
  for (std::uint64_t step = start; step < stop; ++step) {
    const auto idx = batch_indices(n, cfg, step);
    for (auto i : idx) fnv_mix(hash, i);
    std::vector<std::vector<float>> grads(weights.params.size());
    double loss = 0;
    for (std::size_t k = 0, lo = 0; lo < idx.size(); ++k, lo += micro) {
      const std::vector<std::size_t> part(idx.begin() + lo, idx.begin() + std::min(idx.size(), lo + micro));
      Grads g = spec.micro(weights, part, step, k, double(part.size()) / double(idx.size()));
      if (!std::isfinite(g.loss)) throw NumericalError("non-finite loss at step " + std::to_string(step));
      loss += g.loss;
      for (std::size_t i = 0; i < grads.size(); ++i) {
        if (g.g[i].empty()) continue;
        if (grads[i].empty()) grads[i] = std::move(g.g[i]);
        else for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += g.g[i][j];
      }
    }
    AdamW hp = base;
    hp.lr = lr_at(cfg, step, spe);
    adamw_step(weights, grads, optim, hp);

    TraceRow row{step, std::size_t(step / spe), hp.lr, loss, {}};
    epoch_loss += loss;
    ++epoch_steps;
    const bool epoch_end = (step + 1) % spe == 0;
    const std::size_t epoch = step / spe;
    if (epoch_end && spec.eval) {
      const bool last = epoch + 1 == cfg.epochs;
      if (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0)) {
        MetricsReport r = evaluate(weights, *spec.eval, cfg.threshold);
        r.fold = -1;
        for (const auto& name : trace_metric_names(spec.task)) row.metrics.push_back(r.column(name.substr(5)).average());
        res.evals.push_back(std::move(r));
      } else {
        row.metrics.assign(trace_metric_names(spec.task).size(), std::nullopt);
      }
    } else {
      row.metrics.assign(trace_metric_names(spec.task).size(), std::nullopt);
    }
    if (trace.is_open()) trace << format_trace_row(row) << '\n' << std::flush;
    if (epoch_end && opt.log) {
      char buf[192];
      std::snprintf(buf, sizeof buf, "epoch %zu/%zu  step %llu  lr %.3e  loss %.5f", epoch + 1, cfg.epochs,
                    static_cast<unsigned long long>(step + 1), hp.lr, epoch_loss / double(epoch_steps));
      std::string line = buf;
      for (std::size_t i = 0; i < row.metrics.size(); ++i) {
        if (row.metrics[i]) {
          std::snprintf(buf, sizeof buf, "  %s %.4f", trace_metric_names(spec.task)[i].c_str(), *row.metrics[i]);
          line += buf;
        }
      }
      opt.log(line);
    }
    if (epoch_end) {
      epoch_loss = 0;
      epoch_steps = 0;
    }
    res.trace.push_back(std::move(row));
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < stop) checkpoint();
  }
  checkpoint();
  res.completed = optim.step >= total;
  res.order_hash = hash;
  res.weights = std::move(weights);
  res.optim = std::move(optim);
  if (res.completed && spec.eval && !opt.out_dir.empty() && !res.evals.empty()) {
    std::ofstream(join_path(opt.out_dir, kMetricsFile)) << res.evals.back().to_csv();
  }
  return res;
}

Tensor<float> patches_of(const std::vector<Tensor<float>>& images, std::size_t p) {
  std::vector<Tensor<float>> items;
  items.reserve(images.size());
  for (const auto& im : images) items.push_back(patchify(im, p));
  return stack<float>(items);
}

}  // namespace

RunResult pretrain_loop(ModelWeights<float> init, const Dataset& data, const TrainConfig& cfg, const RunOptions& opt) {
  if (init.config.task != Task::pretrain || cfg.task != Task::pretrain) {
    throw ConfigError("pretrain_loop needs a pretrain model and configuration");
  }
  if (data.size() == 0) throw DataError("pre-training set is empty");
  const ModelConfig mc = init.config;
  LoopSpec spec{Task::pretrain, &data, nullptr, {}};
  spec.micro = [&, mc](const ModelWeights<float>& w, const std::vector<std::size_t>& idx, std::uint64_t step,
                       std::size_t k, double share) {
    std::vector<Tensor<float>> imgs;
    std::vector<MaskPlan> plans;
    for (std::size_t s = 0; s < idx.size(); ++s) {
      const std::size_t slot = k * cfg.micro_batch() + s;
      const Tensor<float>& src = data.images[idx[s]];
      if (cfg.crop_scale_min < 1.0) {
        auto rng = make_rng(cfg.seed, Stream::augment, step, slot);
        imgs.push_back(random_resized_crop(src, cfg.crop_scale_min, rng));
      } else {
        imgs.push_back(src);
      }
      auto mrng = make_rng(cfg.seed, Stream::mask, step, slot);
      plans.push_back(sample_mask(mc.num_patches(), mc.mask_ratio, mrng));
    }
    const Tensor<float> x = patches_of(imgs, mc.patch_size);
    const auto targets = mc.norm_pix_target ? patch_normalize(x) : raw_targets(x);
    Tape<float> tape;
    BoundModel<float> m(tape, w, Trainable::all);
    auto dprng = make_rng(cfg.seed, Stream::drop_path, step, k);
    const DropPath dp{cfg.drop_path_rate, &dprng};
    auto latent = encoder_forward(m, tape.constant(x), plans, dp);
    auto pred = decoder_forward(m, latent, plans, dp);
    return collect(m, loss_pretrain(pred, targets, plans, cfg.loss, cfg.reduction), share);
  };
  return run_loop(std::move(init), cfg, spec, opt);
}

RunResult finetune_loop(ModelWeights<float> init, const Dataset& train, const Dataset* eval, const TrainConfig& cfg,
                        const RunOptions& opt) {
  const Task task = cfg.task;
  if (task == Task::pretrain) throw ConfigError("finetune_loop needs task detect or intensity");
  if (init.config.task != task) {
    throw ConfigError("model task " + std::string(task_name(init.config.task)) + " differs from training task " +
                      std::string(task_name(task)));
  }
  if (train.size() == 0) throw DataError("training set is empty");
  require_labels(train, task);
  if (eval) require_labels(*eval, task);
  if (train.aus.size() != init.config.num_aus) throw DataError("dataset AU count differs from the model head");
  const ModelConfig mc = init.config;
  const LabelKind kind = task == Task::detect ? LabelKind::occurrence : LabelKind::intensity;
  const Trainable mode = cfg.freeze_encoder ? Trainable::head_only : Trainable::all;
  LoopSpec spec{task, &train, eval, {}};
  spec.micro = [&, mc](const ModelWeights<float>& w, const std::vector<std::size_t>& idx, std::uint64_t step,
                       std::size_t k, double share) {
    std::vector<Tensor<float>> imgs;
    std::vector<AULabels> labels;
    for (std::size_t s = 0; s < idx.size(); ++s) {
      const std::size_t slot = k * cfg.micro_batch() + s;
      auto rng = make_rng(cfg.seed, Stream::augment, step, slot);
      imgs.push_back(randaug_light(train.images[idx[s]], cfg.randaug_magnitude, cfg.randaug_prob, rng));
      labels.push_back(train.labels[idx[s]]);
    }
    LabelBatch lb = make_label_batch(labels, mc.num_aus, kind);
    if (task == Task::detect) {
      auto mrng = make_rng(cfg.seed, Stream::mixup, step, k);
      const bool use_mix = cfg.mixup_alpha > 0, use_cut = cfg.cutmix_alpha > 0;
      if (use_mix && use_cut) {
        if (uniform01(mrng) < 0.5) cutmix(imgs, lb, cfg.cutmix_alpha, mrng);
        else mixup(imgs, lb, cfg.mixup_alpha, mrng);
      } else if (use_cut) {
        cutmix(imgs, lb, cfg.cutmix_alpha, mrng);
      } else if (use_mix) {
        mixup(imgs, lb, cfg.mixup_alpha, mrng);
      }
      if (cfg.label_smoothing > 0) {
        for (auto& t : lb.target) t = t * (1.0 - cfg.label_smoothing) + 0.5 * cfg.label_smoothing;
      }
    }
    const Tensor<float> x = patches_of(imgs, mc.patch_size);
    Tape<float> tape;
    BoundModel<float> m(tape, w, mode);
    auto dprng = make_rng(cfg.seed, Stream::drop_path, step, k);
    const DropPath dp{cfg.drop_path_rate, &dprng};
    auto out = classifier_forward(m, tape.constant(x), dp);
    auto loss = task == Task::detect ? loss_detection(out, lb, cfg.reduction)
                                     : loss_intensity(sigmoid(out), lb, cfg.reduction);
    return collect(m, loss, share);
  };
  return run_loop(std::move(init), cfg, spec, opt);
}

std::vector<double> predict(const ModelWeights<float>& weights, const Dataset& data, std::size_t batch) {
  const ModelConfig& mc = weights.config;
  if (mc.task == Task::pretrain) throw ConfigError("predict needs a detect or intensity model");
  std::vector<double> out;
  out.reserve(data.size() * mc.num_aus);
  for (std::size_t lo = 0; lo < data.size(); lo += batch) {
    const std::size_t hi = std::min(data.size(), lo + batch);
    const std::vector<Tensor<float>> imgs(data.images.begin() + lo, data.images.begin() + hi);
    Tape<float> tape;
    BoundModel<float> m(tape, weights, Trainable::none);
    auto logits = classifier_forward(m, tape.constant(patches_of(imgs, mc.patch_size)));
    const Tensor<float> probs = sigmoid(logits).value();
    const Tensor<float> values = mc.task == Task::intensity ? denormalize_intensity(probs) : probs;
    for (float v : values.storage()) out.push_back(double(v));
  }
  return out;
}

MetricsReport evaluate(const ModelWeights<float>& weights, const Dataset& data, double threshold, std::size_t batch) {
  const Task task = weights.config.task;
  require_labels(data, task);
  if (data.size() == 0) throw DataError("evaluation set is empty");
  const std::vector<double> pred = predict(weights, data, batch);
  std::vector<int> gt;
  for (const auto& l : data.labels) {
    const auto& v = task == Task::detect ? *l.occurrence : *l.intensity;
    gt.insert(gt.end(), v.begin(), v.end());
  }
  MetricsReport r = task == Task::detect ? detection_report(pred, gt, data.aus, threshold) : intensity_report(pred, gt, data.aus);
  r.dataset = data.name;
  return r;
}

void save_state(const std::string& path, const ModelWeights<float>& weights, const OptimState<float>& optim,
                const TrainConfig& config) {
  Archive a;
  a.header = "step = " + std::to_string(optim.step) + "\n---\n" + weights.config.to_text() + "---\n" + config.to_text();
  for (std::size_t i = 0; i < weights.params.size(); ++i) {
    const auto& p = weights.params[i];
    const auto kind = static_cast<std::uint8_t>(p.kind);
    a.entries.push_back({"w." + p.name, kind, p.value.shape(), p.value.storage()});
    if (!optim.m[i].empty()) {
      a.entries.push_back({"m." + p.name, kind, p.value.shape(), optim.m[i]});
      a.entries.push_back({"v." + p.name, kind, p.value.shape(), optim.v[i]});
    }
  }
  write_archive(path, kStateMagic, a);
}

LoadedState load_state(const std::string& path) {
  const Archive a = read_archive(path, kStateMagic);
  const auto s1 = a.header.find("\n---\n");
  const auto s2 = a.header.find("---\n", s1 + 5);
  if (s1 == std::string::npos || s2 == std::string::npos) throw CheckpointError(path + ": malformed state header");
  LoadedState st;
  try {
    const auto head = parse_key_values(a.header.substr(0, s1));
    st.weights.config = ModelConfig::from_text(a.header.substr(s1 + 5, s2 - s1 - 5));
    auto rest = st.config.apply(parse_key_values(a.header.substr(s2 + 4)));
    if (!rest.empty()) throw ConfigError("unknown key '" + rest.begin()->first + "'");
    st.optim.step = kv_size("step", head.at("step"));
  } catch (const std::exception& e) {
    throw CheckpointError(path + ": bad state header: " + e.what());
  }
  for (const auto& spec : param_specs(st.weights.config)) {
    const ArchiveEntry* w = a.find("w." + spec.name);
    if (!w || w->shape != spec.shape) throw CheckpointError(path + ": state lacks weights for " + spec.name);
    st.weights.params.push_back({spec.name, spec.kind, Tensor<float>(spec.shape, w->data)});
    const ArchiveEntry* m = a.find("m." + spec.name);
    const ArchiveEntry* v = a.find("v." + spec.name);
    st.optim.m.push_back(m ? m->data : std::vector<float>{});
    st.optim.v.push_back(v ? v->data : std::vector<float>{});
  }
  return st;
}

PartialPlan partial_protocol(const Manifest& manifest, double fraction, const TrainConfig& config) {
  struct Row {
    double fraction;
    std::size_t every_n, epochs;
  };
  static constexpr Row table[] = {{0.1, 10, 200}, {0.01, 100, 2000}, {0.005, 200, 4000}, {0.002, 500, 10000}, {0.001, 1000, 20000}};
  for (const auto& r : table) {
    if (std::abs(fraction - r.fraction) <= 1e-9 * r.fraction) {
      PartialPlan p;
      p.every_n = r.every_n;
      p.epochs = r.epochs;
      p.subset = subsample_every_n(manifest, r.every_n);
      p.config = config;
      p.config.epochs = r.epochs;
      p.config.warmup_epochs = std::size_t(std::llround(double(config.warmup_epochs) * double(r.epochs) / double(config.epochs)));
      return p;
    }
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", fraction);
  throw ConfigError(std::string("unsupported fraction ") + buf + " (expected 0.1, 0.01, 0.005, 0.002 or 0.001)");
}

}  // namespace maeface
