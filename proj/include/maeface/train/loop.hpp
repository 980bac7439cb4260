#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "maeface/metrics/metrics.hpp"
#include "maeface/train/config.hpp"
#include "maeface/train/dataset.hpp"
#include "maeface/train/optim.hpp"
#include "maeface/vitmae/weights.hpp"

namespace maeface {

struct TraceRow {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;
  std::vector<std::optional<double>> metrics;  // set on evaluation steps
};

// Averaged evaluation columns appended to trace rows.
std::vector<std::string> trace_metric_names(Task task);
std::string trace_header(Task task);
std::string format_trace_row(const TraceRow& row);

struct RunOptions {
  std::string out_dir;          // checkpoint, state and trace go here; empty writes nothing
  std::string resume;           // state archive of an interrupted run
  std::uint64_t stop_after = 0;  // stop once this many steps are done (0 = run to the end)
  std::function<void(const std::string&)> log;
};

struct RunResult {
  ModelWeights<float> weights;
  OptimState<float> optim;
  std::vector<TraceRow> trace;  // rows produced by this call
  std::vector<MetricsReport> evals;
  std::uint64_t steps_per_epoch = 0;
  std::uint64_t order_hash = 0;  // FNV-1a of the sample order consumed by this call
  bool completed = false;
};

inline constexpr const char* kCheckpointFile = "model.ckpt";
inline constexpr const char* kStateFile = "train.state";
inline constexpr const char* kTraceFile = "trace.csv";
inline constexpr const char* kMetricsFile = "metrics.csv";

std::uint64_t steps_per_epoch(std::size_t samples, const TrainConfig& config);

// Sample indices of global step `step`, from the epoch's seeded shuffle.
std::vector<std::size_t> batch_indices(std::size_t samples, const TrainConfig& config, std::uint64_t step);

// Masked reconstruction training. `init` must be a pretrain-task model.
RunResult pretrain_loop(ModelWeights<float> init, const Dataset& data, const TrainConfig& config,
                        const RunOptions& options = {});

// Supervised training of a detect/intensity model, evaluated on `eval` (if
// given) every eval_every epochs and at the end.
RunResult finetune_loop(ModelWeights<float> init, const Dataset& train, const Dataset* eval, const TrainConfig& config,
                        const RunOptions& options = {});

// Row-major [n, A]: probabilities for detection, 0-5 intensities.
std::vector<double> predict(const ModelWeights<float>& weights, const Dataset& data, std::size_t batch = 64);
MetricsReport evaluate(const ModelWeights<float>& weights, const Dataset& data, double threshold = 0.5,
                       std::size_t batch = 64);

// Training state: weights, Adam moments and the step counter.
void save_state(const std::string& path, const ModelWeights<float>& weights, const OptimState<float>& optim,
                const TrainConfig& config);
struct LoadedState {
  ModelWeights<float> weights;
  OptimState<float> optim;
  TrainConfig config;
};
LoadedState load_state(const std::string& path);

struct PartialPlan {
  std::size_t every_n = 1;
  std::size_t epochs = 0;
  Manifest subset;
  TrainConfig config;
};

// fraction in {0.1, 0.01, 0.005, 0.002, 0.001}: every round(1/fraction)-th
// frame per subject, trained for {200, 2000, 4000, 10000, 20000} epochs with
// the warmup share of `config` kept. Other fractions throw ConfigError.
PartialPlan partial_protocol(const Manifest& manifest, double fraction, const TrainConfig& config);

}  // namespace maeface
