#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maeface/data/manifest.hpp"

namespace maeface {

// Per-AU values of one metric. A null value is undefined (flagged); a set
// flag with a value marks a convention (F1 = 0 with no positives at all).
struct MetricColumn {
  std::string name;
  std::vector<std::optional<double>> values;
  std::vector<char> flagged;

  // Mean over non-null values; null when every value is null.
  std::optional<double> average() const;
};

struct MetricsReport {
  std::string task;
  std::string dataset;
  int fold = -1;  // -1: not a fold; -2: average over folds
  double threshold = 0.5;
  std::size_t samples = 0;
  std::vector<std::string> aus;
  std::vector<MetricColumn> columns;

  const MetricColumn& column(const std::string& name) const;
  bool has(const std::string& name) const;

  // One row per AU plus an "Avg." row.
  std::string to_csv() const;
  // AU columns with Avg. last, one row per metric.
  std::string to_table() const;
};

struct F1Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision() const;
  double recall() const;
  double f1() const;  // 0 when tp + fp + fn = 0
  bool degenerate() const { return tp + fp + fn == 0; }
};

// pred/gt are [n, num_aus] row-major bits.
std::vector<F1Counts> f1_counts(std::span<const int> pred, std::span<const int> gt, std::size_t num_aus);
MetricsReport f1_scores(std::span<const int> pred, std::span<const int> gt, const std::vector<std::string>& aus);

struct IccResult {
  std::optional<double> value;  // null when undefined
  double bms = 0;
  double ems = 0;
};

// Two-way mixed, single rater, consistency: (BMS - EMS) / (BMS + EMS) for
// two raters. Throws DomainError for fewer than 2 targets.
IccResult icc31(std::span<const double> pred, std::span<const double> gt);

struct ErrorPair {
  std::vector<double> mse;
  std::vector<double> mae;
};
ErrorPair mse_mae(std::span<const double> pred, std::span<const double> gt, std::size_t num_aus);

// Thresholds probabilities at `threshold` and scores against occurrence bits.
MetricsReport detection_report(std::span<const double> probs, std::span<const int> gt, const std::vector<std::string>& aus,
                               double threshold = 0.5);
// pred on the 0-5 scale; ICC, MSE and MAE per AU. ICC is a flagged null for
// an AU whose labels are constant.
MetricsReport intensity_report(std::span<const double> pred, std::span<const int> gt, const std::vector<std::string>& aus);

// Per-AU mean of per-fold values (null where every fold is null).
MetricsReport average_reports(const std::vector<MetricsReport>& folds);

struct LabelStats {
  std::size_t samples = 0;
  std::size_t unlabeled = 0;
  std::vector<std::string> aus;
  std::vector<std::size_t> positives;
  std::vector<double> rates;
  // (bitmask of present AUs, count), count descending then mask ascending.
  std::vector<std::pair<std::uint64_t, std::size_t>> combinations;
  double frac_below_50 = 0;  // of combinations
  double frac_above_1000 = 0;

  std::string to_csv() const;
  std::string to_table() const;
};

// Occurrence bits, else intensity > 0, per record.
LabelStats label_stats(const Manifest& m);

struct FoldAssignment {
  std::size_t k = 0;
  std::map<std::string, std::size_t> fold_of;     // subject -> fold
  std::vector<std::vector<std::string>> subjects;  // fold -> sorted subjects

  std::string to_csv() const;
};

// Shuffles the sorted subject list with the seed, then deals round-robin.
// Throws DomainError if there are fewer subjects than folds.
FoldAssignment kfold_by_subject(const Manifest& m, std::size_t k, std::uint64_t seed);

}  // namespace maeface
