#include "maeface/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "maeface/error.hpp"
#include "maeface/rng.hpp"

namespace maeface {

std::optional<double> MetricColumn::average() const {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / double(n);
}

const MetricColumn& MetricsReport::column(const std::string& name) const {
  for (const auto& c : columns) {
    if (c.name == name) return c;
  }
  throw ConfigError("report has no metric '" + name + "'");
}

bool MetricsReport::has(const std::string& name) const {
  return std::any_of(columns.begin(), columns.end(), [&](const MetricColumn& c) { return c.name == name; });
}

namespace {

std::string fmt(const std::optional<double>& v, int precision = 6) {
  if (!v) return "null";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, *v);
  return buf;
}

std::string fold_label(int fold) {
  if (fold == -2) return "avg";
  if (fold < 0) return "all";
  return std::to_string(fold);
}

}  // namespace

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "task,dataset,fold,au";
  for (const auto& c : columns) os << ',' << c.name;
  os << ",flags\n";
  auto row = [&](const std::string& au, std::size_t i, bool avg) {
    os << task << ',' << dataset << ',' << fold_label(fold) << ',' << au;
    std::string flags;
    for (const auto& c : columns) {
      const auto v = avg ? c.average() : c.values[i];
      os << ',' << fmt(v, 12);
      const bool f = avg ? std::any_of(c.flagged.begin(), c.flagged.end(), [](char x) { return x != 0; }) : c.flagged[i] != 0;
      if (f) flags += (flags.empty() ? "" : ";") + c.name;
    }
    os << ',' << flags << '\n';
  };
  for (std::size_t i = 0; i < aus.size(); ++i) row(aus[i], i, false);
  row("Avg.", 0, true);
  return os.str();
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  os << task << " on " << (dataset.empty() ? "dataset" : dataset) << ", fold " << fold_label(fold) << ", " << samples
     << " samples";
  if (task == "detect") os << ", threshold " << threshold;
  os << '\n';
  const std::size_t w = 9;
  auto cell = [&](const std::string& s) {
    os << std::string(s.size() < w ? w - s.size() : 1, ' ') << s;
  };
  std::size_t label_w = 6;
  for (const auto& c : columns) label_w = std::max(label_w, c.name.size() + 1);
  os << std::string(label_w, ' ');
  for (const auto& a : aus) cell(a);
  cell("Avg.");
  os << '\n';
  bool any_flag = false;
  for (const auto& c : columns) {
    os << c.name << std::string(label_w - c.name.size(), ' ');
    for (std::size_t i = 0; i < aus.size(); ++i) {
      std::string s = fmt(c.values[i], 3);
      if (c.flagged[i]) {
        s += '*';
        any_flag = true;
      }
      cell(s);
    }
    cell(fmt(c.average(), 3));
    os << '\n';
  }
  if (any_flag) os << "* degenerate: F1 with no positives in predictions or labels, or ICC undefined\n";
  if (fold == -2) os << "averages are means of per-fold values\n";
  return os.str();
}

double F1Counts::precision() const { return tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp); }
double F1Counts::recall() const { return tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn); }
double F1Counts::f1() const { return tp + fp + fn == 0 ? 0.0 : 2.0 * double(tp) / double(2 * tp + fp + fn); }

std::vector<F1Counts> f1_counts(std::span<const int> pred, std::span<const int> gt, std::size_t num_aus) {
  if (pred.size() != gt.size() || num_aus == 0 || pred.size() % num_aus != 0) {
    throw ShapeError("f1: prediction and label arrays differ in size");
  }
  if (pred.empty()) throw DomainError("f1: empty input");
  std::vector<F1Counts> c(num_aus);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    auto& k = c[i % num_aus];
    if (p && g) ++k.tp;
    else if (p) ++k.fp;
    else if (g) ++k.fn;
  }
  return c;
}

MetricsReport f1_scores(std::span<const int> pred, std::span<const int> gt, const std::vector<std::string>& aus) {
  const auto counts = f1_counts(pred, gt, aus.size());
  MetricsReport r;
  r.task = "detect";
  r.aus = aus;
  r.samples = pred.size() / aus.size();
  MetricColumn f1{"f1", {}, {}};
  for (const auto& c : counts) {
    f1.values.emplace_back(c.f1());
    f1.flagged.push_back(c.degenerate() ? 1 : 0);
  }
  r.columns.push_back(std::move(f1));
  return r;
}

IccResult icc31(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) throw ShapeError("icc31: rater columns differ in length");
  const std::size_t n = pred.size();
  if (n < 2) throw DomainError("icc31: need at least 2 targets");
  const double k = 2;
  double grand = 0;
  for (std::size_t i = 0; i < n; ++i) grand += pred[i] + gt[i];
  grand /= k * double(n);
  double ss_total = 0, ss_rows = 0, mean_p = 0, mean_g = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ss_total += (pred[i] - grand) * (pred[i] - grand) + (gt[i] - grand) * (gt[i] - grand);
    const double row = (pred[i] + gt[i]) / k;
    ss_rows += k * (row - grand) * (row - grand);
    mean_p += pred[i];
    mean_g += gt[i];
  }
  mean_p /= double(n);
  mean_g /= double(n);
  const double ss_cols = double(n) * ((mean_p - grand) * (mean_p - grand) + (mean_g - grand) * (mean_g - grand));
  const double ss_err = std::max(0.0, ss_total - ss_rows - ss_cols);
  IccResult r;
  r.bms = ss_rows / double(n - 1);
  r.ems = ss_err / (double(n - 1) * (k - 1));
  const double denom = r.bms + (k - 1) * r.ems;
  // Scale-aware zero test: both raters constant up to rounding.
  if (ss_total == 0.0 || denom <= 1e-14 * (ss_total / double(n)) || denom == 0.0) return r;
  r.value = (r.bms - r.ems) / denom;
  return r;
}

ErrorPair mse_mae(std::span<const double> pred, std::span<const double> gt, std::size_t num_aus) {
  if (pred.size() != gt.size() || num_aus == 0 || pred.size() % num_aus != 0) throw ShapeError("mse_mae: size mismatch");
  if (pred.empty()) throw DomainError("mse_mae: empty input");
  const std::size_t n = pred.size() / num_aus;
  ErrorPair e{std::vector<double>(num_aus, 0.0), std::vector<double>(num_aus, 0.0)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    e.mse[i % num_aus] += d * d;
    e.mae[i % num_aus] += std::abs(d);
  }
  for (std::size_t a = 0; a < num_aus; ++a) {
    e.mse[a] /= double(n);
    e.mae[a] /= double(n);
  }
  return e;
}

MetricsReport detection_report(std::span<const double> probs, std::span<const int> gt, const std::vector<std::string>& aus,
                               double threshold) {
  std::vector<int> pred(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) pred[i] = probs[i] >= threshold ? 1 : 0;
  MetricsReport r = f1_scores(pred, gt, aus);
  r.threshold = threshold;
  return r;
}

MetricsReport intensity_report(std::span<const double> pred, std::span<const int> gt, const std::vector<std::string>& aus) {
  const std::size_t a = aus.size();
  if (a == 0 || pred.size() != gt.size() || pred.size() % a != 0) throw ShapeError("intensity_report: size mismatch");
  const std::size_t n = pred.size() / a;
  std::vector<double> g(gt.begin(), gt.end());
  const ErrorPair e = mse_mae(pred, g, a);
  MetricsReport r;
  r.task = "intensity";
  r.aus = aus;
  r.samples = n;
  MetricColumn icc{"icc", {}, {}}, mse{"mse", {}, {}}, mae{"mae", {}, {}};
  for (std::size_t k = 0; k < a; ++k) {
    std::vector<double> pc(n), gc(n);
    for (std::size_t i = 0; i < n; ++i) {
      pc[i] = pred[i * a + k];
      gc[i] = g[i * a + k];
    }
    // Constant labels leave ICC at exactly 0 whatever the predictions; that
    // carries no information, so it is reported as null.
    const bool gt_constant = std::all_of(gc.begin(), gc.end(), [&](double v) { return v == gc[0]; });
    auto res = icc31(pc, gc);
    if (gt_constant) res.value.reset();
    icc.values.push_back(res.value);
    icc.flagged.push_back(res.value ? 0 : 1);
    mse.values.emplace_back(e.mse[k]);
    mse.flagged.push_back(0);
    mae.values.emplace_back(e.mae[k]);
    mae.flagged.push_back(0);
  }
  r.columns = {icc, mse, mae};
  return r;
}

MetricsReport average_reports(const std::vector<MetricsReport>& folds) {
  if (folds.empty()) throw DomainError("average_reports: no folds");
  MetricsReport out = folds[0];
  out.fold = -2;
  out.samples = 0;
  for (const auto& f : folds) {
    if (f.aus != out.aus || f.columns.size() != out.columns.size()) throw ShapeError("average_reports: folds differ in layout");
    out.samples += f.samples;
  }
  for (std::size_t c = 0; c < out.columns.size(); ++c) {
    for (std::size_t i = 0; i < out.aus.size(); ++i) {
      double sum = 0;
      std::size_t n = 0;
      char flag = 0;
      for (const auto& f : folds) {
        const auto& v = f.columns[c].values[i];
        if (v) {
          sum += *v;
          ++n;
        }
        flag |= f.columns[c].flagged[i];
      }
      out.columns[c].values[i] = n ? std::optional<double>(sum / double(n)) : std::nullopt;
      out.columns[c].flagged[i] = flag;
    }
  }
  return out;
}

LabelStats label_stats(const Manifest& m) {
  LabelStats s;
  s.aus = m.aus;
  s.samples = m.records.size();
  const std::size_t a = m.num_aus();
  if (a > 64) throw DomainError("label_stats: more than 64 AUs");
  s.positives.assign(a, 0);
  std::map<std::uint64_t, std::size_t> hist;
  for (const auto& r : m.records) {
    std::uint64_t mask = 0;
    if (r.occurrence) {
      for (std::size_t k = 0; k < a; ++k) mask |= std::uint64_t((*r.occurrence)[k] != 0) << k;
    } else if (r.intensity) {
      for (std::size_t k = 0; k < a; ++k) mask |= std::uint64_t((*r.intensity)[k] > 0) << k;
    } else {
      ++s.unlabeled;
      continue;
    }
    for (std::size_t k = 0; k < a; ++k) s.positives[k] += (mask >> k) & 1u;
    ++hist[mask];
  }
  const std::size_t labeled = s.samples - s.unlabeled;
  for (std::size_t k = 0; k < a; ++k) s.rates.push_back(labeled ? double(s.positives[k]) / double(labeled) : 0.0);
  s.combinations.assign(hist.begin(), hist.end());
  std::stable_sort(s.combinations.begin(), s.combinations.end(),
                   [](const auto& x, const auto& y) { return x.second > y.second; });
  if (!s.combinations.empty()) {
    std::size_t lo = 0, hi = 0;
    for (const auto& [mask, count] : s.combinations) {
      lo += count < 50;
      hi += count > 1000;
    }
    s.frac_below_50 = double(lo) / double(s.combinations.size());
    s.frac_above_1000 = double(hi) / double(s.combinations.size());
  }
  return s;
}

namespace {

std::string combo_name(std::uint64_t mask, const std::vector<std::string>& aus) {
  if (mask == 0) return "none";
  std::string s;
  for (std::size_t k = 0; k < aus.size(); ++k) {
    if ((mask >> k) & 1u) s += (s.empty() ? "" : "+") + aus[k];
  }
  return s;
}

}  // namespace

std::string LabelStats::to_csv() const {
  std::ostringstream os;
  os << "section,key,count,rate\n";
  for (std::size_t k = 0; k < aus.size(); ++k) os << "au," << aus[k] << ',' << positives[k] << ',' << fmt(rates[k]) << '\n';
  const std::size_t labeled = samples - unlabeled;
  for (const auto& [mask, count] : combinations) {
    os << "combination," << combo_name(mask, aus) << ',' << count << ','
       << fmt(labeled ? double(count) / double(labeled) : 0.0) << '\n';
  }
  os << "summary,samples," << samples << ",\n";
  os << "summary,unlabeled," << unlabeled << ",\n";
  os << "summary,combinations," << combinations.size() << ",\n";
  os << "summary,frac_below_50,," << fmt(frac_below_50) << '\n';
  os << "summary,frac_above_1000,," << fmt(frac_above_1000) << '\n';
  return os.str();
}

std::string LabelStats::to_table() const {
  std::ostringstream os;
  os << samples << " samples";
  if (unlabeled) os << " (" << unlabeled << " unlabeled)";
  os << ", " << combinations.size() << " AU combinations\n\nAU positive rates\n";
  for (std::size_t k = 0; k < aus.size(); ++k) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "  %-8s %8zu  %6.2f%%\n", aus[k].c_str(), positives[k], 100.0 * rates[k]);
    os << buf;
  }
  os << "\nCombinations (most frequent first)\n";
  for (const auto& [mask, count] : combinations) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "  %-24s %8zu\n", combo_name(mask, aus).c_str(), count);
    os << buf;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "\nlong tail: %.1f%% of combinations have < 50 samples, %.1f%% have > 1000\n",
                100.0 * frac_below_50, 100.0 * frac_above_1000);
  os << buf;
  return os.str();
}

std::string FoldAssignment::to_csv() const {
  std::ostringstream os;
  os << "subject,fold\n";
  for (const auto& [s, f] : fold_of) os << s << ',' << f << '\n';
  return os.str();
}

FoldAssignment kfold_by_subject(const Manifest& m, std::size_t k, std::uint64_t seed) {
  std::vector<std::string> subjects = m.subjects();
  if (k < 2) throw DomainError("kfold: k must be at least 2");
  if (subjects.size() < k) {
    throw DomainError("kfold: " + std::to_string(subjects.size()) + " subjects cannot fill " + std::to_string(k) + " folds");
  }
  auto rng = make_rng(seed, Stream::kfold);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  FoldAssignment f;
  f.k = k;
  f.subjects.resize(k);
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    f.fold_of[subjects[i]] = i % k;
    f.subjects[i % k].push_back(subjects[i]);
  }
  for (auto& s : f.subjects) std::sort(s.begin(), s.end());
  return f;
}

}  // namespace maeface
