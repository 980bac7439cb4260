#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "maeface/data/synth.hpp"
#include "maeface/error.hpp"
#include "maeface/metrics/metrics.hpp"

using namespace maeface;

namespace {

std::vector<std::string> au_names(std::size_t a) {
  std::vector<std::string> v;
  for (std::size_t i = 0; i < a; ++i) v.push_back("AU" + std::to_string(i + 1));
  return v;
}

// Textbook two-way ANOVA on an n x 2 table, written out cell by cell.
double icc_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double grand = 0;
  for (std::size_t i = 0; i < x.size(); ++i) grand += x[i] + y[i];
  grand /= 2 * n;
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double ssr = 0, sse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double ri = (x[i] + y[i]) / 2;
    ssr += 2 * (ri - grand) * (ri - grand);
    const double ex = x[i] - ri - mx + grand;
    const double ey = y[i] - ri - my + grand;
    sse += ex * ex + ey * ey;
  }
  const double bms = ssr / (n - 1), ems = sse / (n - 1);
  return (bms - ems) / (bms + ems);
}

SampleRecord occ_record(const std::string& subject, long frame, std::vector<int> occ) {
  SampleRecord r;
  r.image = subject + std::to_string(frame) + ".pgm";
  r.subject = subject;
  r.frame = frame;
  r.occurrence = std::move(occ);
  return r;
}

Manifest subjects_manifest(std::size_t subjects, std::size_t frames) {
  Manifest m;
  m.aus = au_names(2);
  for (std::size_t s = 0; s < subjects; ++s) {
    for (std::size_t f = 0; f < frames; ++f) m.records.push_back(occ_record("S" + std::to_string(s), long(f), {0, 1}));
  }
  return m;
}

}  // namespace

TEST_CASE("f1 examples") {
  const auto aus = au_names(1);
  // TP=2, FP=1, FN=1, TN=1
  std::vector<int> pred{1, 1, 1, 0, 0}, gt{1, 1, 0, 1, 0};
  const auto r = f1_scores(pred, gt, aus);
  CHECK(r.column("f1").values[0].value() == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const auto c = f1_counts(pred, gt, 1)[0];
  CHECK(c.precision() == doctest::Approx(2.0 / 3.0));
  CHECK(c.recall() == doctest::Approx(2.0 / 3.0));

  std::vector<int> bits{1, 0, 1, 1, 0, 0, 1, 1};
  const auto perfect = f1_scores(bits, bits, au_names(2));
  for (const auto& v : perfect.column("f1").values) CHECK(*v == 1.0);

  // AU 2 never appears in labels or predictions
  std::vector<int> p2{1, 0, 0, 0}, g2{1, 0, 1, 0};
  const auto d = f1_scores(p2, g2, au_names(2));
  CHECK(*d.column("f1").values[1] == 0.0);
  CHECK(d.column("f1").flagged[1] == 1);
  CHECK(d.column("f1").flagged[0] == 0);
  CHECK(*d.column("f1").average() == doctest::Approx(1.0 / 3.0));

  CHECK_THROWS_AS(f1_scores(std::vector<int>{}, std::vector<int>{}, aus), DomainError);
  CHECK_THROWS_AS(f1_scores(std::vector<int>{1, 0}, std::vector<int>{1}, aus), ShapeError);
}

TEST_CASE("f1, mse and mae match brute force on random samples") {
  std::mt19937_64 rng(11);
  const std::size_t n = 1000, a = 6;
  std::vector<int> pred(n * a), gt(n * a);
  std::vector<double> pr(n * a);
  std::vector<int> gi(n * a);
  std::uniform_real_distribution<double> u(0, 5);
  for (std::size_t i = 0; i < n * a; ++i) {
    pred[i] = int(rng() % 3 == 0);
    gt[i] = int(rng() % 4 == 0);
    pr[i] = u(rng);
    gi[i] = int(rng() % 6);
  }
  const auto counts = f1_counts(pred, gt, a);
  const auto rep = f1_scores(pred, gt, au_names(a));
  std::vector<double> gd(gi.begin(), gi.end());
  const auto e = mse_mae(pr, gd, a);
  for (std::size_t k = 0; k < a; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0;
    double se = 0, ae = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const int p = pred[s * a + k], g = gt[s * a + k];
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
      const double d = pr[s * a + k] - gi[s * a + k];
      se += d * d;
      ae += std::fabs(d);
    }
    CHECK(counts[k].tp == tp);
    CHECK(counts[k].fp == fp);
    CHECK(counts[k].fn == fn);
    const double prec = double(tp) / double(tp + fp), rec = double(tp) / double(tp + fn);
    CHECK(std::abs(*rep.column("f1").values[k] - 2 * prec * rec / (prec + rec)) < 1e-12);
    CHECK(std::abs(e.mse[k] - se / double(n)) < 1e-12);
    CHECK(std::abs(e.mae[k] - ae / double(n)) < 1e-12);
  }
}

TEST_CASE("mse and mae examples") {
  std::vector<double> gt{0, 1, 2, 3, 4, 5}, shifted(6);
  for (std::size_t i = 0; i < 6; ++i) shifted[i] = gt[i] + 0.5;
  auto zero = mse_mae(gt, gt, 2);
  CHECK(zero.mse == std::vector<double>{0, 0});
  CHECK(zero.mae == std::vector<double>{0, 0});
  auto off = mse_mae(shifted, gt, 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(off.mse[k] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(off.mae[k] == doctest::Approx(0.5).epsilon(1e-15));
  }
  CHECK_THROWS_AS(mse_mae(std::vector<double>{}, std::vector<double>{}, 1), DomainError);
}

TEST_CASE("f1 is invariant under sample permutation") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 60, a = 1 + rng() % 5;
    std::vector<int> p(n * a), g(n * a);
    for (std::size_t i = 0; i < n * a; ++i) {
      p[i] = int(rng() & 1);
      g[i] = int((rng() >> 7) & 1);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> pp(n * a), gg(n * a);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t k = 0; k < a; ++k) {
        pp[s * a + k] = p[order[s] * a + k];
        gg[s * a + k] = g[order[s] * a + k];
      }
    }
    const auto r1 = f1_scores(p, g, au_names(a)), r2 = f1_scores(pp, gg, au_names(a));
    CHECK(r1.column("f1").values == r2.column("f1").values);
  }
}

TEST_CASE("icc31 matches the ANOVA oracle") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(50), y(50);
    for (std::size_t i = 0; i < 50; ++i) {
      x[i] = nd(rng);
      y[i] = 0.6 * x[i] + 0.8 * nd(rng);
    }
    const auto r = icc31(x, y);
    REQUIRE(r.value);
    CHECK(std::abs(*r.value - icc_oracle(x, y)) < 1e-9);
    CHECK(*r.value >= -1.0);
    CHECK(*r.value <= 1.0);
  }
}

TEST_CASE("icc31 examples and degenerate cases") {
  std::vector<double> g{0, 1, 3, 2, 5, 4, 1};
  CHECK(*icc31(g, g).value == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> shifted = g;
  for (auto& v : shifted) v += 1.7;
  CHECK(*icc31(shifted, g).value == doctest::Approx(1.0).epsilon(1e-12));
  std::vector<double> c1(7, 2.0), c2(7, 3.0);
  CHECK_FALSE(icc31(c1, c1).value.has_value());
  CHECK_FALSE(icc31(c1, c2).value.has_value());
  CHECK_THROWS_AS(icc31(std::vector<double>{1}, std::vector<double>{1}), DomainError);
  // -1 is reachable: ratings anti-aligned around a common mean
  std::vector<double> up{0, 1, 2, 3}, down{3, 2, 1, 0};
  CHECK(*icc31(up, down).value == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("icc31 invariances") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd(0, 1);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = nd(rng);
      y[i] = x[i] * u(rng) * 0.1 + nd(rng);
    }
    const double base = *icc31(x, y).value;
    const double c = u(rng), s = std::exp(u(rng) * 0.3);
    std::vector<double> x1 = x, x2 = x, y2 = y, x3 = x, y3 = y;
    for (std::size_t i = 0; i < n; ++i) {
      x1[i] += c;
      x2[i] += c;
      y2[i] += c;
      x3[i] = s * x[i] + c;
      y3[i] = s * y[i] + c;
    }
    CHECK(std::abs(*icc31(x1, y).value - base) < 1e-9);
    CHECK(std::abs(*icc31(x2, y2).value - base) < 1e-9);
    CHECK(std::abs(*icc31(x3, y3).value - base) < 1e-9);
  }
}

TEST_CASE("intensity report flags a constant AU") {
  // AU1 varies, AU2 is zero in both prediction and labels
  std::vector<double> pred{0, 0, 2, 0, 4, 0, 5, 0};
  std::vector<int> gt{0, 0, 2, 0, 4, 0, 5, 0};
  const auto r = intensity_report(pred, gt, au_names(2));
  CHECK(*r.column("icc").values[0] == doctest::Approx(1.0));
  CHECK_FALSE(r.column("icc").values[1].has_value());
  CHECK(r.column("icc").flagged[1] == 1);
  CHECK(*r.column("icc").average() == doctest::Approx(1.0));
  CHECK(r.to_csv().find("null") != std::string::npos);
  CHECK(*r.column("mse").average() == 0.0);

  // Constant labels with varying predictions: icc31 gives exactly 0, the
  // report a flagged null.
  std::vector<double> p2{1, 3, 2, 3, 4, 3, 0, 3};
  std::vector<int> g2{0, 3, 2, 3, 4, 3, 5, 3};
  CHECK(*icc31(std::vector<double>{3, 3, 3, 3}, std::vector<double>{1, 2, 4, 0}).value == doctest::Approx(0.0));
  const auto r2 = intensity_report(p2, g2, au_names(2));
  CHECK(r2.column("icc").values[0].has_value());
  CHECK_FALSE(r2.column("icc").values[1].has_value());
  CHECK(r2.column("icc").flagged[1] == 1);
}

TEST_CASE("report averages and serialization") {
  std::mt19937_64 rng(21);
  std::vector<MetricsReport> folds;
  for (int f = 0; f < 3; ++f) {
    std::vector<int> p(40 * 4), g(40 * 4);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = int(rng() & 1);
      g[i] = int((rng() >> 3) & 1);
    }
    auto r = f1_scores(p, g, au_names(4));
    r.fold = f;
    const auto& col = r.column("f1");
    double mean = 0;
    for (const auto& v : col.values) mean += *v;
    CHECK(std::abs(*col.average() - mean / 4) < 1e-12);
    folds.push_back(r);
  }
  const auto avg = average_reports(folds);
  CHECK(avg.fold == -2);
  CHECK(avg.samples == 120);
  for (std::size_t k = 0; k < 4; ++k) {
    double m = 0;
    for (const auto& f : folds) m += *f.column("f1").values[k];
    CHECK(std::abs(*avg.column("f1").values[k] - m / 3) < 1e-12);
  }
  const std::string csv = avg.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);  // header, 4 AUs, Avg.
  CHECK(csv.find("Avg.") != std::string::npos);
  const std::string table = avg.to_table();
  CHECK(table.find("AU4") < table.find("Avg."));
  CHECK(table.find("per-fold") != std::string::npos);
}

TEST_CASE("label stats") {
  Manifest m;
  m.aus = au_names(3);
  m.records = {occ_record("A", 0, {1, 1, 0}), occ_record("A", 1, {1, 1, 0}), occ_record("B", 0, {0, 0, 1})};
  auto s = label_stats(m);
  REQUIRE(s.combinations.size() == 2);
  CHECK(s.combinations[0].second == 2);
  CHECK(s.combinations[0].first == 0b011u);
  CHECK(s.combinations[1].second == 1);
  CHECK(s.positives == std::vector<std::size_t>{2, 2, 1});
  CHECK(s.frac_below_50 == 1.0);

  Manifest zero;
  zero.aus = au_names(2);
  for (int i = 0; i < 7; ++i) zero.records.push_back(occ_record("Z", i, {0, 0}));
  auto z = label_stats(zero);
  REQUIRE(z.combinations.size() == 1);
  CHECK(z.combinations[0] == std::pair<std::uint64_t, std::size_t>{0, 7});
  CHECK(z.to_table().find("none") != std::string::npos);
}

TEST_CASE("label stats on the synthetic corpus track generator rates") {
  SynthOptions opt;
  const std::size_t n = 4000;
  const auto corpus = synth_corpus(17, n, opt);
  const auto s = label_stats(corpus.manifest);
  const double p = 1.0 - opt.p_zero;
  const double sigma = std::sqrt(p * (1 - p) / double(n));
  std::size_t total = 0;
  for (const auto& [mask, count] : s.combinations) total += count;
  CHECK(total + s.unlabeled == s.samples);
  for (double r : s.rates) CHECK(std::abs(r - p) < 3 * sigma);
}

TEST_CASE("kfold partitions subjects") {
  auto m27 = subjects_manifest(27, 3);
  auto f = kfold_by_subject(m27, 3, 5);
  for (const auto& s : f.subjects) CHECK(s.size() == 9);

  auto m41 = subjects_manifest(41, 2);
  auto g = kfold_by_subject(m41, 3, 5);
  std::multiset<std::size_t> sizes;
  for (const auto& s : g.subjects) sizes.insert(s.size());
  CHECK(sizes == std::multiset<std::size_t>{13, 14, 14});

  CHECK(kfold_by_subject(m41, 3, 5).fold_of == g.fold_of);
  CHECK(kfold_by_subject(m41, 3, 6).fold_of != g.fold_of);
  CHECK_THROWS_AS(kfold_by_subject(subjects_manifest(2, 1), 3, 1), DomainError);
}

TEST_CASE("kfold partition property") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t k = 2 + rng() % 5;
    const std::size_t subjects = k + rng() % 30;
    auto m = subjects_manifest(subjects, 1 + rng() % 3);
    auto f = kfold_by_subject(m, k, rng());
    std::set<std::string> seen;
    std::size_t lo = SIZE_MAX, hi = 0;
    for (std::size_t i = 0; i < k; ++i) {
      lo = std::min(lo, f.subjects[i].size());
      hi = std::max(hi, f.subjects[i].size());
      for (const auto& s : f.subjects[i]) {
        CHECK(seen.insert(s).second);
        CHECK(f.fold_of.at(s) == i);
      }
    }
    CHECK(hi - lo <= 1);
    const auto all = m.subjects();
    CHECK(std::set<std::string>(all.begin(), all.end()) == seen);
  }
}
