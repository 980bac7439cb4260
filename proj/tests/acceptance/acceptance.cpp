// Acceptance suite: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `acceptance 2 5 9`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "maeface/cli/cli.hpp"
#include "maeface/data/geometry.hpp"
#include "maeface/data/manifest.hpp"
#include "maeface/data/synth.hpp"
#include "maeface/error.hpp"
#include "maeface/losses/losses.hpp"
#include "maeface/metrics/metrics.hpp"
#include "maeface/rng.hpp"
#include "maeface/train/loop.hpp"
#include "maeface/train/optim.hpp"
#include "maeface/vitmae/checkpoint.hpp"
#include "../support/model_gradcheck.hpp"
#include "../support/op_gradcheck.hpp"

using namespace maeface;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a failed sub-check; the first few reasons end up in the detail.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail.clear();
    pass = false;
    if (std::count(detail.begin(), detail.end(), ';') < 3) detail += (detail.empty() ? "" : "; ") + what;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("maeface_accept_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  if (out) *out = o.str();
  return code;
}

// 1. Gradient correctness.
Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst_op = 0, worst_model = 0;
  std::size_t ops = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const auto& [name, r] : testing::op_gradchecks(seed)) {
      worst_op = std::max(worst_op, r.max_rel_error);
      ops += seed == 1;
      o.require(r.passed, name + " seed " + std::to_string(seed) + " rel err " + fmt("%.2e", r.max_rel_error));
    }
    for (auto which : {testing::LossCase::pretrain_l1, testing::LossCase::pretrain_l2, testing::LossCase::detect,
                       testing::LossCase::intensity}) {
      const auto r = testing::model_loss_gradcheck(ModelConfig::desk_preset(), which, seed, 1, 2);
      worst_model = std::max(worst_model, r.max_rel_error);
      o.require(r.passed, testing::loss_case_name(which) + " seed " + std::to_string(seed) + " rel err " +
                              fmt("%.2e", r.max_rel_error));
    }
  }
  const double t = seconds_since(t0);
  o.require(t <= 120, "took " + fmt("%.0f s", t));
  if (o.pass) {
    o.detail = std::to_string(ops) + " ops and 4 desk-model losses x 5 seeds; max rel err ops " + fmt("%.1e", worst_op) +
               ", model " + fmt("%.1e", worst_model) + "; " + fmt("%.0f s", t);
  }
  return o;
}

// 2. Mask arithmetic.
Outcome masks() {
  Outcome o;
  auto rng = make_rng(1, Stream::mask);
  const MaskPlan paper = sample_mask(196, 0.75, rng);
  o.require(paper.num_masked() == 147 && paper.num_visible == 49, "N=196 split");
  const MaskPlan desk = sample_mask(ModelConfig::desk_preset().num_patches(), 0.75, rng);
  o.require(desk.num_masked() == 48 && desk.num_visible == 16, "N=64 split");
  double worst = 0;
  for (std::size_t n : {std::size_t(64), std::size_t(196)}) {
    std::vector<int> count(n, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      auto r = make_rng(2024, Stream::mask, n, std::uint64_t(i));
      for (std::size_t m : sample_mask(n, 0.75, r).masked()) ++count[m];
    }
    for (int c : count) worst = std::max(worst, std::abs(double(c) / draws - 0.75));
  }
  o.require(worst <= 0.02, "frequency deviation " + fmt("%.4f", worst));
  if (o.pass) o.detail = "196 -> 147/49, 64 -> 48/16; max per-index deviation over 1e4 draws " + fmt("%.4f", worst);
  return o;
}

// 3. Loss identities.
Outcome loss_identities() {
  Outcome o;
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-1, 1);
  auto rand_t = [&](Shape s) {
    Tensor<double> t(s);
    for (auto& v : t.data()) v = u(gen);
    return t;
  };
  Tape<double> tape;
  auto x = rand_t({2, 64, 16});
  auto r1 = make_rng(1, Stream::mask, 0), r2 = make_rng(1, Stream::mask, 1);
  std::vector<MaskPlan> plans{sample_mask(64, 0.75, r1), sample_mask(64, 0.75, r2)};
  for (bool norm : {false, true}) {
    const auto tg = norm ? patch_normalize(x) : raw_targets(x);
    for (auto flavor : {LossFlavor::l1, LossFlavor::l2}) {
      o.require(loss_pretrain(tape.leaf(tg.patches), tg, plans, flavor).value().item() == 0.0, "pretrain perfect prediction");
      // Visible rows moved arbitrarily: loss unchanged bit for bit.
      const auto pred = rand_t({2, 64, 16});
      auto moved = pred;
      for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t r : plans[b].visible()) {
          for (std::size_t j = 0; j < 16; ++j) moved[(b * 64 + r) * 16 + j] += 100.0 * u(gen);
        }
      }
      o.require(loss_pretrain(tape.leaf(pred), tg, plans, flavor).value().item() ==
                    loss_pretrain(tape.leaf(moved), tg, plans, flavor).value().item(),
                "visible-patch invariance");
    }
  }
  const std::size_t aus = 12;
  std::vector<AULabels> labels(3);
  std::uniform_int_distribution<int> level(0, 5);
  for (auto& l : labels) {
    l.intensity.emplace();
    l.occurrence.emplace();
    for (std::size_t a = 0; a < aus; ++a) {
      l.intensity->push_back(level(gen));
      l.occurrence->push_back(l.intensity->back() > 0);
    }
  }
  const LabelBatch occ = make_label_batch(labels, aus, LabelKind::occurrence);
  const LabelBatch inten = make_label_batch(labels, aus, LabelKind::intensity);
  const double zero = loss_detection(tape.leaf(Tensor<double>(Shape{3, aus}, 0.0)), occ).value().item();
  o.require(std::abs(zero - double(aus) * std::log(2.0)) <= 1e-6, "zero-logit loss " + fmt("%.12f", zero));
  Tensor<double> perfect(Shape{3, aus});
  for (std::size_t i = 0; i < perfect.numel(); ++i) perfect[i] = occ.target[i] > 0.5 ? 800.0 : -800.0;
  o.require(loss_detection(tape.leaf(perfect), occ).value().item() == 0.0, "detection perfect prediction");
  Tensor<double> exact(Shape{3, aus});
  for (std::size_t i = 0; i < exact.numel(); ++i) exact[i] = inten.target[i];
  o.require(loss_intensity(tape.leaf(exact), inten).value().item() == 0.0, "intensity perfect prediction");
  for (int l = 0; l <= 5; ++l) {
    AULabels one;
    one.intensity = std::vector<int>{l};
    const LabelBatch b = make_label_batch(std::span(&one, 1), 1, LabelKind::intensity);
    o.require(denormalize_intensity(Tensor<double>(Shape{1}, b.target[0]))[0] == double(l), "intensity round trip " + std::to_string(l));
  }
  if (o.pass) o.detail = "perfect predictions give 0; zero logits give 12 ln 2 (err " + fmt("%.1e", std::abs(zero - 12 * std::log(2.0))) +
                         "); visible rows ignored exactly; 0..5 round trip exact";
  return o;
}

// 4. Schedule.
Outcome schedule() {
  Outcome o;
  const TrainConfig pre = TrainConfig::paper_pretrain();
  o.require(pre.peak_lr() == pre.base_lr * double(pre.batch_size) / 256.0, "peak formula");
  o.require(pre.peak_lr() == 2.4e-3, "paper pretrain peak " + fmt("%.17g", pre.peak_lr()));
  const std::uint64_t spe = 9, warm = pre.warmup_epochs * spe;
  o.require(lr_at(pre, warm, spe) == pre.peak_lr(), "peak at warmup end");
  const double step_up = pre.peak_lr() / double(warm);
  o.require(std::abs(lr_at(pre, warm - 1, spe) + step_up - pre.peak_lr()) <= 1e-12, "warmup continuity (left)");
  TrainConfig c = pre;
  c.min_lr = 1e-6;
  const std::uint64_t decay = (c.epochs - c.warmup_epochs) * spe;
  // The decay segment in closed form; at step 0 of decay it is the peak.
  auto cosine = [&](double k) { return c.min_lr + (c.peak_lr() - c.min_lr) * (1 + std::cos(M_PI * k / double(decay))) / 2; };
  o.require(cosine(0) == c.peak_lr() && lr_at(c, warm, spe) == c.peak_lr(), "warmup continuity (right)");
  o.require(std::abs(lr_at(c, warm + 1, spe) - cosine(1)) <= 1e-12, "first decay step");
  const double mid = lr_at(c, warm + decay / 2, spe);
  o.require(decay % 2 == 0 && std::abs(mid - (c.peak_lr() + c.min_lr) / 2) <= 1e-12, "cosine midpoint " + fmt("%.17g", mid));
  if (o.pass) {
    o.detail = "peak " + fmt("%.4g", pre.peak_lr()) + " = 1.5e-4 x 4096/256; warmup continuity and midpoint (err " +
               fmt("%.1e", std::abs(mid - (c.peak_lr() + c.min_lr) / 2)) + ")";
  }
  return o;
}

// 5. Metric oracles.
Outcome metric_oracles() {
  Outcome o;
  std::mt19937_64 gen(55);
  const std::size_t n = 1000, a = 4;
  std::vector<int> pred(n * a), gt(n * a), gi(n * a);
  std::vector<double> pr(n * a);
  for (std::size_t i = 0; i < n * a; ++i) {
    pred[i] = int(gen() % 2);
    gt[i] = int(gen() % 3 == 0);
    gi[i] = int(gen() % 6);
    pr[i] = std::uniform_real_distribution<double>(0, 5)(gen);
  }
  const std::vector<std::string> names{"AU1", "AU2", "AU3", "AU4"};
  const auto counts = f1_counts(pred, gt, a);
  const auto rep = f1_scores(pred, gt, names);
  for (std::size_t k = 0; k < a; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0;
    double se = 0, ae = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int p = pred[i * a + k], g = gt[i * a + k];
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
      const double d = pr[i * a + k] - double(gi[i * a + k]);
      se += d * d;
      ae += std::fabs(d);
    }
    o.require(counts[k].tp == tp && counts[k].fp == fp && counts[k].fn == fn, "F1 counts");
    const double precision = double(tp) / double(tp + fp), recall = double(tp) / double(tp + fn);
    o.require(std::abs(*rep.column("f1").values[k] - 2 * precision * recall / (precision + recall)) <= 1e-12, "F1 value");
    std::vector<double> gd(gi.begin(), gi.end());
    const auto e = mse_mae(pr, gd, a);
    o.require(std::abs(e.mse[k] - se / double(n)) <= 1e-12 && std::abs(e.mae[k] - ae / double(n)) <= 1e-12, "MSE/MAE");
  }
  // ICC(3,1) against explicit sums of squares.
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 50;
    std::vector<double> x(m), y(m);
    std::normal_distribution<double> nd(0, 1);
    for (std::size_t i = 0; i < m; ++i) {
      x[i] = nd(gen);
      y[i] = 0.6 * x[i] + 0.8 * nd(gen) + 2.0;
    }
    double grand = 0;
    for (std::size_t i = 0; i < m; ++i) grand += x[i] + y[i];
    grand /= 2.0 * double(m);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < m; ++i) {
      mx += x[i] / double(m);
      my += y[i] / double(m);
    }
    double ssr = 0, sse = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const double row = (x[i] + y[i]) / 2.0;
      ssr += 2.0 * (row - grand) * (row - grand);
      const double ex = x[i] - row - mx + grand, ey = y[i] - row - my + grand;
      sse += ex * ex + ey * ey;
    }
    const double bms = ssr / double(m - 1), ems = sse / double(m - 1);
    const double want = (bms - ems) / (bms + ems);
    const auto got = icc31(x, y);
    o.require(got.value.has_value(), "ICC null on random data");
    if (got.value) worst = std::max(worst, std::abs(*got.value - want));
  }
  o.require(worst <= 1e-9, "ICC oracle error " + fmt("%.2e", worst));
  const std::vector<double> same{0, 1, 3, 2, 5, 4};
  o.require(icc31(same, same).value && std::abs(*icc31(same, same).value - 1.0) <= 1e-12, "identical ratings");
  const std::vector<double> flat{2, 2, 2, 2};
  o.require(!icc31(flat, flat).value.has_value(), "constant ratings not null");
  const auto flat_rep = intensity_report(std::vector<double>{2, 1, 2, 1}, std::vector<int>{2, 0, 2, 0}, {"AU1", "AU2"});
  o.require(!flat_rep.column("icc").values[0].has_value() && flat_rep.column("icc").flagged[0] == 1, "flagged null");
  if (o.pass) o.detail = "F1/MSE/MAE exact on 1000 samples; ICC max err " + fmt("%.1e", worst) + "; identical -> 1; constant -> flagged null";
  return o;
}

// 6. Overfit sanity.
Outcome overfit() {
  Outcome o;
  const auto t0 = Clock::now();
  const ModelConfig mc = ModelConfig::desk_preset();
  const Dataset d = dataset_from_corpus(synth_corpus(1, 8), mc);
  TrainConfig c = TrainConfig::desk_pretrain();
  c.batch_size = 8;  // one step per epoch
  c.epochs = 2000;
  c.warmup_epochs = 100;
  c.base_lr = 0.1;  // peak 3.125e-3
  c.weight_decay = 0;
  c.crop_scale_min = 1.0;
  const RunResult r = pretrain_loop(init_weights<float>(mc, 3), d, c);
  std::size_t first = 0;
  double best = 1e9;
  for (const auto& row : r.trace) {
    if (row.loss < 0.05 && first == 0) first = row.step + 1;
    best = std::min(best, row.loss);
  }
  const double t = seconds_since(t0);
  o.require(first > 0, "best loss " + fmt("%.4f", best));
  o.require(t <= 300, "took " + fmt("%.0f s", t));
  if (o.pass) {
    o.detail = "loss < 0.05 at step " + std::to_string(first) + " (best " + fmt("%.4f", best) + ", last " +
               fmt("%.4f", r.trace.back().loss) + "); " + fmt("%.0f s", t);
  }
  return o;
}

// 7. Directional transfer.
Outcome transfer() {
  Outcome o;
  const auto t0 = Clock::now();
  std::vector<double> gaps;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ModelConfig mc = ModelConfig::desk_preset();
    SynthOptions po, tro, teo;
    po.first_subject = 100;
    po.num_subjects = 80;
    tro.num_subjects = 10;
    teo.first_subject = 10;
    teo.num_subjects = 10;
    const Dataset pre = dataset_from_corpus(synth_corpus(seed * 1000 + 1, 2000, po), mc);
    const Dataset train = dataset_from_corpus(synth_corpus(seed * 1000 + 2, 200, tro), mc);
    const Dataset test = dataset_from_corpus(synth_corpus(seed * 1000 + 3, 200, teo), mc);

    TrainConfig pc = TrainConfig::desk_pretrain();
    pc.seed = seed;
    const RunResult pr = pretrain_loop(init_weights<float>(mc, seed), pre, pc);

    ModelConfig fm = mc;
    fm.task = Task::detect;
    TrainConfig fc = TrainConfig::desk_finetune(Task::detect);
    fc.seed = seed;
    fc.eval_every = 0;
    double f1[2];
    for (int arm = 0; arm < 2; ++arm) {
      auto w = init_weights<float>(fm, seed + 7);
      if (arm == 0) {
        for (auto& p : w.params) {
          if (is_encoder_param(p.name)) p.value = pr.weights.at(p.name);
        }
      }
      const RunResult fr = finetune_loop(std::move(w), train, &test, fc);
      f1[arm] = fr.evals.back().column("f1").average().value_or(0.0);
    }
    gaps.push_back(100.0 * (f1[0] - f1[1]));
    char buf[96];
    std::snprintf(buf, sizeof buf, "%sseed %llu: %.1f vs %.1f", seed == 1 ? "" : ", ", static_cast<unsigned long long>(seed),
                  100 * f1[0], 100 * f1[1]);
    per_seed += buf;
  }
  std::vector<double> sorted = gaps;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[1], t = seconds_since(t0);
  o.require(median >= 2.0, "median gain " + fmt("%.2f", median) + " points (" + per_seed + ")");
  o.require(t <= 1800, "took " + fmt("%.0f s", t));
  if (o.pass) o.detail = "median F1 gain " + fmt("%.1f", median) + " points (" + per_seed + "); " + fmt("%.0f s", t);
  return o;
}

// 8. Partial-dataset protocol.
Outcome partial() {
  Outcome o;
  Manifest m;
  m.aus = {"AU1"};
  const std::vector<long> per_subject{2501, 1999, 1000, 733, 12};
  for (std::size_t s = 0; s < per_subject.size(); ++s) {
    for (long f = 0; f < per_subject[s]; ++f) {
      SampleRecord r;
      r.image = "x.pgm";
      r.subject = "S" + std::to_string(s);
      r.frame = per_subject[s] - f;  // reverse insertion order
      m.records.push_back(r);
    }
  }
  const TrainConfig base = TrainConfig::paper_finetune(Task::detect, "BP4D");
  const std::vector<std::tuple<double, std::size_t, std::size_t>> table{
      {0.1, 10, 200}, {0.01, 100, 2000}, {0.005, 200, 4000}, {0.002, 500, 10000}, {0.001, 1000, 20000}};
  for (const auto& [fraction, every, epochs] : table) {
    const PartialPlan p = partial_protocol(m, fraction, base);
    o.require(p.every_n == every && p.config.epochs == epochs, "mapping for " + fmt("%g", fraction));
    std::size_t want = 0;
    for (long c : per_subject) want += std::size_t((c + long(every) - 1) / long(every));
    o.require(p.subset.records.size() == want, "subset size for " + fmt("%g", fraction));
  }
  bool rejected = false;
  try {
    partial_protocol(m, 0.05, base);
  } catch (const ConfigError&) {
    rejected = true;
  }
  o.require(rejected, "0.05 accepted");
  if (o.pass) o.detail = "all five fractions map to every-N/epochs exactly; per-subject ceil(count/N) sizes match; other fractions rejected";
  return o;
}

// 9. Determinism and persistence.
Outcome determinism() {
  Outcome o;
  const auto dir = scratch("determinism");
  ModelConfig mc = ModelConfig::desk_preset();
  const Dataset d = dataset_from_corpus(synth_corpus(9, 64), mc);
  TrainConfig c = TrainConfig::desk_pretrain();
  c.epochs = 3;
  c.warmup_epochs = 1;
  c.batch_size = 16;
  c.seed = 11;
  pretrain_loop(init_weights<float>(mc, 11), d, c, RunOptions{(dir / "a").string()});
  pretrain_loop(init_weights<float>(mc, 11), d, c, RunOptions{(dir / "b").string()});
  o.require(slurp(dir / "a" / kCheckpointFile) == slurp(dir / "b" / kCheckpointFile), "repeat runs differ");
  RunOptions first{(dir / "r").string()};
  first.stop_after = 5;
  pretrain_loop(init_weights<float>(mc, 11), d, c, first);
  RunOptions second{(dir / "r").string()};
  second.resume = (dir / "r" / kStateFile).string();
  pretrain_loop(init_weights<float>(mc, 11), d, c, second);
  o.require(slurp(dir / "a" / kTraceFile) == slurp(dir / "r" / kTraceFile), "resumed trace differs");
  o.require(slurp(dir / "a" / kCheckpointFile) == slurp(dir / "r" / kCheckpointFile), "resumed checkpoint differs");

  const auto w = load_weights<float>((dir / "a" / kCheckpointFile).string());
  save_weights(w, (dir / "again.ckpt").string());
  o.require(slurp(dir / "again.ckpt") == slurp(dir / "a" / kCheckpointFile), "checkpoint round trip");
  const auto w2 = load_weights<float>((dir / "again.ckpt").string());
  bool same = w2.config == w.config && w2.params.size() == w.params.size();
  for (std::size_t i = 0; same && i < w.params.size(); ++i) {
    same = std::memcmp(w.params[i].value.raw(), w2.params[i].value.raw(), w.params[i].value.numel() * sizeof(float)) == 0;
  }
  o.require(same, "checkpoint tensors");

  const std::string mpath = write_corpus(synth_corpus(12, 30), (dir / "corpus").string());
  const Manifest man = read_manifest(mpath);
  write_manifest(man, (dir / "copy.jsonl").string());
  o.require(slurp(mpath) == slurp(dir / "copy.jsonl"), "manifest round trip");
  o.require(read_manifest((dir / "copy.jsonl").string()).records == man.records, "manifest records");
  if (o.pass) o.detail = "repeat runs and resume-at-step-5 give identical checkpoints and traces; checkpoint and manifest round trips byte-exact";
  return o;
}

// 10. Geometry.
Outcome geometry() {
  Outcome o;
  std::mt19937_64 gen(10);
  std::uniform_real_distribution<double> u(5, 95);
  double worst_level = 0;
  for (int i = 0; i < 200; ++i) {
    const Point l{u(gen), u(gen)}, r{u(gen), u(gen)};
    if (std::hypot(l.x - r.x, l.y - r.y) < 2) continue;
    const auto a = align_face(Image(1, 100, 100), l, r, {l, r});
    worst_level = std::max(worst_level, std::abs(a.landmarks[0].y - a.landmarks[1].y));
  }
  o.require(worst_level <= 0.5, "eye levelling " + fmt("%.3f px", worst_level));
  SynthOptions so;
  so.image_size = 96;
  const auto c = synth_corpus(17, 5, so);
  double worst_mad = 0;
  for (std::size_t k = 0; k < c.images.size(); ++k) {
    const auto& lm = *c.manifest.records[k].landmarks;
    const Point mid{(lm[0].x + lm[1].x) / 2, (lm[0].y + lm[1].y) / 2};
    const double angle = 17.0 * M_PI / 180.0;
    const Image rotated = from_tensor(rotate_image(to_tensor(c.images[k]), angle, mid));
    const auto back = align_face(rotated, rotate_point(lm[0], angle, mid), rotate_point(lm[1], angle, mid));
    double mad = 0;
    for (std::size_t y = 24; y < 72; ++y) {
      for (std::size_t x = 24; x < 72; ++x) mad += std::abs(double(back.image.at(0, y, x)) - double(c.images[k].at(0, y, x)));
    }
    worst_mad = std::max(worst_mad, mad / (48.0 * 48.0) / 255.0);
  }
  o.require(worst_mad < 4.0 / 255.0, "rotation round trip MAD " + fmt("%.4f", worst_mad));
  Image white(1, 60, 60, 255);
  for (int i = 0; i < 200; ++i) {
    const BBox b{int(gen() % 80) - 10, int(gen() % 80) - 10, 1 + int(gen() % 40), 1 + int(gen() % 40)};
    const Image out = crop_square(white, b);
    const BBox sq = square_region(b);
    bool ok = out.width == out.height && int(out.width) == std::max(b.w, b.h);
    for (int y = 0; ok && y < sq.h; ++y) {
      for (int x = 0; ok && x < sq.w; ++x) {
        const bool inside = sq.x + x >= 0 && sq.x + x < 60 && sq.y + y >= 0 && sq.y + y < 60;
        ok = out.at(0, std::size_t(y), std::size_t(x)) == (inside ? 255 : 0);
      }
    }
    o.require(ok, "crop_square box " + std::to_string(i));
  }
  if (o.pass) {
    o.detail = "eye levelling max " + fmt("%.2e px", worst_level) + "; 17 deg round trip MAD " + fmt("%.2f/255", worst_mad * 255) +
               "; square crops zero-padded";
  }
  return o;
}

// 11. Ablation harness.
Outcome ablation() {
  Outcome o;
  const auto dir = scratch("ablation");
  std::string out;
  const int code = cli({"ablate-loss", "--seed", "5", "--pretrain-images", "128", "--train-images", "64", "--test-images", "64",
                        "--pretrain-epochs", "2", "--finetune-epochs", "2", "--out", (dir / "a").string()},
                       &out);
  o.require(code == kExitOk, "exit code " + std::to_string(code));
  if (!o.pass) return o;
  const std::string csv = slurp(dir / "a" / "ablation.csv");
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(csv);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  const std::vector<std::string> want{"L2 w/o", "L2 w/", "L1 w/o", "L1 w/"};
  o.require(rows.size() == 5, std::to_string(rows.size()) + " rows");
  std::set<std::string> hashes;
  for (std::size_t i = 0; o.pass && i < 4; ++i) {
    o.require(rows[i + 1].size() == 6 && rows[i + 1][2] == want[i], "row " + std::to_string(i));
    if (rows[i + 1].size() == 6) hashes.insert(rows[i + 1][5]);
  }
  o.require(hashes.size() == 1, "data order hashes differ");
  std::string verdict;
  const auto pos = out.find("L1 w/ norm vs L2 w/ norm: ");
  if (pos != std::string::npos) verdict = out.substr(pos + 26, out.find(" (", pos) - pos - 26);
  if (o.pass) o.detail = "rows L2 w/o, L2 w/, L1 w/o, L1 w/; one data-order hash " + *hashes.begin() + "; reported: " + verdict;
  return o;
}

// 12. Reconstruction rendering.
Outcome reconstruction() {
  Outcome o;
  const auto dir = scratch("reconstruct");
  const std::string man = write_corpus(synth_corpus(21, 64), (dir / "corpus").string());
  o.require(cli({"pretrain", "--seed", "3", "--manifest", man, "--epochs", "2", "--warmup-epochs", "1", "--batch-size", "16",
                 "--out", (dir / "pre").string()}) == kExitOk,
            "pretrain failed");
  if (!o.pass) return o;
  // The input avoids the mask gray so gray pixels count masked area only.
  Image face = read_image(read_manifest(man).image_path(read_manifest(man).records[0]));
  for (auto& p : face.pixels) p = p == kMaskGray ? kMaskGray - 1 : p;
  write_image(face, (dir / "face.pgm").string());
  const auto weights = load_weights<float>((dir / "pre" / kCheckpointFile).string());
  o.require(cli({"reconstruct", "--checkpoint", (dir / "pre" / kCheckpointFile).string(), "--image", (dir / "face.pgm").string(),
                 "--mask-ratio", "0,0.5,0.75,0.9", "--seed", "6", "--out", (dir / "r").string()}) == kExitOk,
            "reconstruct failed");
  if (!o.pass) return o;
  const std::size_t s = face.width, p = weights.config.patch_size, g = s / p, n = g * g;
  std::string census;
  for (double ratio : {0.0, 0.5, 0.75, 0.9}) {
    char name[32];
    std::snprintf(name, sizeof name, "recon_r%.2f.ppm", ratio);
    const Image t = read_image((dir / "r" / name).string());
    const Triptych ref = render_triptych(weights, face, ratio, 6);
    o.require(t == ref.image, std::string(name) + " differs from in-process render");
    o.require(t.width == 3 * s && t.height == s && t.channels == 3, "layout");
    if (!o.pass) return o;
    const auto flags = ref.plan.masked_flags();
    std::size_t gray = 0;
    bool left_ok = true, middle_ok = true, right_ok = true;
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        const auto orig = face.at(0, y, x);
        const bool masked = flags[(y / p) * g + x / p] != 0;
        for (std::size_t c = 0; c < 3; ++c) {
          left_ok = left_ok && t.at(c, y, x) == (masked ? kMaskGray : orig);
          if (!masked) middle_ok = middle_ok && t.at(c, y, s + x) == orig;
          right_ok = right_ok && t.at(c, y, 2 * s + x) == orig;
        }
        gray += t.at(0, y, x) == kMaskGray && t.at(1, y, x) == kMaskGray && t.at(2, y, x) == kMaskGray;
      }
    }
    const std::size_t expect = n - std::size_t(std::floor(double(n) * (1.0 - ratio)));
    o.require(ref.plan.num_masked() == expect, "MaskPlan count");
    o.require(gray == ref.plan.num_masked() * p * p, std::string(name) + " gray census " + std::to_string(gray / (p * p)));
    o.require(count_gray_patches(ref) == ref.plan.num_masked(), "patch census");
    o.require(left_ok && middle_ok && right_ok, std::string(name) + " panel order");
    census += (census.empty() ? "" : ", ") + std::to_string(gray / (p * p)) + "/" + std::to_string(n);
  }
  if (o.pass) o.detail = "masked | reconstruction | original; gray patches at ratios 0/0.5/0.75/0.9: " + census;
  return o;
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "gradient correctness", gradients},     {2, "mask arithmetic", masks},
      {3, "loss identities", loss_identities},    {4, "learning-rate schedule", schedule},
      {5, "metric oracles", metric_oracles},      {6, "overfit sanity", overfit},
      {7, "directional transfer", transfer},      {8, "partial-dataset protocol", partial},
      {9, "determinism and persistence", determinism}, {10, "geometry", geometry},
      {11, "loss ablation harness", ablation},    {12, "reconstruction rendering", reconstruction},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  int run = 0, passed = 0;
  for (const auto& c : all) {
    if (!pick.empty() && !pick.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    ++run;
    passed += o.pass;
    std::printf("%s  %2d  %-28s %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", passed, run);
  return passed == run ? 0 : 1;
}
