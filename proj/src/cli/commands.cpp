#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "maeface/cli/cli.hpp"
#include "maeface/data/geometry.hpp"
#include "maeface/data/manifest.hpp"
#include "maeface/data/synth.hpp"
#include "maeface/error.hpp"
#include "maeface/metrics/metrics.hpp"
#include "maeface/train/loop.hpp"
#include "maeface/vitmae/checkpoint.hpp"

namespace fs = std::filesystem;

namespace maeface {

namespace {

struct Context {
  std::ostream& out;
  std::ostream& err;
  void log(const std::string& s) const { err << "[maeface] " << s << '\n' << std::flush; }
};

// Flag values land in a key map so a config file and flags merge uniformly.
struct Flags {
  KeyValues kv;
  std::string config;
  std::uint64_t seed = 0;
};

void key_option(CLI::App* app, Flags& f, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(flag, [&f, key](const std::string& v) { f.kv[key] = v; }, help);
}

void key_flag(CLI::App* app, Flags& f, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_flag_function(flag, [&f, key](std::int64_t) { f.kv[key] = "true"; }, help);
}

void seed_option(CLI::App* app, Flags& f) {
  app->add_option("--seed", f.seed, "Run seed; every random draw derives from it")->required();
}

void config_option(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "Configuration file of 'key = value' lines; flags override it");
}

KeyValues merged(const Flags& f) {
  KeyValues kv = f.config.empty() ? KeyValues{} : read_config_file(f.config);
  for (const auto& [k, v] : f.kv) kv[k] = v;
  return kv;
}

// Typed access to a merged key map for the utility commands.
struct Options {
  KeyValues kv;
  std::set<std::string> allowed;

  void check() const {
    for (const auto& [k, v] : kv) {
      if (!allowed.count(k) && k != "seed") throw ConfigError("unknown configuration key '" + k + "'");
    }
  }
  std::string str(const std::string& key, const std::string& fallback = "") const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
  }
  std::string need(const std::string& key, const std::string& flag) const {
    auto it = kv.find(key);
    if (it == kv.end() || it->second.empty()) throw ConfigError("missing " + flag + " (or '" + key + " =' in --config)");
    return it->second;
  }
  std::size_t size(const std::string& key, std::size_t fallback) const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : kv_size(key, it->second);
  }
  double real(const std::string& key, double fallback) const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : kv_double(key, it->second);
  }
  std::string snapshot() const {
    std::string s = "# maeface command options\n";
    for (const auto& [k, v] : kv) s += k + " = " + v + '\n';
    return s;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw DataError("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

void write_snapshot_beside(const std::string& file, const std::string& snapshot) {
  const fs::path p(file);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_text(p.string() + ".resolved.cfg", snapshot);
}

std::string out_or_default(const Options& o, const std::string& fallback) { return o.str("out", fallback); }

// ---- training commands ----

ModelWeights<float> initial_weights(const RunSettings& s, const Context& ctx) {
  auto w = init_weights<float>(s.model, s.train.seed);
  const std::string init = s.get("init", "scratch");
  if (init == "scratch") return w;
  const std::string prefix = "checkpoint:";
  if (init.rfind(prefix, 0) != 0) throw ConfigError("--init expects scratch or checkpoint:<path>, got '" + init + "'");
  const LoadReport rep = load_encoder_subset(w, init.substr(prefix.size()));
  ctx.log("encoder initialized from " + init.substr(prefix.size()) + " (" + std::to_string(rep.loaded.size()) +
          " tensors; decoder and head entries ignored)");
  return w;
}

RunOptions run_options(const std::string& out_dir, const Context& ctx) {
  RunOptions o;
  o.out_dir = out_dir;
  o.log = [&ctx](const std::string& s) { ctx.log(s); };
  return o;
}

std::string need_manifest(const RunSettings& s, const std::string& command) {
  const std::string m = s.get("manifest");
  if (m.empty()) throw ConfigError(command + ": no manifest given (use --manifest or 'manifest =' in --config)");
  return m;
}

int cmd_pretrain(const Flags& f, const std::string& out_dir, const std::string& resume, std::uint64_t stop_after,
                 const Context& ctx) {
  RunSettings s = resolve_settings(Task::pretrain, merged(f), {}, f.seed);
  const std::string manifest = need_manifest(s, "pretrain");
  prepare_output_dir(out_dir, s.to_text());
  const Manifest m = read_manifest(manifest);
  const Dataset data = load_dataset(m, s.model);
  ctx.log("pre-training on " + std::to_string(data.size()) + " images, " + std::to_string(s.train.epochs) + " epochs");
  RunOptions o = run_options(out_dir, ctx);
  o.resume = resume;
  o.stop_after = stop_after;
  const RunResult r = pretrain_loop(init_weights<float>(s.model, s.train.seed), data, s.train, o);
  ctx.out << "steps " << r.optim.step << (r.completed ? " (complete)" : " (stopped)") << ", final loss "
          << (r.trace.empty() ? std::string("n/a") : std::to_string(r.trace.back().loss)) << '\n'
          << "checkpoint " << (fs::path(out_dir) / kCheckpointFile).string() << '\n';
  return kExitOk;
}

int cmd_finetune(const Flags& f, Task task, const std::string& out_dir, const std::string& resume, std::uint64_t stop_after,
                 const Context& ctx) {
  RunSettings s = resolve_settings(task, merged(f), {}, f.seed);
  const std::string manifest_path = need_manifest(s, "finetune");
  Manifest full = read_manifest(manifest_path);
  if (!s.explicit_keys.count("num_aus")) s.model.num_aus = full.num_aus();

  Manifest train_m = full, eval_m;
  bool have_eval = false;
  if (!s.get("fold").empty()) {
    const std::size_t k = kv_size("folds", s.get("folds", "3"));
    const std::size_t fold = kv_size("fold", s.get("fold"));
    if (fold >= k) throw ConfigError("--fold must be below --folds");
    if (!s.get("eval_manifest").empty()) throw ConfigError("--fold and --eval-manifest are mutually exclusive");
    const FoldAssignment fa = kfold_by_subject(full, k, s.train.seed);
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < k; ++i) {
      if (i != fold) rest.insert(rest.end(), fa.subjects[i].begin(), fa.subjects[i].end());
    }
    train_m = select_subjects(full, rest);
    eval_m = select_subjects(full, fa.subjects[fold]);
    have_eval = true;
    ctx.log("fold " + std::to_string(fold) + " of " + std::to_string(k) + ": " + std::to_string(train_m.records.size()) +
            " training / " + std::to_string(eval_m.records.size()) + " held-out records, subject-exclusive");
  } else if (!s.get("eval_manifest").empty()) {
    eval_m = read_manifest(s.get("eval_manifest"));
    have_eval = true;
  }
  if (!s.get("fraction").empty()) {
    const double fraction = kv_double("fraction", s.get("fraction"));
    const PartialPlan plan = partial_protocol(train_m, fraction, s.train);
    ctx.log("fraction " + s.get("fraction") + ": every " + std::to_string(plan.every_n) + "th frame per subject, " +
            std::to_string(plan.subset.records.size()) + " of " + std::to_string(train_m.records.size()) + " records, " +
            std::to_string(plan.epochs) + " epochs");
    train_m = plan.subset;
    s.train = plan.config;
  }
  prepare_output_dir(out_dir, s.to_text());

  const Dataset train = load_dataset(train_m, s.model);
  Dataset eval;
  if (have_eval) eval = load_dataset(eval_m, s.model);
  require_labels(train, task);
  if (have_eval) require_labels(eval, task);
  ModelWeights<float> w = initial_weights(s, ctx);
  RunOptions o = run_options(out_dir, ctx);
  o.resume = resume;
  o.stop_after = stop_after;
  ctx.log("fine-tuning (" + std::string(task_name(task)) + ") on " + std::to_string(train.size()) + " images, " +
          std::to_string(s.train.epochs) + " epochs");
  const RunResult r = finetune_loop(std::move(w), train, have_eval ? &eval : nullptr, s.train, o);
  if (!r.evals.empty()) {
    MetricsReport rep = r.evals.back();
    if (!s.get("fold").empty()) rep.fold = int(kv_size("fold", s.get("fold")));
    write_text(fs::path(out_dir) / kMetricsFile, rep.to_csv());
    write_text(fs::path(out_dir) / "metrics.txt", rep.to_table());
    ctx.out << rep.to_table();
  } else {
    ctx.log("no held-out set given; metrics skipped");
  }
  ctx.out << "checkpoint " << (fs::path(out_dir) / kCheckpointFile).string() << '\n';
  return kExitOk;
}

int cmd_eval(const Options& o, const Context& ctx) {
  o.check();
  const auto w = load_weights<float>(o.need("checkpoint", "--checkpoint"));
  if (w.config.task == Task::pretrain) throw ConfigError("eval needs a fine-tuned checkpoint; this one is a pre-training model");
  if (!o.str("task").empty() && parse_task(o.str("task")) != w.config.task) {
    throw ConfigError("checkpoint holds a " + std::string(task_name(w.config.task)) + " model, not " + o.str("task"));
  }
  const Manifest m = read_manifest(o.need("manifest", "--manifest"));
  if (m.num_aus() != w.config.num_aus) throw DataError("manifest AU count differs from the checkpoint head");
  const Dataset d = load_dataset(m, w.config);
  const std::string dir = o.need("out", "--out");
  prepare_output_dir(dir, o.snapshot());
  const MetricsReport r = evaluate(w, d, o.real("threshold", 0.5));
  write_text(fs::path(dir) / kMetricsFile, r.to_csv());
  write_text(fs::path(dir) / "metrics.txt", r.to_table());
  ctx.out << r.to_table();
  return kExitOk;
}

std::vector<double> parse_ratios(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(kv_double("mask_ratio", item));
  if (out.empty()) throw ConfigError("--mask-ratio needs at least one value");
  return out;
}

int cmd_reconstruct(const Options& o, std::uint64_t seed, const Context& ctx) {
  o.check();
  const auto w = load_weights<float>(o.need("checkpoint", "--checkpoint"));
  const Image img = read_image(o.need("image", "--image"));
  const std::vector<double> ratios = parse_ratios(o.str("mask_ratio", std::to_string(w.config.mask_ratio)));
  for (double r : ratios) {
    if (!(r >= 0.0 && r < 1.0)) throw DomainError("mask ratio must lie in [0, 1)");
  }
  const std::string dir = o.need("out", "--out");
  prepare_output_dir(dir, o.snapshot());
  for (double r : ratios) {
    const Triptych t = render_triptych(w, img, r, seed);
    char name[64];
    std::snprintf(name, sizeof name, "recon_r%.2f.ppm", r);
    write_image(t.image, (fs::path(dir) / name).string());
    ctx.out << name << ": " << t.plan.num_masked() << " of " << t.plan.size() << " patches masked\n";
  }
  return kExitOk;
}

int cmd_stats(const Options& o, const Context& ctx) {
  o.check();
  const Manifest m = read_manifest(o.need("manifest", "--manifest"));
  const std::string dir = o.need("out", "--out");
  prepare_output_dir(dir, o.snapshot());
  const LabelStats s = label_stats(m);
  write_text(fs::path(dir) / "stats.csv", s.to_csv());
  ctx.out << s.to_table();
  return kExitOk;
}

struct AblationRow {
  std::string label;
  LossFlavor flavor;
  bool norm;
  double pretrain_loss = 0;
  double f1 = 0;
  std::uint64_t order_hash = 0;
};

int cmd_ablate_loss(const Options& o, std::uint64_t seed, const Context& ctx) {
  o.check();
  const std::string dir = o.need("out", "--out");
  // Data: given manifests, or an in-memory synthetic corpus.
  ModelConfig mc = ModelConfig::desk_preset();
  Dataset pre, train, test;
  if (!o.str("manifest").empty()) {
    const Manifest pm = read_manifest(o.str("manifest"));
    const Manifest tm = read_manifest(o.need("train_manifest", "--train-manifest"));
    const Manifest em = read_manifest(o.need("test_manifest", "--test-manifest"));
    mc.num_aus = tm.num_aus();
    pre = load_dataset(pm, mc);
    train = load_dataset(tm, mc);
    test = load_dataset(em, mc);
  } else {
    SynthOptions po, tro, teo;
    po.first_subject = 100;
    po.num_subjects = 80;
    tro.num_subjects = 10;
    teo.first_subject = 10;
    teo.num_subjects = 10;
    pre = dataset_from_corpus(synth_corpus(seed * 3 + 1, o.size("pretrain_images", 2000), po), mc);
    train = dataset_from_corpus(synth_corpus(seed * 3 + 2, o.size("train_images", 200), tro), mc);
    test = dataset_from_corpus(synth_corpus(seed * 3 + 3, o.size("test_images", 200), teo), mc);
    mc.num_aus = tro.num_aus;
  }
  TrainConfig pc = TrainConfig::desk_pretrain();
  pc.seed = seed;
  pc.epochs = o.size("pretrain_epochs", pc.epochs);
  pc.warmup_epochs = std::min(pc.warmup_epochs, pc.epochs);
  TrainConfig fc = TrainConfig::desk_finetune(Task::detect);
  fc.seed = seed;
  fc.epochs = o.size("finetune_epochs", fc.epochs);
  fc.warmup_epochs = std::min(fc.warmup_epochs, fc.epochs);
  fc.eval_every = 0;
  KeyValues snap = o.kv;
  snap["seed"] = std::to_string(seed);
  Options so{snap, {}};
  prepare_output_dir(dir, so.snapshot());

  std::vector<AblationRow> rows{{"L2 w/o", LossFlavor::l2, false},
                                {"L2 w/", LossFlavor::l2, true},
                                {"L1 w/o", LossFlavor::l1, false},
                                {"L1 w/", LossFlavor::l1, true}};
  for (auto& row : rows) {
    ModelConfig m = mc;
    m.task = Task::pretrain;
    m.norm_pix_target = row.norm;
    TrainConfig c = pc;
    c.loss = row.flavor;
    ctx.log("ablation " + row.label + " norm: pre-training");
    const RunResult pr = pretrain_loop(init_weights<float>(m, seed), pre, c, run_options("", ctx));
    row.pretrain_loss = pr.trace.back().loss;
    row.order_hash = pr.order_hash;
    ModelConfig fm = m;
    fm.task = Task::detect;
    auto w = init_weights<float>(fm, seed);
    for (auto& p : w.params) {
      if (is_encoder_param(p.name)) p.value = pr.weights.at(p.name);
    }
    ctx.log("ablation " + row.label + " norm: fine-tuning");
    const RunResult fr = finetune_loop(std::move(w), train, &test, fc, run_options("", ctx));
    row.f1 = fr.evals.back().column("f1").average().value_or(0.0);
  }
  std::ostringstream csv, table;
  csv << "loss,norm,label,pretrain_loss,avg_f1,data_order_hash\n";
  table << "Loss  Norm   pre-train loss   avg F1   data order\n";
  for (const auto& r : rows) {
    char hash[32], line[160];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.order_hash));
    csv << flavor_name(r.flavor) << ',' << (r.norm ? "w/" : "w/o") << ',' << r.label << ',' << r.pretrain_loss << ','
        << r.f1 << ',' << hash << '\n';
    std::snprintf(line, sizeof line, "%-5s %-6s %14.5f   %6.2f   %s\n", r.flavor == LossFlavor::l1 ? "L1" : "L2",
                  r.norm ? "w/" : "w/o", r.pretrain_loss, 100.0 * r.f1, hash);
    table << line;
  }
  const bool same_order = std::all_of(rows.begin(), rows.end(), [&](const AblationRow& r) { return r.order_hash == rows[0].order_hash; });
  table << "data order identical across runs: " << (same_order ? "yes" : "NO") << '\n'
        << "L1 w/ norm vs L2 w/ norm: " << (rows[3].f1 > rows[1].f1 ? "L1 higher" : "L1 not higher")
        << " (reported, not gated)\n";
  write_text(fs::path(dir) / "ablation.csv", csv.str());
  write_text(fs::path(dir) / "ablation.txt", table.str());
  ctx.out << table.str();
  return same_order ? kExitOk : kExitNumerical;
}

int cmd_synth(const Options& o, std::uint64_t seed, const Context& ctx) {
  o.check();
  SynthOptions so;
  so.image_size = o.size("image_size", so.image_size);
  so.num_aus = o.size("num_aus", so.num_aus);
  so.num_subjects = o.size("subjects", so.num_subjects);
  so.first_subject = o.size("first_subject", so.first_subject);
  so.p_zero = o.real("p_zero", so.p_zero);
  so.tail_q = o.real("tail_q", so.tail_q);
  so.dataset = o.str("dataset", so.dataset);
  const std::size_t count = o.size("count", 100);
  const std::string dir = o.need("out", "--out");
  KeyValues snap = o.kv;
  snap["seed"] = std::to_string(seed);
  prepare_output_dir(dir, Options{snap, {}}.snapshot());
  const SynthCorpus c = synth_corpus(seed, count, so);
  write_corpus(c, dir);
  ctx.out << "wrote " << count << " images and " << (fs::path(dir) / "manifest.jsonl").string() << '\n';
  return kExitOk;
}

int cmd_subsample(const Options& o, const Context& ctx) {
  o.check();
  const Manifest m = read_manifest(o.need("manifest", "--manifest"));
  const std::size_t n = o.size("n", 0);
  if (n == 0) throw ConfigError("--n must be at least 1");
  const std::string out = o.need("out", "--out");
  write_snapshot_beside(out, o.snapshot());
  Manifest s = subsample_every_n(m, n);
  // Image paths stay valid relative to the new manifest location.
  const fs::path from = fs::absolute(fs::path(m.base_dir.empty() ? "." : m.base_dir));
  const fs::path to = fs::absolute(fs::path(out)).parent_path();
  for (auto& r : s.records) {
    if (!fs::path(r.image).is_absolute()) r.image = fs::relative(from / r.image, to).string();
  }
  write_manifest(s, out);
  ctx.out << "kept " << s.records.size() << " of " << m.records.size() << " records (every " << n << "th frame per subject)\n";
  return kExitOk;
}

int cmd_kfold(const Options& o, std::uint64_t seed, const Context& ctx) {
  o.check();
  const Manifest m = read_manifest(o.need("manifest", "--manifest"));
  const FoldAssignment f = kfold_by_subject(m, o.size("k", 3), seed);
  const std::string out = o.need("out", "--out");
  KeyValues snap = o.kv;
  snap["seed"] = std::to_string(seed);
  write_snapshot_beside(out, Options{snap, {}}.snapshot());
  write_text(out, f.to_csv());
  for (std::size_t i = 0; i < f.k; ++i) ctx.out << "fold " << i << ": " << f.subjects[i].size() << " subjects\n";
  return kExitOk;
}

int cmd_clean(const Options& o, const Context& ctx) {
  o.check();
  const Manifest m = read_manifest(o.need("manifest", "--manifest"));
  const std::string out = o.need("out", "--out");
  write_snapshot_beside(out, o.snapshot());
  CleanResult r = clean_filter(m, o.size("min_side", 64));
  const fs::path from = fs::absolute(fs::path(m.base_dir.empty() ? "." : m.base_dir));
  const fs::path to = fs::absolute(fs::path(out)).parent_path();
  for (auto& rec : r.kept.records) {
    if (!fs::path(rec.image).is_absolute()) rec.image = fs::relative(from / rec.image, to).string();
  }
  write_manifest(r.kept, out);
  std::string dropped = "image,reason\n";
  for (const auto& d : r.dropped) dropped += d.image + ",\"" + d.reason + "\"\n";
  write_text(out + ".dropped.csv", dropped);
  ctx.out << "kept " << r.kept.records.size() << ", dropped " << r.dropped.size() << '\n';
  return kExitOk;
}

int cmd_align(const Options& o, const Context& ctx) {
  o.check();
  const Manifest m = read_manifest(o.need("manifest", "--manifest"));
  const std::string dir = o.need("out", "--out");
  const std::size_t size = o.size("size", 0);
  const double margin = o.real("margin", 0.0);
  prepare_output_dir(dir, o.snapshot());
  fs::create_directories(fs::path(dir) / "images");
  Manifest out = m;
  out.base_dir = dir;
  out.image_size = size;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    SampleRecord& r = out.records[i];
    if (!r.landmarks) throw DataError("record " + r.image + " has no landmarks to align with");
    const Image img = read_image(m.image_path(m.records[i]));
    const Landmarks& lm = *r.landmarks;
    const AlignResult a = align_face(img, lm[0], lm[1], std::vector<Point>(lm.begin(), lm.end()));
    // Box: the rotated bbox corners, or the landmark extent doubled.
    std::vector<Point> pts;
    const Point center{(lm[0].x + lm[1].x) / 2, (lm[0].y + lm[1].y) / 2};
    if (r.bbox) {
      const BBox& b = *r.bbox;
      for (Point p : {Point{double(b.x), double(b.y)}, Point{double(b.x + b.w), double(b.y)},
                      Point{double(b.x), double(b.y + b.h)}, Point{double(b.x + b.w), double(b.y + b.h)}}) {
        pts.push_back(rotate_point(p, a.angle, center));
      }
    } else {
      pts = a.landmarks;
    }
    double x0 = pts[0].x, x1 = x0, y0 = pts[0].y, y1 = y0;
    for (const auto& p : pts) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
    if (!r.bbox) {
      const double w = x1 - x0, h = y1 - y0;
      x0 -= w / 2;
      x1 += w / 2;
      y0 -= h / 2;
      y1 += h / 2;
    }
    const BBox box{int(std::floor(x0)), int(std::floor(y0)), std::max(1, int(std::ceil(x1 - x0))), std::max(1, int(std::ceil(y1 - y0)))};
    const BBox region = square_region(box, margin);
    Image crop = crop_square(a.image, box, margin);
    double scale = 1.0;
    if (size > 0 && crop.width != size) {
      scale = double(size) / double(crop.width);
      crop = resize_bilinear(crop, size);
    }
    Landmarks moved;
    for (std::size_t k = 0; k < 5; ++k) {
      // Pixel centres map through the resize at half-pixel offsets.
      moved[k] = Point{(a.landmarks[k].x - region.x + 0.5) * scale - 0.5, (a.landmarks[k].y - region.y + 0.5) * scale - 0.5};
    }
    char name[64];
    std::snprintf(name, sizeof name, "images/%06zu.%s", i, crop.channels == 1 ? "pgm" : "ppm");
    write_image(crop, (fs::path(dir) / name).string());
    r.image = name;
    r.landmarks = moved;
    r.bbox = BBox{0, 0, int(crop.width), int(crop.height)};
  }
  write_manifest(out, (fs::path(dir) / "manifest.jsonl").string());
  ctx.out << "aligned " << out.records.size() << " images into " << dir << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Context ctx{out, err};
  CLI::App app{"maeface: masked-autoencoder pre-training and AU fine-tuning on faces", "maeface"};
  app.require_subcommand(1);
  Flags f;
  std::string out_dir, resume, task;
  std::uint64_t stop_after = 0;
  std::set<std::string> allowed;

  auto train_flags = [&](CLI::App* sub) {
    config_option(sub, f);
    seed_option(sub, f);
    key_option(sub, f, "--manifest", "manifest", "Training manifest (JSON lines)");
    key_option(sub, f, "--preset", "preset", "desk (default) or paper");
    key_option(sub, f, "--epochs", "epochs", "Training epochs");
    key_option(sub, f, "--warmup-epochs", "warmup_epochs", "Linear warmup epochs");
    key_option(sub, f, "--batch-size", "batch_size", "Effective batch size (learning-rate scaling uses it)");
    key_option(sub, f, "--accum-steps", "accum_steps", "Micro-batches per optimizer step");
    key_option(sub, f, "--base-lr", "base_lr", "Learning rate per 256 samples");
    key_option(sub, f, "--weight-decay", "weight_decay", "AdamW decoupled weight decay");
    key_option(sub, f, "--checkpoint-every", "checkpoint_every", "Steps between checkpoints (0: end only)");
    sub->add_option("--out", out_dir, "Output directory")->required();
    sub->add_option("--resume", resume, "Training state file to continue from");
    sub->add_option("--stop-after", stop_after, "Stop after this many optimizer steps (for interrupted runs)");
  };

  CLI::App* pre = app.add_subcommand("pretrain", "Masked-autoencoder pre-training");
  train_flags(pre);
  key_option(pre, f, "--loss", "loss", "l1 or l2");
  key_option(pre, f, "--norm-pix", "norm_pix_target", "Per-patch normalized targets (true/false)");
  key_option(pre, f, "--mask-ratio", "mask_ratio", "Fraction of patches masked");

  CLI::App* fine = app.add_subcommand("finetune", "AU detection or intensity fine-tuning");
  train_flags(fine);
  fine->add_option("--task", task, "detect or intensity")->required();
  key_option(fine, f, "--init", "init", "scratch or checkpoint:<path>");
  key_option(fine, f, "--eval-manifest", "eval_manifest", "Held-out manifest evaluated during training");
  key_option(fine, f, "--fraction", "fraction", "Partial-data protocol: 0.1, 0.01, 0.005, 0.002 or 0.001");
  key_option(fine, f, "--fold", "fold", "Hold out this subject-exclusive fold");
  key_option(fine, f, "--folds", "folds", "Number of folds (default 3)");
  key_option(fine, f, "--eval-every", "eval_every", "Epochs between evaluations");
  key_flag(fine, f, "--freeze-encoder", "freeze_encoder", "Train only the head (linear probe)");

  auto tool = [&](const std::string& name, const std::string& help, std::vector<std::array<std::string, 3>> opts,
                  bool seeded) {
    CLI::App* sub = app.add_subcommand(name, help);
    config_option(sub, f);
    if (seeded) seed_option(sub, f);
    for (const auto& o : opts) key_option(sub, f, o[0], o[1], o[2]);
    return sub;
  };
  CLI::App* eval = tool("eval", "Evaluate a fine-tuned checkpoint",
                        {{{"--checkpoint", "checkpoint", "Model checkpoint"},
                          {"--manifest", "manifest", "Labeled manifest"},
                          {"--task", "task", "Expected task (checked against the checkpoint)"},
                          {"--threshold", "threshold", "Detection threshold (default 0.5)"},
                          {"--out", "out", "Directory for metrics.csv"}}},
                        false);
  CLI::App* recon = tool("reconstruct", "Render masked | reconstruction | original triptychs",
                         {{{"--checkpoint", "checkpoint", "Pre-training checkpoint"},
                           {"--image", "image", "Input PGM/PPM"},
                           {"--mask-ratio", "mask_ratio", "One ratio or a comma list, e.g. 0.5,0.75,0.9"},
                           {"--out", "out", "Output directory"}}},
                         true);
  CLI::App* stats = tool("stats", "AU label distribution statistics",
                         {{{"--manifest", "manifest", "Labeled manifest"}, {"--out", "out", "Directory for stats.csv"}}}, false);
  CLI::App* ablate = tool("ablate-loss", "Pre-training loss ablation: {L2, L1} x {w/o, w/} normalization",
                          {{{"--manifest", "manifest", "Pre-training manifest (default: synthetic corpus)"},
                            {"--train-manifest", "train_manifest", "Labeled training manifest"},
                            {"--test-manifest", "test_manifest", "Labeled test manifest"},
                            {"--pretrain-epochs", "pretrain_epochs", "Pre-training epochs per run"},
                            {"--finetune-epochs", "finetune_epochs", "Fine-tuning epochs per run"},
                            {"--pretrain-images", "pretrain_images", "Synthetic pre-training images (default 2000)"},
                            {"--train-images", "train_images", "Synthetic training images (default 200)"},
                            {"--test-images", "test_images", "Synthetic test images (default 200)"},
                            {"--out", "out", "Output directory"}}},
                          true);
  CLI::App* synth = tool("synth", "Write a synthetic face corpus",
                         {{{"--count", "count", "Number of images (default 100)"},
                           {"--image-size", "image_size", "Side in pixels (default 32)"},
                           {"--num-aus", "num_aus", "AUs, at most 4"},
                           {"--subjects", "subjects", "Subject pool size"},
                           {"--first-subject", "first_subject", "First subject id of the pool"},
                           {"--p-zero", "p_zero", "P(intensity 0)"},
                           {"--tail-q", "tail_q", "Geometric tail ratio of intensities 1..5"},
                           {"--dataset", "dataset", "Dataset name in the manifest"},
                           {"--out", "out", "Output directory"}}},
                         true);
  CLI::App* sub = tool("subsample", "Keep every n-th frame per subject",
                       {{{"--manifest", "manifest", "Input manifest"}, {"--n", "n", "Keep every n-th frame"}, {"--out", "out", "Output manifest"}}},
                       false);
  CLI::App* align = tool("align", "Level the eyes, crop square and resize",
                         {{{"--manifest", "manifest", "Manifest with landmarks"},
                           {"--size", "size", "Output side (0 keeps the crop size)"},
                           {"--margin", "margin", "Extra margin around the box (default 0)"},
                           {"--out", "out", "Output directory"}}},
                         false);
  CLI::App* kfold = tool("kfold", "Subject-exclusive fold assignment",
                         {{{"--manifest", "manifest", "Input manifest"}, {"--k", "k", "Number of folds (default 3)"}, {"--out", "out", "Output CSV"}}},
                         true);
  CLI::App* clean = tool("clean", "Drop unreadable and low-resolution images",
                         {{{"--manifest", "manifest", "Input manifest"},
                           {"--min-side", "min_side", "Minimum image side (default 64)"},
                           {"--out", "out", "Output manifest"}}},
                         false);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "maeface: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  }

  auto options = [&](CLI::App*, std::set<std::string> keys) { return Options{merged(f), std::move(keys)}; };
  try {
    if (pre->parsed()) return cmd_pretrain(f, out_dir, resume, stop_after, ctx);
    if (fine->parsed()) {
      const Task t = parse_task(task);
      if (t == Task::pretrain) throw ConfigError("finetune --task must be detect or intensity");
      return cmd_finetune(f, t, out_dir, resume, stop_after, ctx);
    }
    if (eval->parsed()) return cmd_eval(options(eval, {"checkpoint", "manifest", "task", "threshold", "out"}), ctx);
    if (recon->parsed()) return cmd_reconstruct(options(recon, {"checkpoint", "image", "mask_ratio", "out"}), f.seed, ctx);
    if (stats->parsed()) return cmd_stats(options(stats, {"manifest", "out"}), ctx);
    if (ablate->parsed()) {
      return cmd_ablate_loss(options(ablate, {"manifest", "train_manifest", "test_manifest", "pretrain_epochs", "finetune_epochs",
                                              "pretrain_images", "train_images", "test_images", "out"}),
                             f.seed, ctx);
    }
    if (synth->parsed()) {
      return cmd_synth(options(synth, {"count", "image_size", "num_aus", "subjects", "first_subject", "p_zero", "tail_q", "dataset", "out"}),
                       f.seed, ctx);
    }
    if (sub->parsed()) return cmd_subsample(options(sub, {"manifest", "n", "out"}), ctx);
    if (align->parsed()) return cmd_align(options(align, {"manifest", "size", "margin", "out"}), ctx);
    if (kfold->parsed()) return cmd_kfold(options(kfold, {"manifest", "k", "out"}), f.seed, ctx);
    if (clean->parsed()) return cmd_clean(options(clean, {"manifest", "min_side", "out"}), ctx);
  } catch (const ConfigError& e) {
    err << "maeface: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "maeface: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "maeface: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "maeface: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DataError& e) {
    err << "maeface: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const CheckpointError& e) {
    err << "maeface: checkpoint error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "maeface: file error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace maeface
