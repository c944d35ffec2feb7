#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "dsts/common.hpp"
#include "dsts/container.hpp"
#include "dsts/data.hpp"
#include "dsts/eval.hpp"
#include "dsts/gradcheck.hpp"
#include "dsts/networks.hpp"
#include "dsts/png_io.hpp"
#include "dsts/trainer.hpp"

namespace fs = std::filesystem;
using namespace dsts;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string());
}

void print_report(const EvalReport& r) {
  std::printf("task: %s\n", r.task.c_str());
  for (const auto& [k, v] : r.metrics) std::printf("  %-28s %.6g\n", k.c_str(), v);
  for (const auto& [k, v] : r.info) std::printf("  %-28s %s\n", k.c_str(), v.c_str());
}

void save_report(const EvalReport& r, const std::string& out_dir, const std::string& name) {
  ensure_dir(fs::path(out_dir) / "reports");
  std::string path = (fs::path(out_dir) / "reports" / name).string();
  r.save(path);
  std::printf("report: %s\n", path.c_str());
}

Checkpoint load_model(const std::string& path) {
  std::fprintf(stderr, "loading checkpoint %s\n", path.c_str());
  return load_checkpoint(path);
}

const SeriesRecord& pick_series(const TimeSeriesDataset& ds, int index) {
  if (index < 0 || index >= static_cast<int>(ds.series.size()))
    throw ConfigError("series index " + std::to_string(index) + " out of range [0, " +
                      std::to_string(ds.series.size()) + ")");
  return ds.series[index];
}

const Tensor& pick_frame(const SeriesRecord& s, int t) {
  if (t < 0 || t >= static_cast<int>(s.images.size()))
    throw ConfigError("time index " + std::to_string(t) + " out of range [0, " +
                      std::to_string(s.images.size()) + ")");
  return s.images[t];
}

// generate-data ------------------------------------------------------------

struct GenArgs {
  std::string out;
  uint64_t seed = 0;
  int series = 64;
  int test_series = 16;
  int time_steps = 8;
  int size = 256;
  float change_prob = 0.5f;
  int max_changes = 2;
  int labeled_per_class = 0;
  int classes = 4;
  int labeled_patch = 64;
};

int run_generate(const GenArgs& a) {
  SyntheticParams p;
  p.n_series = a.series;
  p.time_steps = a.time_steps;
  p.image_size = a.size;
  p.seed = a.seed;
  p.change_prob = a.change_prob;
  p.max_changes = a.max_changes;

  ensure_dir(a.out);
  p.split = "train";
  TimeSeriesDataset train = generate_synthetic_dataset(p);
  train.save((fs::path(a.out) / "train").string());
  std::printf("train: %d series -> %s/train\n", a.series, a.out.c_str());

  if (a.test_series > 0) {
    p.split = "test";
    p.n_series = a.test_series;
    TimeSeriesDataset test = generate_synthetic_dataset(p);
    test.save((fs::path(a.out) / "test").string());
    std::printf("test:  %d series -> %s/test\n", a.test_series, a.out.c_str());
  }

  if (a.labeled_per_class > 0) {
    LabeledPatches lp = generate_labeled_patches(a.labeled_per_class, a.labeled_patch, a.seed,
                                                 a.classes);
    lp.save((fs::path(a.out) / "labeled").string());
    std::printf("labeled: %d classes x %d -> %s/labeled\n", a.classes, a.labeled_per_class,
                a.out.c_str());
  }

  nlohmann::json j;
  j["command"] = "generate-data";
  j["params"] = nlohmann::json::parse(p.to_json());
  j["params"]["n_series"] = a.series;  // p was reused for the test split
  j["params"]["split"] = "train";
  j["test_series"] = a.test_series;
  j["labeled_per_class"] = a.labeled_per_class;
  j["classes"] = a.classes;
  write_file((fs::path(a.out) / "config.json").string(), j.dump(2) + "\n");
  return 0;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, config_file, resume, arch = "standard", gan_form;
  int64_t iters = -1;
  int batch = -1;
  double lr = -1.0;
  int64_t ckpt_every = -1;
  uint64_t seed = 0;
  bool seed_set = false;
};

int run_train(const TrainArgs& a) {
  TimeSeriesDataset ds = TimeSeriesDataset::load(a.data);

  Trainer trainer = [&] {
    if (!a.resume.empty()) {
      Checkpoint ck = load_model(a.resume);
      if (a.iters >= 0) ck.config.iterations = a.iters;
      if (a.ckpt_every >= 0) ck.config.checkpoint_every = a.ckpt_every;
      ck.config.out_dir = a.out;
      ck.config.validate();
      return Trainer(std::move(ck));
    }
    TrainConfig cfg;
    if (!a.config_file.empty()) cfg = TrainConfig::from_json(read_file(a.config_file));
    if (a.iters >= 0) cfg.iterations = a.iters;
    if (a.batch >= 0) cfg.batch_size = a.batch;
    if (a.lr >= 0) cfg.lr_initial = static_cast<float>(a.lr);
    if (a.ckpt_every >= 0) cfg.checkpoint_every = a.ckpt_every;
    if (!a.gan_form.empty()) cfg.gan_form = gan_form_from_string(a.gan_form);
    if (a.seed_set) cfg.seed = a.seed;
    cfg.out_dir = a.out;

    ArchDesc arch;
    if (a.arch == "standard") arch = ArchDesc::standard();
    else if (a.arch == "micro") arch = ArchDesc::micro();
    else throw ConfigError("unknown arch '" + a.arch + "' (standard | micro)");
    cfg.patch_size = arch.patch;
    return Trainer(init_model(arch, cfg.seed), cfg);
  }();

  ensure_dir(a.out);
  {
    nlohmann::json j;
    j["command"] = "train";
    j["data"] = a.data;
    j["train"] = nlohmann::json::parse(trainer.config().to_json());
    j["arch"] = nlohmann::json::parse(trainer.params().arch.to_json());
    if (!a.resume.empty()) j["resumed_from"] = a.resume;
    write_file((fs::path(a.out) / "config.json").string(), j.dump(2) + "\n");
  }

  int64_t total = trainer.config().iterations;
  FitResult fr = trainer.fit(ds, [&](const LossBreakdown& lb) {
    if (lb.iter % 50 == 0 || lb.iter == total)
      std::fprintf(stderr, "iter %6lld/%lld  total %.4f  rec %.4f/%.4f  gan %.4f/%.4f  lr %.2g\n",
                   static_cast<long long>(lb.iter), static_cast<long long>(total), lb.total,
                   lb.rec_xy, lb.rec_yx, lb.gan_x, lb.gan_y, lb.lr);
  });
  if (!fr.log.empty()) {
    const LossBreakdown& last = fr.log.back();
    std::printf("finished at iter %lld: total %.6f\n", static_cast<long long>(last.iter),
                last.total);
  }
  std::printf("checkpoint: %s\n", fr.final_checkpoint.c_str());
  return 0;
}

// eval subcommands -----------------------------------------------------------

struct TranslateArgs {
  std::string checkpoint, data, out = ".";
  int pairs = 256;
  uint64_t seed = 11;
  bool allow_overlap = false;
};

int run_translate(const TranslateArgs& a) {
  Checkpoint ck = load_model(a.checkpoint);
  TimeSeriesDataset ds = TimeSeriesDataset::load(a.data);
  TranslationOptions opt;
  opt.n_pairs = a.pairs;
  opt.seed = a.seed;
  opt.allow_train_overlap = a.allow_overlap;
  EvalReport r = eval_translation(ck.params, ds, ck.train_series_ids, opt);
  print_report(r);
  save_report(r, a.out, "translation.json");
  return 0;
}

struct RetrieveArgs {
  std::string checkpoint, data, out = ".";
  int queries = 64, per_image = 4, stride = 8;
  double iou = 0.5;
  uint64_t seed = 12;
};

int run_retrieve(const RetrieveArgs& a) {
  Checkpoint ck = load_model(a.checkpoint);
  TimeSeriesDataset ds = TimeSeriesDataset::load(a.data);
  RetrievalOptions opt;
  opt.n_queries = a.queries;
  opt.queries_per_image = a.per_image;
  opt.stride = a.stride;
  opt.iou_threshold = static_cast<float>(a.iou);
  opt.seed = a.seed;
  EvalReport r = retrieve_patches(ck.params, ds, opt);
  print_report(r);
  save_report(r, a.out, "retrieval.json");
  return 0;
}

struct ClassifyArgs {
  std::string checkpoint, data, out = ".", mode = "frozen";
  int epochs = 10, batch = 32, hidden = 64;
  double lr = 2e-4, fraction = 0.8;
  uint64_t seed = 13;
};

int run_classify(const ClassifyArgs& a) {
  Checkpoint ck = load_model(a.checkpoint);
  LabeledPatches lp = LabeledPatches::load(a.data);
  ClassifierOptions opt;
  opt.mode = cls_mode_from_string(a.mode);
  opt.epochs = a.epochs;
  opt.batch_size = a.batch;
  opt.hidden = a.hidden;
  opt.lr = static_cast<float>(a.lr);
  opt.train_fraction = static_cast<float>(a.fraction);
  opt.seed = a.seed;
  EvalReport r = train_classifier_head(ck.params, lp, opt);
  print_report(r);
  save_report(r, a.out, "classification.json");
  return 0;
}

struct SegmentArgs {
  std::string checkpoint, data, out = ".";
  int series_index = 0, time = 0, k = 7, fit_stride = 32, assign_stride = 8;
  uint64_t seed = 14;
};

int run_segment(const SegmentArgs& a) {
  Checkpoint ck = load_model(a.checkpoint);
  TimeSeriesDataset ds = TimeSeriesDataset::load(a.data);
  const Tensor& img = pick_frame(pick_series(ds, a.series_index), a.time);
  SegmentOptions opt;
  opt.k = a.k;
  opt.fit_stride = a.fit_stride;
  opt.assign_stride = a.assign_stride;
  opt.seed = a.seed;
  Segmentation seg = segment_image(ck.params, img, opt);

  ensure_dir(fs::path(a.out) / "png");
  std::string png = (fs::path(a.out) / "png" / "segmentation.png").string();
  export_png_labels(png, seg.labels);
  std::string src = (fs::path(a.out) / "png" / "segmentation_input.png").string();
  export_png(src, img);

  EvalReport r;
  r.task = "segmentation";
  r.metrics["k"] = a.k;
  r.metrics["inertia"] = seg.km.inertia;
  r.metrics["kmeans_iters"] = seg.km.iters;
  r.metrics["windows_fit"] = seg.windows_fit;
  r.metrics["windows_assigned"] = seg.windows_assigned;
  r.info["label_png"] = png;
  print_report(r);
  save_report(r, a.out, "segmentation.json");
  return 0;
}

struct ChangesArgs {
  std::string checkpoint, data, out = ".";
  int series_index = 0, t0 = 0, t1 = -1, stride = 32;
  double threshold = 0.05;
};

int run_changes(const ChangesArgs& a) {
  Checkpoint ck = load_model(a.checkpoint);
  TimeSeriesDataset ds = TimeSeriesDataset::load(a.data);
  const SeriesRecord& s = pick_series(ds, a.series_index);
  int t1 = a.t1 < 0 ? static_cast<int>(s.images.size()) - 1 : a.t1;
  const Tensor& img_a = pick_frame(s, a.t0);
  const Tensor& img_b = pick_frame(s, t1);

  ChangeOptions opt;
  opt.stride = a.stride;
  opt.threshold = static_cast<float>(a.threshold);
  ChangeMap cm = detect_changes(ck.params, img_a, img_b, opt);

  ensure_dir(fs::path(a.out) / "png");
  float hi = tmax(cm.score_map);
  std::string png = (fs::path(a.out) / "png" / "change_score.png").string();
  export_png_gray(png, cm.score_map, 0.0f, hi > 0.0f ? hi : 1.0f);

  EvalReport r;
  r.task = "change-detection";
  r.metrics["max_score"] = hi;
  r.metrics["n_windows"] = static_cast<double>(cm.windows.size());
  r.metrics["n_boxes"] = static_cast<double>(cm.boxes.size());
  r.metrics["threshold"] = a.threshold;
  for (const ScoredWindow& wn : cm.windows) {
    r.records["window_x0"].push_back(wn.x0);
    r.records["window_y0"].push_back(wn.y0);
    r.records["window_score"].push_back(wn.score);
  }

  // Score the ranking against ground truth when the pair has known changes.
  std::vector<ChangeRect> truth = s.truth.changes[a.t0];
  truth.insert(truth.end(), s.truth.changes[t1].begin(), s.truth.changes[t1].end());
  if (!truth.empty()) {
    std::vector<int> labels = label_windows(truth, img_a.dim(1), ck.params.arch.patch, opt.stride);
    std::vector<float> scores;
    for (const ScoredWindow& wn : cm.windows) scores.push_back(wn.score);
    bool both = false;
    for (int l : labels)
      if (l != labels[0]) both = true;
    if (both) r.metrics["roc_auc"] = roc_auc(scores, labels);
    else r.info["roc_auc"] = "undefined: all windows share one label";
  } else {
    r.info["roc_auc"] = "undefined: no ground-truth changes between the frames";
  }
  r.info["score_png"] = png;
  print_report(r);
  save_report(r, a.out, "changes.json");
  return 0;
}

// gradcheck / export-png ------------------------------------------------------

int run_gradcheck(uint64_t seed) {
  auto results = gradcheck_suite(seed);
  int failed = 0;
  for (const GradCheckResult& r : results) {
    std::printf("[%s] %-18s %3d coords, worst abs %.3g rel %.3g%s%s\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.coords_checked, r.worst_abs_err, r.worst_rel_err,
                r.pass ? "" : "  <- ", r.pass ? "" : r.detail.c_str());
    failed += !r.pass;
  }
  std::printf("%zu checks, %d failed\n", results.size(), failed);
  return failed == 0 ? 0 : 1;
}

struct ExportArgs {
  std::string input, out;
  std::vector<int> bands = {0, 1, 2};
  bool gray = false;
  double lo = -1.0, hi = 1.0;
};

int run_export(const ExportArgs& a) {
  Tensor t = load_tensor(a.input);
  if (a.gray || t.rank() == 2) {
    if (t.rank() != 2)
      throw ConfigError("grayscale export expects an H x W tensor, got " + t.shape_str());
    export_png_gray(a.out, t, static_cast<float>(a.lo), static_cast<float>(a.hi));
  } else {
    if (a.bands.size() != 3) throw ConfigError("--bands needs exactly three channel indices");
    export_png(a.out, t, {a.bands[0], a.bands[1], a.bands[2]});
  }
  std::printf("wrote %s\n", a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  runtime_init();
  CLI::App app{"disentangled shared/exclusive representations of image time series"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* cgen = app.add_subcommand("generate-data", "write a synthetic train/test dataset");
  cgen->add_option("--out", gen.out, "output directory")->required();
  cgen->add_option("--seed", gen.seed, "master seed");
  cgen->add_option("--series", gen.series, "training series count");
  cgen->add_option("--test-series", gen.test_series, "held-out series count (0 to skip)");
  cgen->add_option("--time-steps", gen.time_steps, "images per series");
  cgen->add_option("--size", gen.size, "image height/width");
  cgen->add_option("--change-prob", gen.change_prob, "per-step probability of content changes");
  cgen->add_option("--max-changes", gen.max_changes, "max change rectangles per step");
  cgen->add_option("--labeled-per-class", gen.labeled_per_class,
                   "also write a labeled patch set with this many patches per class");
  cgen->add_option("--classes", gen.classes, "labeled terrain families");
  cgen->add_option("--labeled-patch", gen.labeled_patch, "labeled patch size");

  TrainArgs tr;
  CLI::App* ctr = app.add_subcommand("train", "train the model on a dataset split");
  ctr->add_option("--data", tr.data, "dataset split directory")->required();
  ctr->add_option("--out", tr.out, "run output directory")->required();
  ctr->add_option("--config", tr.config_file, "TrainConfig JSON file (flags override it)");
  ctr->add_option("--resume", tr.resume, "checkpoint to continue from (ignores --config)");
  ctr->add_option("--arch", tr.arch, "standard | micro");
  ctr->add_option("--iters", tr.iters, "total iterations");
  ctr->add_option("--batch", tr.batch, "batch size");
  ctr->add_option("--lr", tr.lr, "initial learning rate");
  ctr->add_option("--gan-form", tr.gan_form, "paper | canonical");
  ctr->add_option("--ckpt-every", tr.ckpt_every, "checkpoint interval (0: final only)");
  ctr->add_option("--seed", tr.seed, "training seed")->each([&](const std::string&) {
    tr.seed_set = true;
  });

  TranslateArgs tl;
  CLI::App* ctl = app.add_subcommand("eval-translate", "translation / reconstruction metrics");
  ctl->add_option("--checkpoint", tl.checkpoint, "trained checkpoint")->required();
  ctl->add_option("--data", tl.data, "held-out split directory")->required();
  ctl->add_option("--out", tl.out, "output directory");
  ctl->add_option("--pairs", tl.pairs, "evaluation pair count");
  ctl->add_option("--seed", tl.seed, "sampling seed");
  ctl->add_flag("--allow-train-overlap", tl.allow_overlap,
                "evaluate even if the split overlaps the training series");

  RetrieveArgs rt;
  CLI::App* crt = app.add_subcommand("retrieve", "cross-time patch retrieval recall");
  crt->add_option("--checkpoint", rt.checkpoint, "trained checkpoint")->required();
  crt->add_option("--data", rt.data, "dataset split directory")->required();
  crt->add_option("--out", rt.out, "output directory");
  crt->add_option("--queries", rt.queries, "total queries");
  crt->add_option("--per-image", rt.per_image, "queries sharing one database image");
  crt->add_option("--stride", rt.stride, "database window stride");
  crt->add_option("--iou", rt.iou, "IoU counted as correct");
  crt->add_option("--seed", rt.seed, "sampling seed");

  ClassifyArgs cl;
  CLI::App* ccl = app.add_subcommand("classify", "train a classification head on shared features");
  ccl->add_option("--checkpoint", cl.checkpoint, "trained checkpoint")->required();
  ccl->add_option("--data", cl.data, "labeled patch directory")->required();
  ccl->add_option("--out", cl.out, "output directory");
  ccl->add_option("--mode", cl.mode, "frozen | finetune | scratch");
  ccl->add_option("--epochs", cl.epochs, "training epochs");
  ccl->add_option("--batch", cl.batch, "batch size");
  ccl->add_option("--lr", cl.lr, "learning rate");
  ccl->add_option("--hidden", cl.hidden, "head hidden units");
  ccl->add_option("--fraction", cl.fraction, "train fraction of the stratified split");
  ccl->add_option("--seed", cl.seed, "split/init seed");

  SegmentArgs sg;
  CLI::App* csg = app.add_subcommand("segment", "k-means segmentation of one image");
  csg->add_option("--checkpoint", sg.checkpoint, "trained checkpoint")->required();
  csg->add_option("--data", sg.data, "dataset split directory")->required();
  csg->add_option("--out", sg.out, "output directory");
  csg->add_option("--series-index", sg.series_index, "series position in the split");
  csg->add_option("--time", sg.time, "time step");
  csg->add_option("--k", sg.k, "cluster count");
  csg->add_option("--fit-stride", sg.fit_stride, "stride of the windows k-means fits on");
  csg->add_option("--assign-stride", sg.assign_stride, "stride of the voted windows");
  csg->add_option("--seed", sg.seed, "k-means seed");

  ChangesArgs ch;
  CLI::App* cch = app.add_subcommand("detect-changes", "exclusive-code change scoring");
  cch->add_option("--checkpoint", ch.checkpoint, "trained checkpoint")->required();
  cch->add_option("--data", ch.data, "dataset split directory")->required();
  cch->add_option("--out", ch.out, "output directory");
  cch->add_option("--series-index", ch.series_index, "series position in the split");
  cch->add_option("--t0", ch.t0, "first time step");
  cch->add_option("--t1", ch.t1, "second time step (default: last)");
  cch->add_option("--stride", ch.stride, "window stride");
  cch->add_option("--threshold", ch.threshold, "box threshold on window scores");

  uint64_t gc_seed = 0;
  CLI::App* cgc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  cgc->add_option("--seed", gc_seed, "suite seed");

  ExportArgs ex;
  CLI::App* cex = app.add_subcommand("export-png", "render a tensor file as a PNG");
  cex->add_option("--input", ex.input, "tensor file")->required();
  cex->add_option("--out", ex.out, "PNG path")->required();
  cex->add_option("--bands", ex.bands, "three channel indices for RGB")->expected(3);
  cex->add_flag("--gray", ex.gray, "grayscale H x W export");
  cex->add_option("--lo", ex.lo, "gray: value mapped to black");
  cex->add_option("--hi", ex.hi, "gray: value mapped to white");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*cgen) return run_generate(gen);
    if (*ctr) return run_train(tr);
    if (*ctl) return run_translate(tl);
    if (*crt) return run_retrieve(rt);
    if (*ccl) return run_classify(cl);
    if (*csg) return run_segment(sg);
    if (*cch) return run_changes(ch);
    if (*cgc) return run_gradcheck(gc_seed);
    if (*cex) return run_export(ex);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  }
  return 0;
}
