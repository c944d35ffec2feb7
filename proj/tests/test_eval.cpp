#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "doctest.h"
#include "dsts/common.hpp"
#include "dsts/data.hpp"
#include "dsts/eval.hpp"
#include "dsts/networks.hpp"
#include "dsts/png_io.hpp"
#include "dsts/rng.hpp"

using namespace dsts;
namespace fs = std::filesystem;

namespace {

TimeSeriesDataset micro_dataset(uint64_t seed, int series = 2, int steps = 3) {
  SyntheticParams p;
  p.n_series = series;
  p.time_steps = steps;
  p.image_size = 64;
  p.seed = seed;
  p.split = "test";
  return generate_synthetic_dataset(p);
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("report json round trips") {
  EvalReport r;
  r.task = "demo";
  r.metrics["a"] = 1.5;
  r.metrics["b"] = -2.0;
  r.records["per_item"] = {1.0, 2.0, 3.0};
  r.info["note"] = "hello";
  EvalReport back = EvalReport::from_json(r.to_json());
  CHECK(back.task == "demo");
  CHECK(back.at("a") == 1.5);
  CHECK(back.records["per_item"] == r.records["per_item"]);
  CHECK(back.info["note"] == "hello");
  CHECK_THROWS_AS(back.at("missing"), ConfigError);
  CHECK_THROWS_AS(EvalReport::from_json("nope"), DataError);

  fs::path p = fs::temp_directory_path() / "dsts_report.json";
  r.save(p.string());
  CHECK(EvalReport::load(p.string()).at("b") == -2.0);
  fs::remove(p.string());
}

TEST_CASE("roc_auc fixtures") {
  CHECK(roc_auc({0.9f, 0.8f, 0.2f, 0.1f}, {1, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(roc_auc({0.1f, 0.2f, 0.8f, 0.9f}, {1, 1, 0, 0}) == doctest::Approx(0.0));
  // pos {2,4}, neg {1,3}: wins 3 of 4 comparisons.
  CHECK(roc_auc({1.0f, 2.0f, 3.0f, 4.0f}, {0, 1, 0, 1}) == doctest::Approx(0.75));
  // All scores tie: exactly chance.
  CHECK(roc_auc({0.5f, 0.5f, 0.5f, 0.5f}, {0, 1, 0, 1}) == doctest::Approx(0.5));

  CHECK_THROWS_AS(roc_auc({0.5f, 0.5f}, {1, 1}), ConfigError);
  CHECK_THROWS_AS(roc_auc({0.5f}, {0, 1}), ConfigError);
  CHECK_THROWS_AS(roc_auc({0.5f, 0.5f}, {0, 2}), ConfigError);
  CHECK_THROWS_AS(roc_auc({std::numeric_limits<float>::quiet_NaN(), 0.5f}, {0, 1}), NumericError);
}

TEST_CASE("kmeans recovers well-separated clusters") {
  // Three tight blobs far apart; every restart must find them.
  Rng rng(40);
  const int per = 20;
  Tensor pts({3 * per, 2});
  const float centers[3][2] = {{0.0f, 0.0f}, {10.0f, 0.0f}, {0.0f, 10.0f}};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < per; ++i) {
      pts[(c * per + i) * 2 + 0] = centers[c][0] + rng.normal() * 0.1f;
      pts[(c * per + i) * 2 + 1] = centers[c][1] + rng.normal() * 0.1f;
    }
  Rng krng(41);
  KMeansResult km = kmeans(pts, 3, krng);
  CHECK(km.centroids.shape() == std::vector<int>{3, 2});
  for (int c = 0; c < 3; ++c) {
    int first = km.assign[c * per];
    for (int i = 1; i < per; ++i) CHECK(km.assign[c * per + i] == first);
  }
  CHECK(km.inertia < 3 * per * 0.1);

  // History is non-increasing and ends at the reported inertia.
  REQUIRE_FALSE(km.inertia_history.empty());
  for (size_t i = 1; i < km.inertia_history.size(); ++i)
    CHECK(km.inertia_history[i] <= km.inertia_history[i - 1] + 1e-9);
  CHECK(km.inertia == doctest::Approx(km.inertia_history.back()));
}

TEST_CASE("kmeans with k=1 finds the mean") {
  Tensor pts({4, 1}, {0.0f, 2.0f, 4.0f, 10.0f});
  Rng rng(42);
  KMeansResult km = kmeans(pts, 1, rng);
  CHECK(km.centroids[0] == doctest::Approx(4.0f));
  for (int a : km.assign) CHECK(a == 0);
}

TEST_CASE("kmeans determinism and validation") {
  Rng d1(43), d2(43);
  Tensor pts({10, 3});
  Rng fill(44);
  for (int64_t i = 0; i < pts.numel(); ++i) pts[i] = fill.normal();
  KMeansResult a = kmeans(pts, 3, d1);
  KMeansResult b = kmeans(pts, 3, d2);
  CHECK(a.assign == b.assign);
  CHECK(bitwise_equal(a.centroids, b.centroids));

  Rng r(45);
  CHECK_THROWS_AS(kmeans(pts, 0, r), ConfigError);
  CHECK_THROWS_AS(kmeans(pts, 11, r), ConfigError);
  CHECK_THROWS_AS(kmeans(Tensor({2, 2, 2}), 1, r), ConfigError);
}

TEST_CASE("nearest_centroid breaks ties toward the lowest id") {
  Tensor centroids({2, 1}, {1.0f, 1.0f});
  float p = 5.0f;
  CHECK(nearest_centroid(&p, 1, centroids) == 0);
}

TEST_CASE("translation report is self-consistent") {
  TimeSeriesDataset test = micro_dataset(50);
  ModelParams mp = init_model(ArchDesc::micro(), 51);
  TranslationOptions opt;
  opt.n_pairs = 8;
  EvalReport r = eval_translation(mp, test, {}, opt);
  CHECK(r.task == "translation");
  CHECK(r.at("n_pairs") == 8);
  CHECK(r.records["translation_l1"].size() == 8);
  CHECK(r.at("translation_l1_mean") ==
        doctest::Approx(mean_of(r.records["translation_l1"])).epsilon(1e-9));
  CHECK(r.at("autoencode_l1_mean") ==
        doctest::Approx(mean_of(r.records["autoencode_l1"])).epsilon(1e-9));
  CHECK(r.at("within_series_shared_l1") ==
        doctest::Approx(mean_of(r.records["within_series_shared_l1"])).epsilon(1e-9));
  CHECK(r.at("across_series_shared_l1") ==
        doctest::Approx(mean_of(r.records["across_series_shared_l1"])).epsilon(1e-9));
  CHECK(r.at("translation_l1_mean") > 0.0);

  // Determinism.
  EvalReport r2 = eval_translation(mp, test, {}, opt);
  CHECK(r2.at("translation_l1_mean") == r.at("translation_l1_mean"));
}

TEST_CASE("translation refuses training series unless overridden") {
  TimeSeriesDataset test = micro_dataset(52);
  ModelParams mp = init_model(ArchDesc::micro(), 53);
  std::vector<int64_t> train_ids = {test.series[0].id};
  TranslationOptions opt;
  opt.n_pairs = 4;
  CHECK_THROWS_AS(eval_translation(mp, test, train_ids, opt), ConfigError);
  opt.allow_train_overlap = true;
  CHECK(eval_translation(mp, test, train_ids, opt).at("n_pairs") == 4);
}

TEST_CASE("retrieval matches a brute-force oracle") {
  TimeSeriesDataset ds = micro_dataset(54);
  ModelParams mp = init_model(ArchDesc::micro(), 55);
  RetrievalOptions opt;
  opt.n_queries = 6;
  opt.queries_per_image = 2;
  opt.stride = 8;
  EvalReport r = retrieve_patches(mp, ds, opt);
  CHECK(r.at("n_queries") == 6);
  REQUIRE(r.records["best_shared"].size() == 6);

  const int patch = mp.arch.patch;
  for (size_t q = 0; q < 6; ++q) {
    const SeriesRecord& s = ds.series[static_cast<size_t>(r.records["series_index"][q])];
    const Tensor& db_img = s.images[static_cast<size_t>(r.records["t_database"][q])];
    const Tensor& q_img = s.images[static_cast<size_t>(r.records["t_query"][q])];
    int qx0 = static_cast<int>(r.records["query_x0"][q]);
    int qy0 = static_cast<int>(r.records["query_y0"][q]);

    // One window at a time, straight off the image, double L1.
    Tensor query({1, 4, patch, patch});
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          query[(static_cast<int64_t>(c) * patch + y) * patch + x] =
              q_img[(static_cast<int64_t>(c) * 64 + qy0 + y) * 64 + qx0 + x];
    Tensor qf = shared_features(mp, query, 1);

    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    int idx = 0;
    for (int wy = 0; wy + patch <= 64; wy += opt.stride)
      for (int wx = 0; wx + patch <= 64; wx += opt.stride, ++idx) {
        Tensor win({1, 4, patch, patch});
        for (int c = 0; c < 4; ++c)
          for (int y = 0; y < patch; ++y)
            for (int x = 0; x < patch; ++x)
              win[(static_cast<int64_t>(c) * patch + y) * patch + x] =
                  db_img[(static_cast<int64_t>(c) * 64 + wy + y) * 64 + wx + x];
        Tensor wf = shared_features(mp, win, 1);
        double d = 0.0;
        for (int64_t i = 0; i < wf.numel(); ++i)
          d += std::abs(static_cast<double>(qf[i]) - wf[i]);
        d /= static_cast<double>(wf.numel());
        if (d < best_d) {
          best_d = d;
          best = idx;
        }
      }
    CHECK(best == static_cast<int>(r.records["best_shared"][q]));
  }
}

TEST_CASE("retrieval is perfect when the database frame equals the query frame") {
  // Hand-built series with two identical frames: pixel and feature argmin
  // both land exactly on grid-aligned queries.
  TimeSeriesDataset ds = micro_dataset(56, 1, 2);
  ds.series[0].images[1] = ds.series[0].images[0];
  ModelParams mp = init_model(ArchDesc::micro(), 57);
  RetrievalOptions opt;
  opt.n_queries = 8;
  opt.queries_per_image = 8;
  opt.stride = 1;  // every query window exists in the database
  EvalReport r = retrieve_patches(mp, ds, opt);
  CHECK(r.at("recall_at_1_shared") == doctest::Approx(1.0));
  CHECK(r.at("recall_at_1_pixel") == doctest::Approx(1.0));
}

TEST_CASE("classifier modes behave per contract") {
  // Hand-built 8 px patches: the generator only makes 64-multiples, and this
  // case is about mode contracts, not terrain realism. Classes get distinct
  // means so the head has something to latch onto.
  LabeledPatches lp;
  lp.n_classes = 3;
  lp.patches = Tensor({18, 4, 8, 8});
  Rng prng(58);
  prng.fill_normal(lp.patches.data(), lp.patches.numel(), 0.0f, 0.2f);
  int64_t item = lp.patches.numel() / 18;
  for (int i = 0; i < 18; ++i) {
    lp.labels.push_back(i / 6);
    float shift = 0.4f * static_cast<float>(i / 6 - 1);
    for (int64_t j = 0; j < item; ++j) lp.patches[i * item + j] += shift;
  }
  ModelParams mp = init_model(ArchDesc::micro(), 59);
  ModelParams snapshot = mp;

  ClassifierOptions opt;
  opt.epochs = 2;
  opt.batch_size = 4;
  opt.hidden = 8;
  EvalReport frozen = train_classifier_head(mp, lp, opt);
  CHECK(frozen.at("n_classes") == 3);
  CHECK(frozen.at("n_train") + frozen.at("n_test") == 18);
  CHECK(frozen.at("accuracy") >= 0.0);
  CHECK(frozen.at("accuracy") <= 1.0);
  CHECK(frozen.info.at("mode") == "frozen");

  // Frozen mode must leave the model untouched, bit for bit.
  auto ga = mp.groups(), gs = snapshot.groups();
  for (size_t i = 0; i < ga.size(); ++i)
    for (size_t j = 0; j < ga[i]->params.size(); ++j)
      CHECK(bitwise_equal(ga[i]->params[j].value, gs[i]->params[j].value));

  // The other modes train private copies; the caller's weights survive
  // those too. Their reports must still differ from frozen's, since the
  // encoder they evaluate with is not the frozen one.
  opt.mode = ClsMode::finetune;
  EvalReport ft = train_classifier_head(mp, lp, opt);
  CHECK(ft.info.at("mode") == "finetune");
  opt.mode = ClsMode::scratch;
  EvalReport sc = train_classifier_head(mp, lp, opt);
  CHECK(sc.info.at("mode") == "scratch");
  for (size_t i = 0; i < ga.size(); ++i)
    for (size_t j = 0; j < ga[i]->params.size(); ++j)
      CHECK(bitwise_equal(ga[i]->params[j].value, gs[i]->params[j].value));

  CHECK(cls_mode_from_string("scratch") == ClsMode::scratch);
  CHECK_THROWS_AS(cls_mode_from_string("linear"), ConfigError);
}

TEST_CASE("segmentation splits an image of two materials") {
  // Left half dark and smooth, right half bright and noisy; any feature
  // map separates them, so two clusters must split close to the middle.
  Tensor img({4, 64, 64});
  Rng rng(62);
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        img[(static_cast<int64_t>(c) * 64 + y) * 64 + x] =
            x < 32 ? -0.6f + 0.02f * rng.normal() : 0.6f + 0.3f * rng.normal();

  ModelParams mp = init_model(ArchDesc::micro(), 63);
  SegmentOptions opt;
  opt.k = 2;
  opt.fit_stride = 4;
  opt.assign_stride = 4;
  Segmentation seg = segment_image(mp, img, opt);
  CHECK(seg.labels.shape() == std::vector<int>{64, 64});
  CHECK(seg.windows_fit > 0);
  CHECK(seg.windows_assigned > 0);

  int left_label = static_cast<int>(seg.labels[64 * 32 + 4]);
  int64_t agree = 0, total = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      // Skip the seam where windows straddle both materials.
      if (x >= 24 && x < 40) continue;
      ++total;
      int want = x < 32 ? left_label : 1 - left_label;
      agree += static_cast<int>(seg.labels[static_cast<int64_t>(y) * 64 + x]) == want;
    }
  CHECK(static_cast<double>(agree) / static_cast<double>(total) > 0.9);

  CHECK_THROWS_AS(segment_image(mp, img, SegmentOptions{.k = 10000}), ConfigError);
}

TEST_CASE("identical frames give an exactly zero change map") {
  TimeSeriesDataset ds = micro_dataset(64, 1, 2);
  ModelParams mp = init_model(ArchDesc::micro(), 65);
  const Tensor& a = ds.series[0].images[0];
  ChangeOptions opt;
  opt.stride = 8;
  ChangeMap cm = detect_changes(mp, a, a, opt);
  CHECK(cm.score_map.shape() == std::vector<int>{64, 64});
  CHECK(tmax(cm.score_map) == 0.0f);
  CHECK(tmin(cm.score_map) == 0.0f);
  CHECK(cm.boxes.empty());
  for (const ScoredWindow& w : cm.windows) CHECK(w.score == 0.0f);
}

TEST_CASE("change boxes respect the threshold and ordering") {
  TimeSeriesDataset ds = micro_dataset(66, 1, 3);
  ModelParams mp = init_model(ArchDesc::micro(), 67);
  const Tensor& a = ds.series[0].images[0];
  const Tensor& b = ds.series[0].images[2];
  ChangeOptions opt;
  opt.stride = 8;
  opt.threshold = 0.0f;
  ChangeMap cm = detect_changes(mp, a, b, opt);
  CHECK(cm.windows.size() == 64);  // 8x8 grid of 8px windows on 64px
  for (size_t i = 1; i < cm.boxes.size(); ++i) CHECK(cm.boxes[i - 1].score >= cm.boxes[i].score);
  for (const ScoredWindow& w : cm.boxes) CHECK(w.score > opt.threshold);

  opt.threshold = std::numeric_limits<float>::infinity();
  CHECK(detect_changes(mp, a, b, opt).boxes.empty());

  CHECK_THROWS_AS(detect_changes(mp, a, Tensor({4, 128, 128}), opt), ConfigError);
}

TEST_CASE("window labels follow the truth rectangles") {
  // 64px image, 8px windows, stride 8: row-major 8x8 grid, y outer.
  std::vector<ChangeRect> truth = {{8, 0, 8, 8, 0, 0.5f}};
  std::vector<int> labels = label_windows(truth, 64, 8, 8);
  REQUIRE(labels.size() == 64);
  for (size_t i = 0; i < labels.size(); ++i) CHECK(labels[i] == (i == 1 ? 1 : 0));

  // A rect straddling two windows marks both under any-overlap labeling.
  truth = {{4, 0, 8, 8, 0, 0.5f}};
  labels = label_windows(truth, 64, 8, 8);
  CHECK(labels[0] == 1);
  CHECK(labels[1] == 1);
  CHECK(labels[2] == 0);

  // min_overlap = 0.5: window 0 has 4x8=32 of 64 pixels covered, not more.
  labels = label_windows(truth, 64, 8, 8, 0.5f);
  CHECK(labels[0] == 0);
  CHECK(labels[1] == 0);

  CHECK(label_windows({}, 64, 8, 8) == std::vector<int>(64, 0));
}

TEST_CASE("png byte mapping fixtures") {
  CHECK(unit_to_byte(-1.0f) == 0);
  CHECK(unit_to_byte(1.0f) == 255);
  CHECK(unit_to_byte(0.0f) == 128);
  CHECK(unit_to_byte(-2.0f) == 0);
  CHECK(unit_to_byte(2.0f) == 255);

  Tensor img({4, 8, 8});
  img.fill(0.25f);
  fs::path dir = fs::temp_directory_path() / "dsts_png";
  fs::create_directories(dir);
  export_png((dir / "rgb.png").string(), img);
  CHECK(fs::file_size(dir / "rgb.png") > 8);

  Tensor gray({8, 8});
  export_png_gray((dir / "gray.png").string(), gray, 0.0f, 1.0f);
  CHECK(fs::file_size(dir / "gray.png") > 8);

  Tensor labels({8, 8});
  labels.fill(3.0f);
  export_png_labels((dir / "labels.png").string(), labels);
  CHECK(fs::file_size(dir / "labels.png") > 8);

  CHECK_THROWS_AS(export_png((dir / "bad.png").string(), gray), ConfigError);
  fs::remove_all(dir);
}
