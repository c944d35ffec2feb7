#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "dsts/common.hpp"
#include "dsts/data.hpp"
#include "dsts/rng.hpp"

using namespace dsts;
namespace fs = std::filesystem;

namespace {

SyntheticParams tiny_params() {
  SyntheticParams p;
  p.n_series = 3;
  p.time_steps = 4;
  p.image_size = 64;
  p.seed = 21;
  return p;
}

}  // namespace

TEST_CASE("generation is deterministic") {
  TimeSeriesDataset a = generate_synthetic_dataset(tiny_params());
  TimeSeriesDataset b = generate_synthetic_dataset(tiny_params());
  REQUIRE(a.series.size() == b.series.size());
  for (size_t i = 0; i < a.series.size(); ++i) {
    CHECK(a.series[i].id == b.series[i].id);
    REQUIRE(a.series[i].images.size() == b.series[i].images.size());
    for (size_t t = 0; t < a.series[i].images.size(); ++t)
      CHECK(bitwise_equal(a.series[i].images[t], b.series[i].images[t]));
  }

  SyntheticParams other = tiny_params();
  other.seed = 22;
  TimeSeriesDataset c = generate_synthetic_dataset(other);
  CHECK_FALSE(bitwise_equal(a.series[0].images[0], c.series[0].images[0]));
}

TEST_CASE("values stay in range and cover it") {
  TimeSeriesDataset ds = generate_synthetic_dataset(tiny_params());
  for (const auto& s : ds.series)
    for (const auto& img : s.images) {
      CHECK(tmin(img) > -1.0f);
      CHECK(tmax(img) < 1.0f);
      // Real spread, not a flat gray card: at least half the value range.
      CHECK(tmax(img) - tmin(img) > 1.0f);
    }
}

TEST_CASE("train and test splits use disjoint ids") {
  SyntheticParams p = tiny_params();
  TimeSeriesDataset train = generate_synthetic_dataset(p);
  p.split = "test";
  TimeSeriesDataset test = generate_synthetic_dataset(p);
  std::set<int64_t> seen;
  for (int64_t id : train.ids()) CHECK(seen.insert(id).second);
  for (int64_t id : test.ids()) CHECK(seen.insert(id).second);
}

TEST_CASE("season phase is symmetric around T/2") {
  for (int T : {4, 8, 12}) {
    for (int t = 1; t <= T / 2; ++t)
      CHECK(season_phase(t, T) == doctest::Approx(season_phase(T - t, T)).epsilon(1e-6));
    CHECK(season_phase(0, T) == doctest::Approx(0.0f).epsilon(1e-6));
    CHECK(season_phase(T / 2, T) == doctest::Approx(1.0f).epsilon(1e-6));
  }
}

TEST_CASE("the tone map inverts") {
  Tensor img({4, 8, 8});
  Rng rng(23);
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = rng.next_float() * 1.6f - 0.8f;
  Tensor orig = img;
  apply_season(img, 0.73f);
  CHECK_FALSE(bitwise_equal(img, orig));
  CHECK(tmin(img) > -1.0f);
  CHECK(tmax(img) < 1.0f);
  invert_season(img, 0.73f);
  for (int64_t i = 0; i < img.numel(); ++i)
    CHECK(img[i] == doctest::Approx(orig[i]).epsilon(1e-5));
}

TEST_CASE("step zero is change-free, changes only differ inside their rects") {
  SyntheticParams p = tiny_params();
  p.change_prob = 1.0f;
  TimeSeriesDataset ds = generate_synthetic_dataset(p);
  bool saw_change = false;
  for (const auto& s : ds.series) {
    CHECK(s.truth.changes[0].empty());
    CHECK(s.truth.season.size() == s.images.size());
    for (size_t t = 1; t < s.images.size(); ++t) {
      if (s.truth.changes[t].empty()) continue;
      saw_change = true;
      // Undoing each frame's season must recover the same pristine terrain
      // outside every change rect. Frame 0 carries a tone map too (s=0 is
      // not the identity), so invert both sides.
      Tensor undone = s.images[t];
      invert_season(undone, s.truth.season[t]);
      Tensor base = s.images[0];
      invert_season(base, s.truth.season[0]);
      int size = p.image_size;
      int64_t checked = 0;
      float worst = 0.0f;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          bool inside = false;
          for (const ChangeRect& r : s.truth.changes[t])
            if (x >= r.x0 && x < r.x0 + r.w && y >= r.y0 && y < r.y0 + r.h) inside = true;
          if (inside) continue;
          ++checked;
          for (int c = 0; c < 4; ++c) {
            int64_t at = (static_cast<int64_t>(c) * size + y) * size + x;
            worst = std::max(worst, std::abs(undone[at] - base[at]));
          }
        }
      CHECK(checked > 0);
      CHECK(worst < 5e-5f);
    }
  }
  CHECK(saw_change);
}

TEST_CASE("rect helpers") {
  ChangeRect a{0, 0, 4, 4, 0, 0.0f};
  ChangeRect b{2, 2, 4, 4, 0, 0.0f};
  ChangeRect c{8, 8, 2, 2, 0, 0.0f};
  CHECK(rects_overlap(a, b));
  CHECK_FALSE(rects_overlap(a, c));
  CHECK(rect_iou(a, a) == doctest::Approx(1.0f));
  CHECK(rect_iou(a, b) == doctest::Approx(4.0f / 28.0f).epsilon(1e-6));
  CHECK(rect_iou(a, c) == 0.0f);
}

TEST_CASE("dataset save/load round trips") {
  TimeSeriesDataset ds = generate_synthetic_dataset(tiny_params());
  fs::path dir = fs::temp_directory_path() / "dsts_data_roundtrip";
  fs::remove_all(dir);
  ds.save(dir.string());
  TimeSeriesDataset back = TimeSeriesDataset::load(dir.string());
  CHECK(back.params.seed == ds.params.seed);
  CHECK(back.params.image_size == ds.params.image_size);
  REQUIRE(back.series.size() == ds.series.size());
  for (size_t i = 0; i < ds.series.size(); ++i) {
    CHECK(back.series[i].id == ds.series[i].id);
    for (size_t t = 0; t < ds.series[i].images.size(); ++t)
      CHECK(bitwise_equal(back.series[i].images[t], ds.series[i].images[t]));
    CHECK(back.series[i].truth.season == ds.series[i].truth.season);
    REQUIRE(back.series[i].truth.changes.size() == ds.series[i].truth.changes.size());
    for (size_t t = 0; t < ds.series[i].truth.changes.size(); ++t) {
      REQUIRE(back.series[i].truth.changes[t].size() == ds.series[i].truth.changes[t].size());
      for (size_t k = 0; k < ds.series[i].truth.changes[t].size(); ++k) {
        CHECK(back.series[i].truth.changes[t][k].x0 == ds.series[i].truth.changes[t][k].x0);
        CHECK(back.series[i].truth.changes[t][k].w == ds.series[i].truth.changes[t][k].w);
        CHECK(back.series[i].truth.changes[t][k].kind == ds.series[i].truth.changes[t][k].kind);
      }
    }
  }
  CHECK_THROWS_AS(TimeSeriesDataset::load((dir / "missing").string()), DataError);
  fs::remove_all(dir);
}

TEST_CASE("invalid parameters are rejected") {
  SyntheticParams p = tiny_params();
  p.image_size = 100;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = tiny_params();
  p.time_steps = 1;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = tiny_params();
  p.split = "validation";
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = tiny_params();
  p.change_prob = 1.5f;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("patch pair sampling respects bounds and time distinctness") {
  TimeSeriesDataset ds = generate_synthetic_dataset(tiny_params());
  Rng rng(24);
  PatchPairBatch b = sample_patch_pairs(ds, 16, 32, rng);
  CHECK(b.x.shape() == std::vector<int>{16, 4, 32, 32});
  CHECK(b.y.shape() == std::vector<int>{16, 4, 32, 32});
  REQUIRE(b.prov.size() == 16);
  std::vector<int64_t> id_list = ds.ids();
  std::set<int64_t> ids(id_list.begin(), id_list.end());
  for (const auto& pr : b.prov) {
    CHECK(ids.count(pr.series_id) == 1);
    CHECK(pr.x0 >= 0);
    CHECK(pr.y0 >= 0);
    CHECK(pr.x0 + 32 <= 64);
    CHECK(pr.y0 + 32 <= 64);
    CHECK(pr.tx != pr.ty);
    CHECK(pr.tx >= 0);
    CHECK(pr.tx < 4);
  }

  // The provenance names the exact source window.
  const auto& pr = b.prov[0];
  const SeriesRecord* src = nullptr;
  for (const auto& s : ds.series)
    if (s.id == pr.series_id) src = &s;
  REQUIRE(src);
  const Tensor& img = src->images[static_cast<size_t>(pr.tx)];
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        float want = img[(static_cast<int64_t>(c) * 64 + pr.y0 + y) * 64 + pr.x0 + x];
        float got = b.x[(static_cast<int64_t>(c) * 32 + y) * 32 + x];
        CHECK(want == got);
      }

  CHECK_THROWS_AS(sample_patch_pairs(ds, 0, 32, rng), ConfigError);
  CHECK_THROWS_AS(sample_patch_pairs(ds, 4, 65, rng), ConfigError);
}

TEST_CASE("two time steps always pair 0 with 1") {
  SyntheticParams p = tiny_params();
  p.time_steps = 2;
  TimeSeriesDataset ds = generate_synthetic_dataset(p);
  Rng rng(25);
  PatchPairBatch b = sample_patch_pairs(ds, 32, 16, rng);
  for (const auto& pr : b.prov) CHECK(pr.tx + pr.ty == 1);
}

TEST_CASE("uniform_int is uniform enough") {
  // Chi-squared over 16 buckets, 1e5 draws; df=15, p=0.001 cutoff 37.7.
  Rng rng(26);
  const int buckets = 16, draws = 100000;
  int count[buckets] = {};
  for (int i = 0; i < draws; ++i) ++count[rng.uniform_int(0, buckets)];
  double expect = static_cast<double>(draws) / buckets;
  double chi2 = 0.0;
  for (int c : count) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < 37.7);
}

TEST_CASE("normal() has the right first moments") {
  Rng rng(27);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("derived streams differ from the parent") {
  Rng root(28);
  Rng a = root.derive(1);
  Rng b = root.derive(2);
  Rng a2 = root.derive(1);
  CHECK(a.next_u64() != b.next_u64());
  Rng a3 = root.derive(1);
  CHECK(a3.next_u64() == a2.next_u64());
}

TEST_CASE("rng state round trips") {
  Rng rng(29);
  rng.next_u64();
  rng.normal();
  Rng copy = Rng::from_state(rng.state());
  for (int i = 0; i < 8; ++i) CHECK(copy.next_u64() == rng.next_u64());
}

TEST_CASE("labeled patches cover every class") {
  LabeledPatches lp = generate_labeled_patches(5, 64, 30, 4);
  CHECK(lp.patches.shape() == std::vector<int>{20, 4, 64, 64});
  CHECK(lp.n_classes == 4);
  REQUIRE(lp.labels.size() == 20);
  int per[4] = {};
  for (int l : lp.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l < 4);
    ++per[l];
  }
  for (int c = 0; c < 4; ++c) CHECK(per[c] == 5);
  CHECK(tmin(lp.patches) > -1.0f);
  CHECK(tmax(lp.patches) < 1.0f);

  LabeledPatches again = generate_labeled_patches(5, 64, 30, 4);
  CHECK(bitwise_equal(again.patches, lp.patches));

  fs::path dir = fs::temp_directory_path() / "dsts_labeled_roundtrip";
  fs::remove_all(dir);
  lp.save(dir.string());
  LabeledPatches back = LabeledPatches::load(dir.string());
  CHECK(bitwise_equal(back.patches, lp.patches));
  CHECK(back.labels == lp.labels);
  CHECK(back.n_classes == lp.n_classes);
  fs::remove_all(dir);
}
