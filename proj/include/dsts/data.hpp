#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsts/rng.hpp"
#include "dsts/tensor.hpp"

namespace dsts {

// Synthetic image time series.
//
// Each series is one "region": a fixed multi-channel terrain observed at T
// times. A time step applies (a) a smooth periodic seasonal tone curve,
// identical across the image and invertible outside changed areas, and (b)
// zero or more rectangular content changes. The seasonal signal is what the
// exclusive code should capture; the terrain is the shared content.

struct SyntheticParams {
  int n_series = 64;
  int time_steps = 8;
  int image_size = 256;
  int channels = 4;  // fixed by the model family; validated, not varied
  uint64_t seed = 0;
  std::string split = "train";  // "train" | "test"; offsets series ids
  // Expected changed rectangles per image (0..max_changes drawn per step;
  // step 0 is always unchanged so every series has a clean reference).
  float change_prob = 0.5f;
  int max_changes = 2;

  void validate() const;
  std::string to_json() const;
  static SyntheticParams from_json(const std::string& text);
};

struct ChangeRect {
  int x0 = 0, y0 = 0, w = 0, h = 0;
  int kind = 0;  // 0: intensity shift, 1: texture replacement
  float magnitude = 0.0f;
};

bool rects_overlap(const ChangeRect& a, const ChangeRect& b);
float rect_iou(const ChangeRect& a, const ChangeRect& b);

struct GroundTruth {
  std::vector<float> season;                    // s_t per time step, in [0,1]
  std::vector<std::vector<ChangeRect>> changes; // per time step
};

struct SeriesRecord {
  int64_t id = 0;           // globally unique across splits
  std::vector<Tensor> images;  // T tensors, C x H x W, values in (-1, 1)
  GroundTruth truth;
};

struct TimeSeriesDataset {
  SyntheticParams params;
  std::vector<SeriesRecord> series;

  std::vector<int64_t> ids() const;
  // Directory layout: manifest.json + series_XXXX/tXX.dsts tensors.
  void save(const std::string& dir) const;
  static TimeSeriesDataset load(const std::string& dir);
};

// Seasonal phase for step t of T: 0.5 - 0.5*cos(2*pi*t/T). Symmetric, so
// s_t == s_{T-t}; change-free step pairs (t, T-t) differ only by content
// changes, which several tests rely on.
float season_phase(int t, int time_steps);

// The invertible per-channel tone map and its inverse (gain in [0.7, 1],
// offset bounded so no value leaves (-1, 1)).
float season_gain(int channel, float s);
float season_offset(int channel, float s);
void apply_season(Tensor& image, float s);
void invert_season(Tensor& image, float s);

TimeSeriesDataset generate_synthetic_dataset(const SyntheticParams& p);

// Training batches: m pairs (x, y) of co-located patches from the same
// series at two distinct times, sampled uniformly over series, offsets and
// time pairs.
struct PatchPairBatch {
  Tensor x, y;  // m x C x P x P
  struct Prov {
    int64_t series_id = 0;
    int x0 = 0, y0 = 0;
    int tx = 0, ty = 0;
  };
  std::vector<Prov> prov;
};
PatchPairBatch sample_patch_pairs(const TimeSeriesDataset& ds, int m, int patch, Rng& rng);

// Labeled 64 x 64 patches for the classification task: `classes` terrain
// families with distinct spectral/blob statistics, season applied at a
// random phase per patch.
struct LabeledPatches {
  Tensor patches;  // n x C x P x P
  std::vector<int> labels;
  int n_classes = 0;

  void save(const std::string& dir) const;
  static LabeledPatches load(const std::string& dir);
};
LabeledPatches generate_labeled_patches(int per_class, int patch, uint64_t seed, int classes = 4);

}  // namespace dsts
