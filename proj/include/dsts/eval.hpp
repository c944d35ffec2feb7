#pragma once

#include <map>
#include <string>
#include <vector>

#include "dsts/data.hpp"
#include "dsts/networks.hpp"
#include "dsts/rng.hpp"

namespace dsts {

// One task's outcome: named scalar metrics, the per-item values behind them
// (so reported means are recomputable), and free-form context strings.
// Ordered maps so serialized reports are diffable.
struct EvalReport {
  std::string task;
  std::map<std::string, double> metrics;
  std::map<std::string, std::vector<double>> records;
  std::map<std::string, std::string> info;

  double at(const std::string& key) const;  // ConfigError if absent
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  void save(const std::string& path) const;
  static EvalReport load(const std::string& path);
};

// ---- k-means (shared-feature clustering) ----

struct KMeansResult {
  Tensor centroids;  // k x F
  std::vector<int> assign;
  double inertia = 0.0;
  // Inertia after each Lloyd iteration of the winning restart;
  // non-increasing by construction.
  std::vector<double> inertia_history;
  int iters = 0;
};

// Lloyd with k-means++ seeding, several restarts, squared Euclidean.
// Distance ties go to the lowest centroid id; an emptied cluster is reseeded
// with the point farthest from its centroid. Deterministic in rng.
KMeansResult kmeans(const Tensor& points, int k, Rng& rng, int restarts = 4, int max_iters = 100);
int nearest_centroid(const float* p, int dim, const Tensor& centroids);

// Area under the ROC curve of `scores` against binary `labels`;
// ties averaged. NaN-free input required; needs both classes present.
double roc_auc(const std::vector<float>& scores, const std::vector<int>& labels);

// ---- task 1: translation / reconstruction ----

struct TranslationOptions {
  int n_pairs = 256;   // patch pairs for translation/autoencoding
  uint64_t seed = 11;
  // Evaluating on series seen in training is almost always a mistake;
  // require an explicit override.
  bool allow_train_overlap = false;
};

// Cross-domain translation (decode other frame's shared code with own
// exclusive code), plain autoencoding, and whole-series reconstruction from
// frame 0's shared code. All L1 against the ground-truth frame. Also
// reports within- vs across-series shared-feature L1, the disentanglement
// direction the shared loss trains for.
EvalReport eval_translation(ModelParams& mp, const TimeSeriesDataset& test,
                            const std::vector<int64_t>& train_ids, const TranslationOptions& opt);

// ---- task 2: patch retrieval ----

struct RetrievalOptions {
  int stride = 8;
  int n_queries = 64;
  int queries_per_image = 4;  // query offsets that share one database image
  uint64_t seed = 12;
  float iou_threshold = 0.5f;
  int chunk = 64;
};

// A query patch from one time step retrieves its location in another time
// step of the same series by nearest shared-feature L1 over a sliding-window
// database. Raw-pixel L1 is the baseline. Recall@1 counts retrieved windows
// with IoU >= threshold against the query window.
EvalReport retrieve_patches(ModelParams& mp, const TimeSeriesDataset& ds,
                            const RetrievalOptions& opt);

// ---- task 3: patch classification ----

enum class ClsMode { frozen, finetune, scratch };
ClsMode cls_mode_from_string(const std::string& s);
std::string to_string(ClsMode m);

struct ClassifierOptions {
  ClsMode mode = ClsMode::frozen;
  int epochs = 10;
  int batch_size = 32;
  // Same Adam settings as the main training run.
  float lr = 2e-4f;
  float train_fraction = 0.8f;  // stratified split
  int hidden = 64;
  uint64_t seed = 13;
};

// Linear-ish probe on shared features: FC(hidden) + leaky ReLU + FC(k).
// frozen trains the head on precomputed features, finetune also updates the
// shared encoder, scratch reinitializes the encoder before training.
// finetune and scratch train private copies; mp is never mutated.
EvalReport train_classifier_head(ModelParams& mp, const LabeledPatches& data,
                                 const ClassifierOptions& opt);

// ---- task 4: segmentation by feature clustering ----

struct SegmentOptions {
  int k = 7;
  int fit_stride = 32;    // windows used to fit the clusters
  int assign_stride = 8;  // windows voted into the label map
  uint64_t seed = 14;
  int chunk = 64;
  int restarts = 4;
  int max_iters = 100;
};

struct Segmentation {
  Tensor labels;  // H x W, each value a cluster id in [0, k)
  KMeansResult km;
  int windows_fit = 0;
  int windows_assigned = 0;
};

// Clusters shared features of sliding windows, then labels each pixel by
// majority vote over the windows covering it (ties to the lowest id).
Segmentation segment_image(ModelParams& mp, const Tensor& image, const SegmentOptions& opt);

// ---- task 5: change detection ----

struct ChangeOptions {
  int stride = 32;
  float threshold = 0.05f;  // boxes emitted strictly above this
  int chunk = 64;
};

struct ScoredWindow {
  int x0 = 0, y0 = 0;
  float score = 0.0f;
};

struct ChangeMap {
  Tensor score_map;  // H x W, mean score of covering windows
  std::vector<ScoredWindow> windows;
  std::vector<ScoredWindow> boxes;  // windows with score > threshold, best first
  int patch = 0;
};

// Scores co-located windows of two frames by the L1 distance between their
// exclusive code means. A seasonal difference moves every window roughly
// equally; content changes stand out on top of that baseline.
ChangeMap detect_changes(ModelParams& mp, const Tensor& a, const Tensor& b,
                         const ChangeOptions& opt);

// Binary window labels from ground-truth rectangles: 1 when the truth
// overlap covers more than `min_overlap` of the window area (0 keeps any
// overlap). Windows enumerated like detect_changes enumerates them.
std::vector<int> label_windows(const std::vector<ChangeRect>& truth, int image_size, int patch,
                               int stride, float min_overlap = 0.0f);

}  // namespace dsts
