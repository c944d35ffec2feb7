#include "dsts/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "json.hpp"

#include "dsts/adam.hpp"
#include "dsts/common.hpp"
#include "dsts/container.hpp"
#include "dsts/ops.hpp"

namespace dsts {

// ---- report ----

double EvalReport::at(const std::string& key) const {
  auto it = metrics.find(key);
  if (it == metrics.end()) throw ConfigError("report '" + task + "' has no metric " + key);
  return it->second;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["task"] = task;
  j["metrics"] = metrics;
  j["records"] = records;
  j["info"] = info;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report: bad JSON: ") + e.what());
  }
  EvalReport r;
  try {
    j.at("task").get_to(r.task);
    if (j.contains("metrics")) j.at("metrics").get_to(r.metrics);
    if (j.contains("records")) j.at("records").get_to(r.records);
    if (j.contains("info")) j.at("info").get_to(r.info);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report: missing or mistyped field: ") + e.what());
  }
  return r;
}

void EvalReport::save(const std::string& path) const { write_file(path, to_json() + "\n"); }

EvalReport EvalReport::load(const std::string& path) { return from_json(read_file(path)); }

// ---- roc auc ----

double roc_auc(const std::vector<float>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw ConfigError("roc_auc: need matching non-empty scores and labels");
  int64_t n = static_cast<int64_t>(scores.size());
  int64_t npos = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("roc_auc: non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw ConfigError("roc_auc: labels must be 0/1");
    npos += labels[i];
  }
  int64_t nneg = n - npos;
  if (npos == 0 || nneg == 0) throw ConfigError("roc_auc: needs both classes present");

  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int64_t a, int64_t b) { return scores[a] < scores[b]; });

  // Average ranks across ties (Mann-Whitney U).
  double pos_rank_sum = 0.0;
  int64_t i = 0;
  while (i < n) {
    int64_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg_rank = 0.5 * (i + j) + 1.0;
    for (int64_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) pos_rank_sum += avg_rank;
    i = j + 1;
  }
  double u = pos_rank_sum - 0.5 * static_cast<double>(npos) * (npos + 1);
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

// ---- shared helpers ----

namespace {

// Window origins along one axis; appends a final origin so the windows
// cover the full extent even when stride does not divide it.
std::vector<int> axis_offsets(int extent, int patch, int stride) {
  if (patch > extent)
    throw ConfigError("window of " + std::to_string(patch) + " does not fit extent " +
                      std::to_string(extent));
  if (stride < 1) throw ConfigError("stride must be positive");
  std::vector<int> off;
  for (int o = 0; o + patch <= extent; o += stride) off.push_back(o);
  if (off.back() != extent - patch) off.push_back(extent - patch);
  return off;
}

// Row-major window grid: y outer, x inner. label_windows() must match.
std::vector<std::pair<int, int>> grid_positions(int h, int w, int patch, int stride) {
  std::vector<std::pair<int, int>> pos;
  for (int y0 : axis_offsets(h, patch, stride))
    for (int x0 : axis_offsets(w, patch, stride)) pos.emplace_back(y0, x0);
  return pos;
}

void check_image(const Tensor& img, const ArchDesc& arch, const char* what) {
  if (img.rank() != 3 || img.dim(0) != arch.in_channels)
    throw ConfigError(std::string(what) + ": expected " + std::to_string(arch.in_channels) +
                      " x H x W image, got " + img.shape_str());
}

void copy_window(const Tensor& img, int y0, int x0, int patch, float* dst) {
  int h = img.dim(1), w = img.dim(2);
  for (int c = 0; c < img.dim(0); ++c)
    for (int dy = 0; dy < patch; ++dy) {
      const float* src = img.data() + (static_cast<int64_t>(c) * h + (y0 + dy)) * w + x0;
      std::copy(src, src + patch, dst);
      dst += patch;
    }
}

Tensor stack_windows(const Tensor& img, const std::vector<std::pair<int, int>>& pos, int patch) {
  int c = img.dim(0);
  Tensor out({static_cast<int>(pos.size()), c, patch, patch});
  int64_t row = static_cast<int64_t>(c) * patch * patch;
  for (size_t i = 0; i < pos.size(); ++i)
    copy_window(img, pos[i].first, pos[i].second, patch, out.data() + row * i);
  return out;
}

// Mean absolute difference between row i of a and row j of b (equal row sizes).
double row_l1(const Tensor& a, int64_t i, const Tensor& b, int64_t j) {
  int64_t row_a = a.numel() / a.dim(0);
  int64_t row_b = b.numel() / b.dim(0);
  if (row_a != row_b) throw ConfigError("row_l1: row sizes differ");
  const float* pa = a.data() + i * row_a;
  const float* pb = b.data() + j * row_b;
  double s = 0.0;
  for (int64_t t = 0; t < row_a; ++t) s += std::fabs(static_cast<double>(pa[t]) - pb[t]);
  return s / static_cast<double>(row_a);
}

struct MeanStd {
  double mean = 0.0, stddev = 0.0;
};
MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - r.mean) * (x - r.mean);
  r.stddev = std::sqrt(sq / static_cast<double>(xs.size()));
  return r;
}

int64_t overlap_1d(int a0, int a1, int b0, int b1) {
  return std::max(0, std::min(a1, b1) - std::max(a0, b0));
}

int64_t rect_window_overlap(const ChangeRect& r, int y0, int x0, int patch) {
  return overlap_1d(r.x0, r.x0 + r.w, x0, x0 + patch) * overlap_1d(r.y0, r.y0 + r.h, y0, y0 + patch);
}

}  // namespace

// ---- task 1: translation / reconstruction ----

EvalReport eval_translation(ModelParams& mp, const TimeSeriesDataset& test,
                            const std::vector<int64_t>& train_ids, const TranslationOptions& opt) {
  if (test.series.empty()) throw DataError("eval_translation: empty dataset");
  if (opt.n_pairs < 1) throw ConfigError("eval_translation: n_pairs must be positive");
  if (!opt.allow_train_overlap) {
    std::unordered_set<int64_t> seen(train_ids.begin(), train_ids.end());
    for (const SeriesRecord& s : test.series)
      if (seen.count(s.id))
        throw ConfigError("series " + std::to_string(s.id) +
                          " was part of the training split; enable allow_train_overlap to "
                          "evaluate on it anyway");
  }
  const int patch = mp.arch.patch;
  Rng rng(opt.seed);

  std::vector<double> trans_l1, auto_l1, within_sh;
  int remaining = opt.n_pairs;
  while (remaining > 0) {
    int m = std::min(remaining, 32);
    PatchPairBatch b = sample_patch_pairs(test, m, patch, rng);
    LatentCode cx = encode(mp, b.x);
    LatentCode cy = encode(mp, b.y);
    Tensor to_y = decode_batch(mp, cx.shared, cy.ex_mean);     // x's content, y's tone
    Tensor self_x = decode_batch(mp, cx.shared, cx.ex_mean);
    for (int i = 0; i < m; ++i) {
      trans_l1.push_back(row_l1(to_y, i, b.y, i));
      auto_l1.push_back(row_l1(self_x, i, b.x, i));
      within_sh.push_back(row_l1(cx.shared, i, cy.shared, i));
    }
    remaining -= m;
  }

  // Across-series baseline for the shared code: pairs forced onto distinct
  // series, otherwise sampled like the within pairs.
  std::vector<double> across_sh;
  if (test.series.size() > 1) {
    int left = opt.n_pairs;
    while (left > 0) {
      int m = std::min(left, 32);
      Tensor xa({m, mp.arch.in_channels, patch, patch});
      Tensor xb({m, mp.arch.in_channels, patch, patch});
      int64_t row = xa.numel() / m;
      for (int i = 0; i < m; ++i) {
        int64_t sa = rng.uniform_int(0, static_cast<int64_t>(test.series.size()));
        int64_t sb = rng.uniform_int(0, static_cast<int64_t>(test.series.size()) - 1);
        if (sb >= sa) ++sb;
        for (auto [s, dst] : {std::pair{sa, xa.data() + row * i}, std::pair{sb, xb.data() + row * i}}) {
          const SeriesRecord& rec = test.series[s];
          int t = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(rec.images.size())));
          int y0 = static_cast<int>(rng.uniform_int(0, rec.images[t].dim(1) - patch + 1));
          int x0 = static_cast<int>(rng.uniform_int(0, rec.images[t].dim(2) - patch + 1));
          copy_window(rec.images[t], y0, x0, patch, dst);
        }
      }
      LatentCode ca = encode(mp, xa);
      LatentCode cb = encode(mp, xb);
      for (int i = 0; i < m; ++i) across_sh.push_back(row_l1(ca.shared, i, cb.shared, i));
      left -= m;
    }
  }

  // Whole-series reconstruction: frame 0 provides the content code, each
  // frame its own tone code.
  std::vector<double> series_l1;
  for (const SeriesRecord& s : test.series) {
    int h = s.images[0].dim(1), w = s.images[0].dim(2);
    int y0 = static_cast<int>(rng.uniform_int(0, h - patch + 1));
    int x0 = static_cast<int>(rng.uniform_int(0, w - patch + 1));
    int t_count = static_cast<int>(s.images.size());
    Tensor frames({t_count, mp.arch.in_channels, patch, patch});
    int64_t row = frames.numel() / t_count;
    for (int t = 0; t < t_count; ++t)
      copy_window(s.images[t], y0, x0, patch, frames.data() + row * t);

    LatentCode all = encode(mp, frames);
    Tensor shared0({t_count, mp.arch.shared_channels, mp.arch.shared_spatial(),
                    mp.arch.shared_spatial()});
    int64_t srow = shared0.numel() / t_count;
    for (int t = 0; t < t_count; ++t)
      std::copy(all.shared.data(), all.shared.data() + srow, shared0.data() + srow * t);
    Tensor rec = decode_batch(mp, shared0, all.ex_mean);
    double acc = 0.0;
    for (int t = 0; t < t_count; ++t) acc += row_l1(rec, t, frames, t);
    series_l1.push_back(acc / t_count);
  }

  MeanStd tr = mean_std(trans_l1), au = mean_std(auto_l1), se = mean_std(series_l1);
  MeanStd wi = mean_std(within_sh), ac = mean_std(across_sh);
  EvalReport r;
  r.task = "translation";
  r.metrics["translation_l1_mean"] = tr.mean;
  r.metrics["translation_l1_std"] = tr.stddev;
  r.metrics["autoencode_l1_mean"] = au.mean;
  r.metrics["autoencode_l1_std"] = au.stddev;
  r.metrics["series_l1_mean"] = se.mean;
  r.metrics["series_l1_std"] = se.stddev;
  r.metrics["within_series_shared_l1"] = wi.mean;
  if (!across_sh.empty()) r.metrics["across_series_shared_l1"] = ac.mean;
  r.metrics["n_pairs"] = static_cast<double>(opt.n_pairs);
  r.metrics["n_series"] = static_cast<double>(test.series.size());
  r.records["translation_l1"] = std::move(trans_l1);
  r.records["autoencode_l1"] = std::move(auto_l1);
  r.records["series_l1"] = std::move(series_l1);
  r.records["within_series_shared_l1"] = std::move(within_sh);
  r.records["across_series_shared_l1"] = std::move(across_sh);
  if (opt.allow_train_overlap) r.info["allow_train_overlap"] = "true";
  return r;
}

// ---- task 2: retrieval ----

EvalReport retrieve_patches(ModelParams& mp, const TimeSeriesDataset& ds,
                            const RetrievalOptions& opt) {
  if (ds.series.empty()) throw DataError("retrieve_patches: empty dataset");
  if (opt.n_queries < 1 || opt.queries_per_image < 1)
    throw ConfigError("retrieve_patches: query counts must be positive");
  const int patch = mp.arch.patch;

  EvalReport r;
  r.task = "retrieval";
  if (opt.stride > patch)
    r.info["warning"] = "stride " + std::to_string(opt.stride) + " exceeds window size " +
                        std::to_string(patch) + "; database windows leave gaps";

  Rng rng(opt.seed);
  int hits_shared = 0, hits_pixel = 0, done = 0;
  int64_t db_windows = 0;
  auto& rec = r.records;

  while (done < opt.n_queries) {
    int64_t si = rng.uniform_int(0, static_cast<int64_t>(ds.series.size()));
    const SeriesRecord& s = ds.series[si];
    int t_count = static_cast<int>(s.images.size());
    if (t_count < 2) throw DataError("retrieve_patches: series needs at least two time steps");
    int tx = static_cast<int>(rng.uniform_int(0, t_count));
    int ty = static_cast<int>(rng.uniform_int(0, t_count - 1));
    if (ty >= tx) ++ty;

    const Tensor& db_img = s.images[ty];
    int h = db_img.dim(1), w = db_img.dim(2);
    auto pos = grid_positions(h, w, patch, opt.stride);
    Tensor db = stack_windows(db_img, pos, patch);
    Tensor db_feat = shared_features(mp, db, opt.chunk);
    db_windows = static_cast<int64_t>(pos.size());

    for (int q = 0; q < opt.queries_per_image && done < opt.n_queries; ++q, ++done) {
      int qy0 = static_cast<int>(rng.uniform_int(0, h - patch + 1));
      int qx0 = static_cast<int>(rng.uniform_int(0, w - patch + 1));
      Tensor query({1, mp.arch.in_channels, patch, patch});
      copy_window(s.images[tx], qy0, qx0, patch, query.data());
      Tensor q_feat = shared_features(mp, query, opt.chunk);

      size_t best_f = 0, best_p = 0;
      double bd_f = std::numeric_limits<double>::infinity();
      double bd_p = std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < pos.size(); ++i) {
        double df = row_l1(q_feat, 0, db_feat, static_cast<int64_t>(i));
        double dp = row_l1(query, 0, db, static_cast<int64_t>(i));
        if (df < bd_f) {
          bd_f = df;
          best_f = i;
        }
        if (dp < bd_p) {
          bd_p = dp;
          best_p = i;
        }
      }
      ChangeRect truth{qx0, qy0, patch, patch, 0, 0.0f};
      ChangeRect got_f{pos[best_f].second, pos[best_f].first, patch, patch, 0, 0.0f};
      ChangeRect got_p{pos[best_p].second, pos[best_p].first, patch, patch, 0, 0.0f};
      bool hit_f = rect_iou(truth, got_f) >= opt.iou_threshold;
      bool hit_p = rect_iou(truth, got_p) >= opt.iou_threshold;
      hits_shared += hit_f;
      hits_pixel += hit_p;
      rec["series_index"].push_back(static_cast<double>(si));
      rec["t_query"].push_back(tx);
      rec["t_database"].push_back(ty);
      rec["query_x0"].push_back(qx0);
      rec["query_y0"].push_back(qy0);
      rec["best_shared"].push_back(static_cast<double>(best_f));
      rec["best_pixel"].push_back(static_cast<double>(best_p));
      rec["hit_shared"].push_back(hit_f ? 1.0 : 0.0);
      rec["hit_pixel"].push_back(hit_p ? 1.0 : 0.0);
    }
  }

  r.metrics["recall_at_1_shared"] = static_cast<double>(hits_shared) / done;
  r.metrics["recall_at_1_pixel"] = static_cast<double>(hits_pixel) / done;
  r.metrics["n_queries"] = done;
  r.metrics["db_windows"] = static_cast<double>(db_windows);
  r.metrics["iou_threshold"] = opt.iou_threshold;
  return r;
}

// ---- task 3: classification ----

ClsMode cls_mode_from_string(const std::string& s) {
  if (s == "frozen") return ClsMode::frozen;
  if (s == "finetune") return ClsMode::finetune;
  if (s == "scratch") return ClsMode::scratch;
  throw ConfigError("unknown classifier mode '" + s + "' (frozen | finetune | scratch)");
}

std::string to_string(ClsMode m) {
  switch (m) {
    case ClsMode::frozen: return "frozen";
    case ClsMode::finetune: return "finetune";
    case ClsMode::scratch: return "scratch";
  }
  throw ConfigError("bad ClsMode");
}

namespace {

struct HeadParams {
  Param w1{"w1", {}, true}, b1{"b1", {}, true}, w2{"w2", {}, true}, b2{"b2", {}, true};
  std::vector<Param*> all() { return {&w1, &b1, &w2, &b2}; }
};

Var head_forward(Graph& g, Var feats, HeadParams& hp) {
  Var h = leaky_relu(g, fully_connected(g, feats, g.param(hp.w1), g.param(hp.b1)));
  return fully_connected(g, h, g.param(hp.w2), g.param(hp.b2));
}

Tensor gather_rows(const Tensor& src, const std::vector<int>& idx) {
  std::vector<int> shape = src.shape();
  shape[0] = static_cast<int>(idx.size());
  Tensor out(std::move(shape));
  int64_t row = src.numel() / src.dim(0);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(src.data() + row * idx[i], src.data() + row * (idx[i] + 1), out.data() + row * i);
  return out;
}

template <typename T>
void shuffle_vec(std::vector<T>& v, Rng& rng) {
  for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i)
    std::swap(v[i], v[rng.uniform_int(0, i + 1)]);
}

}  // namespace

EvalReport train_classifier_head(ModelParams& mp, const LabeledPatches& data,
                                 const ClassifierOptions& opt) {
  if (opt.epochs < 1 || opt.batch_size < 1 || opt.hidden < 1)
    throw ConfigError("classifier: epochs, batch_size and hidden must be positive");
  if (!(opt.lr > 0.0f)) throw ConfigError("classifier: lr must be positive");
  if (!(opt.train_fraction > 0.0f) || opt.train_fraction >= 1.0f)
    throw ConfigError("classifier: train_fraction must be in (0, 1)");
  const int n = data.patches.dim(0);
  const int k = data.n_classes;
  if (k < 2) throw ConfigError("classifier: need at least two classes");
  if (static_cast<int>(data.labels.size()) != n)
    throw DataError("classifier: labels and patches disagree");
  if (data.patches.dim(2) != mp.arch.patch || data.patches.dim(1) != mp.arch.in_channels)
    throw ConfigError("classifier: patches " + data.patches.shape_str() +
                      " do not match the model input");

  Rng rng(opt.seed);

  // Stratified split so every class trains.
  std::vector<std::vector<int>> by_class(k);
  for (int i = 0; i < n; ++i) {
    int c = data.labels[i];
    if (c < 0 || c >= k) throw DataError("classifier: label " + std::to_string(c) + " out of range");
    by_class[c].push_back(i);
  }
  std::vector<int> train_idx, test_idx;
  for (int c = 0; c < k; ++c) {
    auto& idx = by_class[c];
    if (idx.empty())
      throw DataError("classifier: class " + std::to_string(c) + " has no examples");
    shuffle_vec(idx, rng);
    int n_tr = static_cast<int>(std::floor(opt.train_fraction * idx.size()));
    n_tr = std::max(1, std::min(n_tr, static_cast<int>(idx.size())));
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + n_tr);
    test_idx.insert(test_idx.end(), idx.begin() + n_tr, idx.end());
  }
  if (test_idx.empty()) throw DataError("classifier: split left no test examples");

  // Encoder to read features from. frozen reads the caller's weights and
  // never touches them; the other modes train a private copy.
  const bool train_encoder = opt.mode != ClsMode::frozen;
  ModelParams local;
  if (opt.mode == ClsMode::scratch) local = init_model(mp.arch, opt.seed ^ 0x5c7a3c11u);
  else if (opt.mode == ClsMode::finetune) local = mp;
  ModelParams& enc = train_encoder ? local : mp;

  const int feat_dim = mp.arch.shared_flat();
  HeadParams hp;
  {
    Rng wrng = Rng(opt.seed).derive(7);
    Tensor w1({feat_dim, opt.hidden});
    wrng.fill_normal(w1.data(), w1.numel(), 0.0f, 0.02f);
    Tensor w2({opt.hidden, k});
    wrng.fill_normal(w2.data(), w2.numel(), 0.0f, 0.02f);
    hp.w1.value = std::move(w1);
    hp.b1.value = Tensor::zeros({opt.hidden});
    hp.w2.value = std::move(w2);
    hp.b2.value = Tensor::zeros({k});
  }

  // Frozen path: features are fixed, compute them once.
  Tensor frozen_feats;
  if (!train_encoder) frozen_feats = shared_features(enc, data.patches, opt.batch_size);

  std::vector<Param*> trained;
  for (Param* p : hp.all()) trained.push_back(p);
  if (train_encoder)
    for (Param& p : enc.shared_encoder.params)
      if (p.trainable) trained.push_back(&p);
  std::vector<AdamState> states;
  for (Param* p : trained) states.push_back(AdamState::like(p->value, 0.5f, 0.999f, 1e-8f));

  auto batch_logits = [&](Graph& g, const std::vector<int>& idx, bool training) {
    Var feats;
    if (train_encoder) {
      Var x = g.leaf(gather_rows(data.patches, idx));
      Var sh = encode_shared(g, x, enc, training);
      feats = reshape(g, sh, {static_cast<int>(idx.size()), feat_dim});
    } else {
      feats = g.leaf(gather_rows(frozen_feats, idx));
    }
    return head_forward(g, feats, hp);
  };

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    shuffle_vec(train_idx, rng);
    for (size_t off = 0; off < train_idx.size(); off += opt.batch_size) {
      size_t end = std::min(off + opt.batch_size, train_idx.size());
      std::vector<int> idx(train_idx.begin() + off, train_idx.begin() + end);
      std::vector<int> labels;
      for (int i : idx) labels.push_back(data.labels[i]);

      Graph g(true);
      Var loss = softmax_cross_entropy(g, batch_logits(g, idx, true), labels);
      if (!std::isfinite(g.value(loss)[0]))
        throw NumericError("classifier: non-finite loss at epoch " + std::to_string(epoch));
      g.backward(loss);
      for (size_t t = 0; t < trained.size(); ++t) {
        Var v = g.param(*trained[t]);
        if (g.has_grad(v)) adam_step(trained[t]->value, g.grad(v), states[t], opt.lr);
      }
    }
  }

  auto accuracy = [&](const std::vector<int>& idx) {
    int correct = 0;
    for (size_t off = 0; off < idx.size(); off += opt.batch_size) {
      size_t end = std::min(off + opt.batch_size, idx.size());
      std::vector<int> chunk(idx.begin() + off, idx.begin() + end);
      Graph g(false);
      const Tensor& logits = g.value(batch_logits(g, chunk, false));
      for (size_t i = 0; i < chunk.size(); ++i) {
        int arg = 0;
        for (int c = 1; c < k; ++c)
          if (logits[static_cast<int64_t>(i) * k + c] > logits[static_cast<int64_t>(i) * k + arg])
            arg = c;
        if (arg == data.labels[chunk[i]]) ++correct;
      }
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
  };

  EvalReport r;
  r.task = "classification";
  r.metrics["accuracy"] = accuracy(test_idx);
  r.metrics["train_accuracy"] = accuracy(train_idx);
  r.metrics["n_train"] = static_cast<double>(train_idx.size());
  r.metrics["n_test"] = static_cast<double>(test_idx.size());
  r.metrics["n_classes"] = k;
  r.metrics["epochs"] = opt.epochs;
  r.info["mode"] = to_string(opt.mode);
  return r;
}

// ---- task 4: segmentation ----

Segmentation segment_image(ModelParams& mp, const Tensor& image, const SegmentOptions& opt) {
  check_image(image, mp.arch, "segment_image");
  if (opt.k < 1) throw ConfigError("segment_image: k must be positive");
  const int patch = mp.arch.patch;
  const int h = image.dim(1), w = image.dim(2);

  auto fit_pos = grid_positions(h, w, patch, opt.fit_stride);
  if (static_cast<int>(fit_pos.size()) < opt.k)
    throw ConfigError("segment_image: k=" + std::to_string(opt.k) + " exceeds the " +
                      std::to_string(fit_pos.size()) + " windows available at stride " +
                      std::to_string(opt.fit_stride));
  Tensor fit_feats = shared_features(mp, stack_windows(image, fit_pos, patch), opt.chunk);

  Rng rng(opt.seed);
  Segmentation seg;
  seg.km = kmeans(fit_feats, opt.k, rng, opt.restarts, opt.max_iters);
  seg.windows_fit = static_cast<int>(fit_pos.size());

  auto pos = grid_positions(h, w, patch, opt.assign_stride);
  seg.windows_assigned = static_cast<int>(pos.size());
  Tensor feats = shared_features(mp, stack_windows(image, pos, patch), opt.chunk);
  int dim = feats.dim(1);

  // Per-pixel vote over every window covering it.
  std::vector<int> votes(static_cast<size_t>(h) * w * opt.k, 0);
  for (size_t i = 0; i < pos.size(); ++i) {
    int c = nearest_centroid(feats.data() + static_cast<int64_t>(i) * dim, dim, seg.km.centroids);
    for (int dy = 0; dy < patch; ++dy) {
      int y = pos[i].first + dy;
      for (int dx = 0; dx < patch; ++dx) {
        int x = pos[i].second + dx;
        ++votes[(static_cast<size_t>(y) * w + x) * opt.k + c];
      }
    }
  }
  seg.labels = Tensor({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int* v = votes.data() + (static_cast<size_t>(y) * w + x) * opt.k;
      int arg = 0;
      for (int c = 1; c < opt.k; ++c)
        if (v[c] > v[arg]) arg = c;  // strict: ties to the lowest id
      seg.labels[static_cast<int64_t>(y) * w + x] = static_cast<float>(arg);
    }
  return seg;
}

// ---- task 5: change detection ----

ChangeMap detect_changes(ModelParams& mp, const Tensor& a, const Tensor& b,
                         const ChangeOptions& opt) {
  check_image(a, mp.arch, "detect_changes");
  if (!a.same_shape(b))
    throw ConfigError("detect_changes: frames " + a.shape_str() + " vs " + b.shape_str());
  const int patch = mp.arch.patch;
  const int h = a.dim(1), w = a.dim(2);

  auto pos = grid_positions(h, w, patch, opt.stride);
  Tensor ex_a = exclusive_means(mp, stack_windows(a, pos, patch), opt.chunk);
  Tensor ex_b = exclusive_means(mp, stack_windows(b, pos, patch), opt.chunk);

  ChangeMap cm;
  cm.patch = patch;
  cm.windows.reserve(pos.size());
  std::vector<double> sum(static_cast<size_t>(h) * w, 0.0);
  std::vector<int> cnt(static_cast<size_t>(h) * w, 0);
  for (size_t i = 0; i < pos.size(); ++i) {
    float score = static_cast<float>(row_l1(ex_a, static_cast<int64_t>(i), ex_b,
                                            static_cast<int64_t>(i)));
    cm.windows.push_back({pos[i].second, pos[i].first, score});
    for (int dy = 0; dy < patch; ++dy) {
      size_t base = static_cast<size_t>(pos[i].first + dy) * w + pos[i].second;
      for (int dx = 0; dx < patch; ++dx) {
        sum[base + dx] += score;
        ++cnt[base + dx];
      }
    }
  }
  cm.score_map = Tensor({h, w});
  for (size_t i = 0; i < sum.size(); ++i)
    cm.score_map[static_cast<int64_t>(i)] = static_cast<float>(sum[i] / std::max(cnt[i], 1));

  for (const ScoredWindow& sw : cm.windows)
    if (sw.score > opt.threshold) cm.boxes.push_back(sw);
  std::stable_sort(cm.boxes.begin(), cm.boxes.end(),
                   [](const ScoredWindow& l, const ScoredWindow& r) { return l.score > r.score; });
  return cm;
}

std::vector<int> label_windows(const std::vector<ChangeRect>& truth, int image_size, int patch,
                               int stride, float min_overlap) {
  auto pos = grid_positions(image_size, image_size, patch, stride);
  std::vector<int> labels(pos.size(), 0);
  const double area = static_cast<double>(patch) * patch;
  for (size_t i = 0; i < pos.size(); ++i) {
    int64_t best = 0;
    for (const ChangeRect& r : truth)
      best = std::max(best, rect_window_overlap(r, pos[i].first, pos[i].second, patch));
    labels[i] = (static_cast<double>(best) > min_overlap * area && best > 0) ? 1 : 0;
  }
  return labels;
}

}  // namespace dsts
