#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsts/adam.hpp"
#include "dsts/networks.hpp"
#include "dsts/objective.hpp"
#include "dsts/rng.hpp"

namespace dsts {

struct PatchPairBatch;  // data.hpp

struct TrainConfig {
  int batch_size = 64;
  int patch_size = 64;  // must match the model's input patch
  int64_t iterations = 5000;
  float lr_initial = 2e-4f;
  int64_t lr_decay_every = 50000;
  float lr_decay_factor = 0.5f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  LossWeights weights;
  GanForm gan_form = GanForm::paper;
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::string out_dir;           // empty: keep everything in memory

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

// Piecewise-constant staircase: lr_initial * factor^floor(iter / every).
// `iter` counts completed iterations, so iteration 0 trains at lr_initial.
float lr_at(int64_t iter, const TrainConfig& cfg);

// Everything needed to stop and continue bit-exactly.
struct Checkpoint {
  ModelParams params;
  // Adam states aligned with the trainable params of each group, in order.
  std::vector<std::vector<AdamState>> opt;  // indexed like ModelParams::groups()
  int64_t iteration = 0;
  TrainConfig config;
  std::array<uint64_t, 4> rng_state{};
  std::vector<int64_t> train_series_ids;  // for split-overlap refusal at eval
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Builds the full forward pass and combined objective on g. Callers that
// train pass the per-iteration noise; gradcheck reuses the identical wiring.
struct ObjectiveGraph {
  ObjectiveParts parts;
  Var total;
};
ObjectiveGraph build_objective(Graph& g, ModelParams& mp, const Tensor& x, const Tensor& y,
                               const Tensor& eps_x, const Tensor& eps_y, const LossWeights& w,
                               GanForm form, bool training);

struct FitResult {
  std::vector<LossBreakdown> log;
  std::string final_checkpoint;  // path, empty when out_dir unset
};

// Owns the model, optimizer states and RNG stream for one training run.
class Trainer {
 public:
  Trainer(ModelParams params, TrainConfig cfg);
  explicit Trainer(Checkpoint ck);  // resume

  // One simultaneous update of all four groups from a single backward pass.
  // The discriminator ascends the objective, everything else descends.
  LossBreakdown train_step(const PatchPairBatch& batch);

  // Runs from the current iteration up to cfg.iterations, sampling batches
  // from `ds`. Appends to log.csv and writes checkpoints when out_dir is
  // set. Throws NumericError naming the last checkpoint if the loss goes
  // non-finite. `on_iter`, when given, sees every LossBreakdown as it lands.
  FitResult fit(const struct TimeSeriesDataset& ds,
                const std::function<void(const LossBreakdown&)>& on_iter = {});

  Checkpoint make_checkpoint() const;
  ModelParams& params() { return params_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t iteration() const { return iteration_; }
  Rng& rng() { return rng_; }

 private:
  void update_group(Graph& g, ParamGroup& gp, std::vector<AdamState>& states, float lr,
                    float grad_scale);

  ModelParams params_;
  TrainConfig cfg_;
  std::vector<std::vector<AdamState>> opt_;
  Rng rng_;
  int64_t iteration_ = 0;
  std::vector<int64_t> train_series_ids_;
  std::string last_checkpoint_;
};

}  // namespace dsts
