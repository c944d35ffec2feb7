#pragma once

#include <string>
#include <vector>

#include "dsts/graph.hpp"
#include "dsts/ops.hpp"
#include "dsts/rng.hpp"

namespace dsts {

// Network geometry. Every derived extent is validated up front so a bad
// combination fails at construction, not mid-training.
struct ArchDesc {
  int patch = 64;
  int in_channels = 4;
  // Shared encoder: one stride-2 conv per entry, then a size-preserving conv
  // to shared_channels. Entries double the channel count on the way down.
  std::vector<int> shared_widths = {32, 64, 128, 256};
  int shared_channels = 256;
  // Exclusive encoder: stride-2 stem then one downsampling residual block
  // per entry, flatten, two heads to latent_dim.
  int exclusive_stem = 64;
  std::vector<int> exclusive_blocks = {64, 64, 64};
  int latent_dim = 64;
  // Decoder: stride-2 transposed convs; a final one maps to in_channels.
  std::vector<int> decoder_widths = {256, 128, 64};
  // Discriminator: stride-2 convs, then a valid conv to one logit map.
  std::vector<int> disc_widths = {64, 128, 256, 512};

  int shared_spatial() const;     // patch / 2^#shared_widths
  int exclusive_spatial() const;  // patch / 2^(1 + #exclusive_blocks)
  int exclusive_flat() const;
  int shared_flat() const;
  int disc_spatial() const;       // patch / 2^#disc_widths

  void validate() const;  // ConfigError with the offending numbers
  bool operator==(const ArchDesc&) const = default;

  std::string to_json() const;
  static ArchDesc from_json(const std::string& text);

  static ArchDesc standard();  // 64 x 64 x 4 patches, the trained setup
  static ArchDesc micro();     // 8 x 8 x 4, for fast exact tests
};

// One encoder/decoder/discriminator parameter set. Groups are disjoint by
// construction; the optimizer steps them independently.
struct ParamGroup {
  std::string name;
  std::vector<Param> params;

  Param& add(const std::string& local, Tensor init, bool trainable = true);
  Param& at(const std::string& local);              // ConfigError if absent
  const Param& at(const std::string& local) const;
  const Param* find(const std::string& local) const;
};

struct ModelParams {
  ArchDesc arch;
  ParamGroup shared_encoder{"shared_encoder"};
  ParamGroup exclusive_encoder{"exclusive_encoder"};
  ParamGroup decoder{"decoder"};
  ParamGroup discriminator{"discriminator"};

  std::vector<ParamGroup*> groups();
  std::vector<const ParamGroup*> groups() const;
  int64_t trainable_count() const;
};

// Gaussian init (std 0.02) for conv/fc weights, zeros for biases, identity
// for batch-norm affine and running stats. Deterministic in seed.
ModelParams init_model(const ArchDesc& arch, uint64_t seed);

struct ExclusiveCode {
  Var mean, logvar, sample;
};

// Graph-building forwards. `training` picks batch-norm mode; eps, when
// given, must be N x latent_dim noise for reparameterization (training
// callers draw it; eval passes nullptr and sample == mean).
Var encode_shared(Graph& g, Var x, ModelParams& mp, bool training);
ExclusiveCode encode_exclusive(Graph& g, Var x, ModelParams& mp, bool training,
                               const Tensor* eps = nullptr);
Var decode(Graph& g, Var shared, Var exclusive, ModelParams& mp, bool training);
Var discriminate(Graph& g, Var x, ModelParams& mp, bool training);

// Plain-tensor eval wrappers (no recording, running-stat batch norm).
struct LatentCode {
  Tensor shared;     // N x C x s x s
  Tensor ex_mean;    // N x latent_dim
  Tensor ex_logvar;  // N x latent_dim, clamped to [-10, 10]
  Tensor ex_sample;  // == ex_mean in eval
};
LatentCode encode(ModelParams& mp, const Tensor& batch);
Tensor decode_batch(ModelParams& mp, const Tensor& shared, const Tensor& exclusive);
Tensor discriminate_batch(ModelParams& mp, const Tensor& batch);
// Shared features flattened to N x shared_flat, in sub-batches of
// `chunk` to bound eval memory.
Tensor shared_features(ModelParams& mp, const Tensor& batch, int chunk = 64);
Tensor exclusive_means(ModelParams& mp, const Tensor& batch, int chunk = 64);

}  // namespace dsts
