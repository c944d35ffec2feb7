#include "dsts/networks.hpp"

#include <algorithm>
#include <cstring>

#include "json.hpp"

#include "dsts/common.hpp"

namespace dsts {

namespace {

int pow2(int n) { return 1 << n; }

void fill_gauss(Tensor& t, Rng& rng, float stddev) { rng.fill_normal(t.data(), t.numel(), 0.0f, stddev); }

void add_conv(ParamGroup& gp, const std::string& name, int in, int out, int k, Rng& rng) {
  Tensor w({out, in, k, k});
  fill_gauss(w, rng, 0.02f);
  gp.add(name + ".weight", std::move(w));
  gp.add(name + ".bias", Tensor::zeros({out}));
}

// Transposed conv stores weights as (in, out, k, k); `in` is the tensor the
// layer consumes, matching the adjoint pairing with conv2d.
void add_tconv(ParamGroup& gp, const std::string& name, int in, int out, int k, Rng& rng) {
  Tensor w({in, out, k, k});
  fill_gauss(w, rng, 0.02f);
  gp.add(name + ".weight", std::move(w));
  gp.add(name + ".bias", Tensor::zeros({out}));
}

void add_bn(ParamGroup& gp, const std::string& name, int c) {
  gp.add(name + ".gamma", Tensor::full({c}, 1.0f));
  gp.add(name + ".beta", Tensor::zeros({c}));
  gp.add(name + ".running_mean", Tensor::zeros({c}), false);
  gp.add(name + ".running_var", Tensor::full({c}, 1.0f), false);
}

void add_fc(ParamGroup& gp, const std::string& name, int in, int out, Rng& rng) {
  Tensor w({in, out});
  fill_gauss(w, rng, 0.02f);
  gp.add(name + ".weight", std::move(w));
  gp.add(name + ".bias", Tensor::zeros({out}));
}

Var conv_fwd(Graph& g, ParamGroup& gp, const std::string& name, Var x, int stride, int pad) {
  return conv2d(g, x, g.param(gp.at(name + ".weight")), g.param(gp.at(name + ".bias")), stride, pad);
}

Var tconv_fwd(Graph& g, ParamGroup& gp, const std::string& name, Var x, int stride, int pad) {
  return conv_transpose2d(g, x, g.param(gp.at(name + ".weight")), g.param(gp.at(name + ".bias")),
                          stride, pad);
}

Var bn_fwd(Graph& g, ParamGroup& gp, const std::string& name, Var x, bool training) {
  return batch_norm(g, x, g.param(gp.at(name + ".gamma")), g.param(gp.at(name + ".beta")),
                    gp.at(name + ".running_mean").value, gp.at(name + ".running_var").value,
                    training);
}

Var fc_fwd(Graph& g, ParamGroup& gp, const std::string& name, Var x) {
  return fully_connected(g, x, g.param(gp.at(name + ".weight")), g.param(gp.at(name + ".bias")));
}

void check_image_input(const Tensor& x, const ArchDesc& a, const char* who) {
  if (x.rank() != 4 || x.dim(1) != a.in_channels || x.dim(2) != a.patch || x.dim(3) != a.patch)
    throw ConfigError(std::string(who) + " expects N x " + std::to_string(a.in_channels) + " x " +
                      std::to_string(a.patch) + " x " + std::to_string(a.patch) + ", got " +
                      x.shape_str());
}

}  // namespace

int ArchDesc::shared_spatial() const { return patch / pow2(static_cast<int>(shared_widths.size())); }
int ArchDesc::exclusive_spatial() const {
  return patch / pow2(1 + static_cast<int>(exclusive_blocks.size()));
}
int ArchDesc::exclusive_flat() const {
  return exclusive_blocks.back() * exclusive_spatial() * exclusive_spatial();
}
int ArchDesc::shared_flat() const { return shared_channels * shared_spatial() * shared_spatial(); }
int ArchDesc::disc_spatial() const { return patch / pow2(static_cast<int>(disc_widths.size())); }

void ArchDesc::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("ArchDesc: " + msg); };
  if (patch < 8) fail("patch must be at least 8, got " + std::to_string(patch));
  if (in_channels < 1) fail("in_channels must be positive");
  if (latent_dim < 1) fail("latent_dim must be positive");
  if (shared_widths.empty() || exclusive_blocks.empty() || disc_widths.empty())
    fail("each network needs at least one stage");
  for (const auto* v : {&shared_widths, &exclusive_blocks, &decoder_widths, &disc_widths})
    for (int w : *v)
      if (w < 1) fail("channel widths must be positive");
  if (exclusive_stem < 1 || shared_channels < 1) fail("channel widths must be positive");

  auto divides = [&](int stages) { return patch % pow2(stages) == 0 && patch / pow2(stages) >= 1; };
  if (!divides(static_cast<int>(shared_widths.size())))
    fail("patch " + std::to_string(patch) + " not divisible by 2^" +
         std::to_string(shared_widths.size()) + " (shared encoder)");
  if (!divides(1 + static_cast<int>(exclusive_blocks.size())))
    fail("patch " + std::to_string(patch) + " too small for " +
         std::to_string(exclusive_blocks.size()) + " exclusive blocks");
  if (!divides(static_cast<int>(disc_widths.size())) || disc_spatial() < 4)
    fail("discriminator needs at least a 4 x 4 map before its head, got " +
         std::to_string(disc_spatial()));
  int updec = shared_spatial() * pow2(1 + static_cast<int>(decoder_widths.size()));
  if (updec != patch)
    fail("decoder upsamples " + std::to_string(shared_spatial()) + " to " + std::to_string(updec) +
         ", expected " + std::to_string(patch));
}

std::string ArchDesc::to_json() const {
  nlohmann::json j;
  j["patch"] = patch;
  j["in_channels"] = in_channels;
  j["shared_widths"] = shared_widths;
  j["shared_channels"] = shared_channels;
  j["exclusive_stem"] = exclusive_stem;
  j["exclusive_blocks"] = exclusive_blocks;
  j["latent_dim"] = latent_dim;
  j["decoder_widths"] = decoder_widths;
  j["disc_widths"] = disc_widths;
  return j.dump();
}

ArchDesc ArchDesc::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("ArchDesc: bad JSON: ") + e.what());
  }
  ArchDesc a;
  try {
    j.at("patch").get_to(a.patch);
    j.at("in_channels").get_to(a.in_channels);
    j.at("shared_widths").get_to(a.shared_widths);
    j.at("shared_channels").get_to(a.shared_channels);
    j.at("exclusive_stem").get_to(a.exclusive_stem);
    j.at("exclusive_blocks").get_to(a.exclusive_blocks);
    j.at("latent_dim").get_to(a.latent_dim);
    j.at("decoder_widths").get_to(a.decoder_widths);
    j.at("disc_widths").get_to(a.disc_widths);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("ArchDesc: missing or mistyped field: ") + e.what());
  }
  a.validate();
  return a;
}

ArchDesc ArchDesc::standard() { return ArchDesc{}; }

ArchDesc ArchDesc::micro() {
  ArchDesc a;
  a.patch = 8;
  a.shared_widths = {8};
  a.shared_channels = 16;
  a.exclusive_stem = 8;
  a.exclusive_blocks = {8};
  a.latent_dim = 8;
  a.decoder_widths = {};
  a.disc_widths = {8};
  return a;
}

Param& ParamGroup::add(const std::string& local, Tensor init, bool trainable) {
  if (find(local)) throw ConfigError("duplicate param " + name + "/" + local);
  params.push_back(Param{local, std::move(init), trainable});
  return params.back();
}

const Param* ParamGroup::find(const std::string& local) const {
  for (const auto& p : params)
    if (p.name == local) return &p;
  return nullptr;
}

Param& ParamGroup::at(const std::string& local) {
  for (auto& p : params)
    if (p.name == local) return p;
  throw ConfigError("missing param " + name + "/" + local);
}

const Param& ParamGroup::at(const std::string& local) const {
  const Param* p = find(local);
  if (!p) throw ConfigError("missing param " + name + "/" + local);
  return *p;
}

std::vector<ParamGroup*> ModelParams::groups() {
  return {&shared_encoder, &exclusive_encoder, &decoder, &discriminator};
}

std::vector<const ParamGroup*> ModelParams::groups() const {
  return {&shared_encoder, &exclusive_encoder, &decoder, &discriminator};
}

int64_t ModelParams::trainable_count() const {
  int64_t n = 0;
  for (const auto* gp : groups())
    for (const auto& p : gp->params)
      if (p.trainable) n += p.value.numel();
  return n;
}

ModelParams init_model(const ArchDesc& arch, uint64_t seed) {
  arch.validate();
  Rng root(seed);
  ModelParams mp;
  mp.arch = arch;

  {
    Rng rng = root.derive(1);
    ParamGroup& gp = mp.shared_encoder;
    int in = arch.in_channels;
    for (size_t i = 0; i < arch.shared_widths.size(); ++i) {
      int out = arch.shared_widths[i];
      add_conv(gp, "conv" + std::to_string(i), in, out, 4, rng);
      if (i > 0) add_bn(gp, "bn" + std::to_string(i), out);
      in = out;
    }
    size_t last = arch.shared_widths.size();
    add_conv(gp, "conv" + std::to_string(last), in, arch.shared_channels, 3, rng);
    add_bn(gp, "bn" + std::to_string(last), arch.shared_channels);
  }

  {
    Rng rng = root.derive(2);
    ParamGroup& gp = mp.exclusive_encoder;
    add_conv(gp, "stem", arch.in_channels, arch.exclusive_stem, 4, rng);
    int in = arch.exclusive_stem;
    for (size_t i = 0; i < arch.exclusive_blocks.size(); ++i) {
      int out = arch.exclusive_blocks[i];
      std::string b = "res" + std::to_string(i);
      add_conv(gp, b + ".conv1", in, out, 4, rng);
      add_bn(gp, b + ".bn1", out);
      add_conv(gp, b + ".conv2", out, out, 3, rng);
      add_bn(gp, b + ".bn2", out);
      add_conv(gp, b + ".skip", in, out, 1, rng);
      add_bn(gp, b + ".bnskip", out);
      in = out;
    }
    add_fc(gp, "fc_mean", arch.exclusive_flat(), arch.latent_dim, rng);
    add_fc(gp, "fc_logvar", arch.exclusive_flat(), arch.latent_dim, rng);
  }

  {
    Rng rng = root.derive(3);
    ParamGroup& gp = mp.decoder;
    int in = arch.shared_channels + arch.latent_dim;
    for (size_t i = 0; i < arch.decoder_widths.size(); ++i) {
      int out = arch.decoder_widths[i];
      add_tconv(gp, "tconv" + std::to_string(i), in, out, 4, rng);
      add_bn(gp, "bn" + std::to_string(i), out);
      in = out;
    }
    add_tconv(gp, "tconv_out", in, arch.in_channels, 4, rng);
  }

  {
    Rng rng = root.derive(4);
    ParamGroup& gp = mp.discriminator;
    int in = arch.in_channels;
    for (size_t i = 0; i < arch.disc_widths.size(); ++i) {
      int out = arch.disc_widths[i];
      add_conv(gp, "conv" + std::to_string(i), in, out, 4, rng);
      if (i > 0) add_bn(gp, "bn" + std::to_string(i), out);
      in = out;
    }
    add_conv(gp, "head", in, 1, 4, rng);
  }

  return mp;
}

Var encode_shared(Graph& g, Var x, ModelParams& mp, bool training) {
  const ArchDesc& a = mp.arch;
  check_image_input(g.value(x), a, "encode_shared");
  ParamGroup& gp = mp.shared_encoder;
  Var h = leaky_relu(g, conv_fwd(g, gp, "conv0", x, 2, 1));
  for (size_t i = 1; i < a.shared_widths.size(); ++i) {
    std::string idx = std::to_string(i);
    h = leaky_relu(g, bn_fwd(g, gp, "bn" + idx, conv_fwd(g, gp, "conv" + idx, h, 2, 1), training));
  }
  // Size-preserving 3x3 tail keeps the s x s map while widening to
  // shared_channels (a 4x4 kernel cannot preserve extent with symmetric
  // padding at stride 1).
  std::string last = std::to_string(a.shared_widths.size());
  h = leaky_relu(g, bn_fwd(g, gp, "bn" + last, conv_fwd(g, gp, "conv" + last, h, 1, 1), training));
  return h;
}

ExclusiveCode encode_exclusive(Graph& g, Var x, ModelParams& mp, bool training, const Tensor* eps) {
  const ArchDesc& a = mp.arch;
  check_image_input(g.value(x), a, "encode_exclusive");
  ParamGroup& gp = mp.exclusive_encoder;
  Var h = leaky_relu(g, conv_fwd(g, gp, "stem", x, 2, 1));
  for (size_t i = 0; i < a.exclusive_blocks.size(); ++i) {
    std::string b = "res" + std::to_string(i);
    Var main = leaky_relu(g, bn_fwd(g, gp, b + ".bn1", conv_fwd(g, gp, b + ".conv1", h, 2, 1), training));
    main = bn_fwd(g, gp, b + ".bn2", conv_fwd(g, gp, b + ".conv2", main, 1, 1), training);
    Var skip = bn_fwd(g, gp, b + ".bnskip", conv_fwd(g, gp, b + ".skip", h, 2, 0), training);
    h = leaky_relu(g, add(g, main, skip));
  }
  int n = g.value(x).dim(0);
  Var flat = reshape(g, h, {n, a.exclusive_flat()});
  ExclusiveCode code;
  code.mean = fc_fwd(g, gp, "fc_mean", flat);
  code.logvar = clamp(g, fc_fwd(g, gp, "fc_logvar", flat), -10.0f, 10.0f);
  if (eps) {
    code.sample = reparameterize(g, code.mean, code.logvar, *eps);
  } else {
    code.sample = code.mean;
  }
  return code;
}

Var decode(Graph& g, Var shared, Var exclusive, ModelParams& mp, bool training) {
  const ArchDesc& a = mp.arch;
  const Tensor& ts = g.value(shared);
  const Tensor& te = g.value(exclusive);
  int s = a.shared_spatial();
  if (ts.rank() != 4 || ts.dim(1) != a.shared_channels || ts.dim(2) != s || ts.dim(3) != s)
    throw ConfigError("decode: shared code must be N x " + std::to_string(a.shared_channels) + " x " +
                      std::to_string(s) + " x " + std::to_string(s) + ", got " + ts.shape_str());
  if (te.rank() != 2 || te.dim(0) != ts.dim(0) || te.dim(1) != a.latent_dim)
    throw ConfigError("decode: exclusive code must be " + std::to_string(ts.dim(0)) + " x " +
                      std::to_string(a.latent_dim) + ", got " + te.shape_str());
  ParamGroup& gp = mp.decoder;
  Var h = concat_channels(g, shared, tile_spatial(g, exclusive, s, s));
  for (size_t i = 0; i < a.decoder_widths.size(); ++i) {
    std::string idx = std::to_string(i);
    h = leaky_relu(g, bn_fwd(g, gp, "bn" + idx, tconv_fwd(g, gp, "tconv" + idx, h, 2, 1), training));
  }
  return tanh(g, tconv_fwd(g, gp, "tconv_out", h, 2, 1));
}

Var discriminate(Graph& g, Var x, ModelParams& mp, bool training) {
  const ArchDesc& a = mp.arch;
  check_image_input(g.value(x), a, "discriminate");
  ParamGroup& gp = mp.discriminator;
  Var h = leaky_relu(g, conv_fwd(g, gp, "conv0", x, 2, 1));
  for (size_t i = 1; i < a.disc_widths.size(); ++i) {
    std::string idx = std::to_string(i);
    h = leaky_relu(g, bn_fwd(g, gp, "bn" + idx, conv_fwd(g, gp, "conv" + idx, h, 2, 1), training));
  }
  // The head conv leaves N x 1 x m x m; spatial_mean reduces it to N x 1.
  Var logits = conv_fwd(g, gp, "head", h, 1, 0);
  return sigmoid(g, spatial_mean(g, logits));
}

LatentCode encode(ModelParams& mp, const Tensor& batch) {
  Graph g(false);
  Var x = g.leaf(batch);
  Var sh = encode_shared(g, x, mp, false);
  ExclusiveCode code = encode_exclusive(g, x, mp, false);
  LatentCode lc;
  lc.shared = g.value(sh);
  lc.ex_mean = g.value(code.mean);
  lc.ex_logvar = g.value(code.logvar);
  lc.ex_sample = g.value(code.sample);
  return lc;
}

Tensor decode_batch(ModelParams& mp, const Tensor& shared, const Tensor& exclusive) {
  Graph g(false);
  return g.value(decode(g, g.leaf(shared), g.leaf(exclusive), mp, false));
}

Tensor discriminate_batch(ModelParams& mp, const Tensor& batch) {
  Graph g(false);
  return g.value(discriminate(g, g.leaf(batch), mp, false));
}

namespace {

Tensor slice_rows(const Tensor& batch, int from, int count) {
  std::vector<int> shape = batch.shape();
  int64_t row = batch.numel() / shape[0];
  shape[0] = count;
  Tensor out(shape);
  std::memcpy(out.data(), batch.data() + from * row, sizeof(float) * static_cast<size_t>(count * row));
  return out;
}

template <typename F>
Tensor chunked_features(const Tensor& batch, int chunk, int out_dim, F fn) {
  if (batch.rank() != 4) throw ConfigError("feature extraction expects N x C x H x W, got " + batch.shape_str());
  if (chunk < 1) throw ConfigError("feature extraction chunk must be positive");
  int n = batch.dim(0);
  Tensor out({n, out_dim});
  for (int from = 0; from < n; from += chunk) {
    int count = std::min(chunk, n - from);
    Tensor part = fn(slice_rows(batch, from, count));
    std::memcpy(out.data() + static_cast<int64_t>(from) * out_dim, part.data(),
                sizeof(float) * static_cast<size_t>(count) * out_dim);
  }
  return out;
}

}  // namespace

Tensor shared_features(ModelParams& mp, const Tensor& batch, int chunk) {
  int flat = mp.arch.shared_flat();
  return chunked_features(batch, chunk, flat, [&](Tensor part) {
    Graph g(false);
    int n = part.dim(0);
    Var sh = encode_shared(g, g.leaf(std::move(part)), mp, false);
    return g.value(reshape(g, sh, {n, flat}));
  });
}

Tensor exclusive_means(ModelParams& mp, const Tensor& batch, int chunk) {
  return chunked_features(batch, chunk, mp.arch.latent_dim, [&](Tensor part) {
    Graph g(false);
    Var x = g.leaf(std::move(part));
    return g.value(encode_exclusive(g, x, mp, false).mean);
  });
}

}  // namespace dsts
