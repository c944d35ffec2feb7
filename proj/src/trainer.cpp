#include "dsts/trainer.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "dsts/common.hpp"
#include "dsts/container.hpp"
#include "dsts/data.hpp"

namespace fs = std::filesystem;

namespace dsts {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (patch_size < 1) throw ConfigError("patch_size must be positive");
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (!(lr_initial > 0.0f)) throw ConfigError("lr_initial must be positive");
  if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be positive");
  if (!(lr_decay_factor > 0.0f) || lr_decay_factor > 1.0f)
    throw ConfigError("lr_decay_factor must be in (0, 1]");
  if (beta1 < 0.0f || beta1 >= 1.0f || beta2 < 0.0f || beta2 >= 1.0f)
    throw ConfigError("adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0f)) throw ConfigError("adam_eps must be positive");
  if (weights.lambda_l1 < 0.0f || weights.lambda_l1_sh < 0.0f || weights.lambda_kl < 0.0f)
    throw ConfigError("loss weights must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["batch_size"] = batch_size;
  j["patch_size"] = patch_size;
  j["iterations"] = iterations;
  j["lr_initial"] = lr_initial;
  j["lr_decay_every"] = lr_decay_every;
  j["lr_decay_factor"] = lr_decay_factor;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["lambda_l1"] = weights.lambda_l1;
  j["lambda_l1_sh"] = weights.lambda_l1_sh;
  j["lambda_kl"] = weights.lambda_kl;
  j["gan_form"] = to_string(gan_form);
  j["seed"] = seed;
  j["checkpoint_every"] = checkpoint_every;
  j["out_dir"] = out_dir;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("TrainConfig: bad JSON: ") + e.what());
  }
  TrainConfig c;
  try {
    j.at("batch_size").get_to(c.batch_size);
    j.at("patch_size").get_to(c.patch_size);
    j.at("iterations").get_to(c.iterations);
    j.at("lr_initial").get_to(c.lr_initial);
    j.at("lr_decay_every").get_to(c.lr_decay_every);
    j.at("lr_decay_factor").get_to(c.lr_decay_factor);
    j.at("beta1").get_to(c.beta1);
    j.at("beta2").get_to(c.beta2);
    j.at("adam_eps").get_to(c.adam_eps);
    j.at("lambda_l1").get_to(c.weights.lambda_l1);
    j.at("lambda_l1_sh").get_to(c.weights.lambda_l1_sh);
    j.at("lambda_kl").get_to(c.weights.lambda_kl);
    c.gan_form = gan_form_from_string(j.at("gan_form").get<std::string>());
    j.at("seed").get_to(c.seed);
    j.at("checkpoint_every").get_to(c.checkpoint_every);
    j.at("out_dir").get_to(c.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("TrainConfig: missing or mistyped field: ") + e.what());
  }
  c.validate();
  return c;
}

float lr_at(int64_t iter, const TrainConfig& cfg) {
  if (iter < 0) throw ConfigError("lr_at: negative iteration");
  int64_t steps = iter / cfg.lr_decay_every;
  return cfg.lr_initial * std::pow(cfg.lr_decay_factor, static_cast<float>(steps));
}

// ---- checkpoint serialization ----

namespace {

constexpr char kCkptMagic[8] = {'D', 'S', 'T', 'S', 'C', 'K', 'P', 'T'};
constexpr uint16_t kCkptVersion = 1;

enum class EntryKind : uint8_t { tensor = 0, u64 = 1, bytes = 2 };

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw DataError("checkpoint truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

void put_entry_header(std::string& out, EntryKind kind, const std::string& name) {
  put<uint8_t>(out, static_cast<uint8_t>(kind));
  put<uint32_t>(out, static_cast<uint32_t>(name.size()));
  out += name;
}

void put_tensor_entry(std::string& out, const std::string& name, const Tensor& t) {
  put_entry_header(out, EntryKind::tensor, name);
  encode_tensor(out, t);
}

void put_u64_entry(std::string& out, const std::string& name, uint64_t v) {
  put_entry_header(out, EntryKind::u64, name);
  put<uint64_t>(out, v);
}

void put_bytes_entry(std::string& out, const std::string& name, const std::string& bytes) {
  put_entry_header(out, EntryKind::bytes, name);
  put<uint32_t>(out, static_cast<uint32_t>(bytes.size()));
  out += bytes;
}

struct CkptEntry {
  EntryKind kind;
  Tensor tensor;
  uint64_t u64 = 0;
  std::string bytes;
};

struct CkptReader {
  std::unordered_map<std::string, CkptEntry> entries;

  const CkptEntry& get(const std::string& name, EntryKind kind) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw VersionError("checkpoint missing entry: " + name);
    if (it->second.kind != kind) throw VersionError("checkpoint entry has wrong kind: " + name);
    return it->second;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string out;
  out.append(kCkptMagic, 8);
  put<uint16_t>(out, kCkptVersion);

  std::string body;
  uint32_t count = 0;
  auto tensor_entry = [&](const std::string& name, const Tensor& t) {
    put_tensor_entry(body, name, t);
    ++count;
  };
  auto u64_entry = [&](const std::string& name, uint64_t v) {
    put_u64_entry(body, name, v);
    ++count;
  };
  auto bytes_entry = [&](const std::string& name, const std::string& b) {
    put_bytes_entry(body, name, b);
    ++count;
  };

  bytes_entry("meta/arch", ck.params.arch.to_json());
  bytes_entry("meta/config", ck.config.to_json());
  u64_entry("meta/iteration", static_cast<uint64_t>(ck.iteration));
  {
    std::string rng_bytes;
    for (uint64_t w : ck.rng_state) put<uint64_t>(rng_bytes, w);
    bytes_entry("meta/rng", rng_bytes);
  }
  bytes_entry("meta/train_ids", nlohmann::json(ck.train_series_ids).dump());

  auto groups = ck.params.groups();
  if (ck.opt.size() != groups.size()) throw ConfigError("checkpoint optimizer groups misaligned");
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const ParamGroup& gp = *groups[gi];
    size_t ti = 0;
    for (const Param& p : gp.params) {
      tensor_entry("params/" + gp.name + "/" + p.name, p.value);
      if (!p.trainable) continue;
      if (ti >= ck.opt[gi].size()) throw ConfigError("checkpoint optimizer states misaligned");
      const AdamState& st = ck.opt[gi][ti++];
      tensor_entry("opt/" + gp.name + "/" + p.name + "/m", st.m);
      tensor_entry("opt/" + gp.name + "/" + p.name + "/v", st.v);
      u64_entry("opt/" + gp.name + "/" + p.name + "/step", static_cast<uint64_t>(st.step));
    }
    if (ti != ck.opt[gi].size()) throw ConfigError("checkpoint optimizer states misaligned");
  }

  put<uint32_t>(out, count);
  out += body;
  put<uint32_t>(out, crc32_of(out));
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string buf = read_file(path);
  if (buf.size() < 14 || std::memcmp(buf.data(), kCkptMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);
  {
    std::string body = buf.substr(0, buf.size() - 4);
    size_t tp = buf.size() - 4;
    uint32_t stored = take<uint32_t>(buf, tp);
    if (crc32_of(body) != stored) throw DataError("checkpoint CRC mismatch: " + path);
  }
  size_t pos = 8;
  uint16_t version = take<uint16_t>(buf, pos);
  if (version != kCkptVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCkptVersion));

  CkptReader rd;
  uint32_t count = take<uint32_t>(buf, pos);
  const std::string body = buf.substr(0, buf.size() - 4);
  for (uint32_t i = 0; i < count; ++i) {
    EntryKind kind = static_cast<EntryKind>(take<uint8_t>(body, pos));
    uint32_t name_len = take<uint32_t>(body, pos);
    if (pos + name_len > body.size()) throw DataError("checkpoint truncated");
    std::string name = body.substr(pos, name_len);
    pos += name_len;
    CkptEntry e;
    e.kind = kind;
    switch (kind) {
      case EntryKind::tensor:
        e.tensor = decode_tensor(body, pos);
        break;
      case EntryKind::u64:
        e.u64 = take<uint64_t>(body, pos);
        break;
      case EntryKind::bytes: {
        uint32_t len = take<uint32_t>(body, pos);
        if (pos + len > body.size()) throw DataError("checkpoint truncated");
        e.bytes = body.substr(pos, len);
        pos += len;
        break;
      }
      default:
        throw DataError("checkpoint has unknown entry kind");
    }
    if (!rd.entries.emplace(std::move(name), std::move(e)).second)
      throw DataError("checkpoint has duplicate entries");
  }
  if (pos != body.size()) throw DataError("checkpoint has trailing bytes");

  Checkpoint ck;
  ck.params = init_model(ArchDesc::from_json(rd.get("meta/arch", EntryKind::bytes).bytes), 0);
  ck.config = TrainConfig::from_json(rd.get("meta/config", EntryKind::bytes).bytes);
  ck.iteration = static_cast<int64_t>(rd.get("meta/iteration", EntryKind::u64).u64);
  {
    const std::string& rb = rd.get("meta/rng", EntryKind::bytes).bytes;
    if (rb.size() != 32) throw DataError("checkpoint rng state has wrong size");
    size_t rp = 0;
    for (auto& w : ck.rng_state) w = take<uint64_t>(rb, rp);
  }
  try {
    nlohmann::json::parse(rd.get("meta/train_ids", EntryKind::bytes).bytes).get_to(ck.train_series_ids);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint train_ids: ") + e.what());
  }

  size_t used = 5;  // meta entries
  for (ParamGroup* gp : ck.params.groups()) {
    std::vector<AdamState> states;
    for (Param& p : gp->params) {
      const CkptEntry& pe = rd.get("params/" + gp->name + "/" + p.name, EntryKind::tensor);
      if (!pe.tensor.same_shape(p.value))
        throw VersionError("checkpoint param " + gp->name + "/" + p.name + " has shape " +
                           pe.tensor.shape_str() + ", expected " + p.value.shape_str());
      p.value = pe.tensor;
      ++used;
      if (!p.trainable) continue;
      AdamState st = AdamState::like(p.value, ck.config.beta1, ck.config.beta2, ck.config.adam_eps);
      const std::string base = "opt/" + gp->name + "/" + p.name;
      st.m = rd.get(base + "/m", EntryKind::tensor).tensor;
      st.v = rd.get(base + "/v", EntryKind::tensor).tensor;
      st.step = static_cast<int64_t>(rd.get(base + "/step", EntryKind::u64).u64);
      if (!st.m.same_shape(p.value) || !st.v.same_shape(p.value))
        throw VersionError("checkpoint optimizer state misshapen for " + gp->name + "/" + p.name);
      used += 3;
      states.push_back(std::move(st));
    }
    ck.opt.push_back(std::move(states));
  }
  if (used != rd.entries.size())
    throw VersionError("checkpoint has " + std::to_string(rd.entries.size()) +
                       " entries, expected " + std::to_string(used));
  return ck;
}

// ---- objective wiring ----

ObjectiveGraph build_objective(Graph& g, ModelParams& mp, const Tensor& x, const Tensor& y,
                               const Tensor& eps_x, const Tensor& eps_y, const LossWeights& w,
                               GanForm form, bool training) {
  if (!x.same_shape(y))
    throw ConfigError("objective: x " + x.shape_str() + " and y " + y.shape_str() + " differ");
  Var vx = g.leaf(x);
  Var vy = g.leaf(y);

  Var sh_x = encode_shared(g, vx, mp, training);
  Var sh_y = encode_shared(g, vy, mp, training);
  ExclusiveCode ex_x = encode_exclusive(g, vx, mp, training, training ? &eps_x : nullptr);
  ExclusiveCode ex_y = encode_exclusive(g, vy, mp, training, training ? &eps_y : nullptr);

  // Cross reconstruction: each domain is rebuilt from the other's shared
  // code and its own exclusive code.
  Var fake_x = decode(g, sh_y, ex_x.sample, mp, training);
  Var fake_y = decode(g, sh_x, ex_y.sample, mp, training);

  Var d_real_x = discriminate(g, vx, mp, training);
  Var d_real_y = discriminate(g, vy, mp, training);
  Var d_fake_x = discriminate(g, fake_x, mp, training);
  Var d_fake_y = discriminate(g, fake_y, mp, training);

  ObjectiveGraph og;
  og.parts.gan_x = lsgan_loss(g, d_real_x, d_fake_x, form);
  og.parts.gan_y = lsgan_loss(g, d_real_y, d_fake_y, form);
  og.parts.rec_xy = reconstruction_l1(g, vx, fake_x);
  og.parts.rec_yx = reconstruction_l1(g, vy, fake_y);
  og.parts.kl_x = kl_loss(g, ex_x.mean, ex_x.logvar);
  og.parts.kl_y = kl_loss(g, ex_y.mean, ex_y.logvar);
  og.parts.shared_l1 = shared_l1_loss(g, sh_x, sh_y);
  og.total = total_objective(g, og.parts, w);
  return og;
}

// ---- trainer ----

Trainer::Trainer(ModelParams params, TrainConfig cfg)
    : params_(std::move(params)), cfg_(std::move(cfg)), rng_(Rng(cfg_.seed).derive(1001)) {
  cfg_.validate();
  params_.arch.validate();
  if (cfg_.patch_size != params_.arch.patch)
    throw ConfigError("patch_size " + std::to_string(cfg_.patch_size) +
                      " does not match the model's patch " + std::to_string(params_.arch.patch));
  for (ParamGroup* gp : params_.groups()) {
    std::vector<AdamState> states;
    for (const Param& p : gp->params)
      if (p.trainable) states.push_back(AdamState::like(p.value, cfg_.beta1, cfg_.beta2, cfg_.adam_eps));
    opt_.push_back(std::move(states));
  }
}

Trainer::Trainer(Checkpoint ck)
    : params_(std::move(ck.params)),
      cfg_(std::move(ck.config)),
      opt_(std::move(ck.opt)),
      rng_(Rng::from_state(ck.rng_state)),
      iteration_(ck.iteration),
      train_series_ids_(std::move(ck.train_series_ids)) {}

void Trainer::update_group(Graph& g, ParamGroup& gp, std::vector<AdamState>& states, float lr,
                           float grad_scale) {
  size_t ti = 0;
  for (Param& p : gp.params) {
    if (!p.trainable) continue;
    Var v = g.param(p);
    AdamState& st = states.at(ti++);
    if (g.has_grad(v)) {
      try {
        adam_step(p.value, g.grad(v), st, lr, grad_scale);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (param " + gp.name + "/" + p.name + ")");
      }
    } else {
      // Not on the loss path this iteration; moments still decay.
      adam_step(p.value, Tensor::zeros(p.value.shape()), st, lr, grad_scale);
    }
  }
}

LossBreakdown Trainer::train_step(const PatchPairBatch& batch) {
  const ArchDesc& a = params_.arch;
  if (batch.x.rank() != 4 || !batch.x.same_shape(batch.y))
    throw ConfigError("train_step: malformed batch");
  int m = batch.x.dim(0);

  Tensor eps_x({m, a.latent_dim});
  Tensor eps_y({m, a.latent_dim});
  rng_.fill_normal(eps_x.data(), eps_x.numel());
  rng_.fill_normal(eps_y.data(), eps_y.numel());

  Graph g(true);
  ObjectiveGraph og = build_objective(g, params_, batch.x, batch.y, eps_x, eps_y, cfg_.weights,
                                      cfg_.gan_form, true);

  LossBreakdown lb;
  lb.iter = iteration_ + 1;
  lb.gan_x = g.value(og.parts.gan_x)[0];
  lb.gan_y = g.value(og.parts.gan_y)[0];
  lb.rec_xy = g.value(og.parts.rec_xy)[0];
  lb.rec_yx = g.value(og.parts.rec_yx)[0];
  lb.kl_x = g.value(og.parts.kl_x)[0];
  lb.kl_y = g.value(og.parts.kl_y)[0];
  lb.shared_l1 = g.value(og.parts.shared_l1)[0];
  lb.total = g.value(og.total)[0];
  lb.lr = lr_at(iteration_, cfg_);

  if (!std::isfinite(lb.total))
    throw NumericError("training diverged: non-finite loss at iteration " +
                       std::to_string(lb.iter) + "; last checkpoint: " +
                       (last_checkpoint_.empty() ? std::string("none") : last_checkpoint_));

  g.backward(og.total);

  float lr = lb.lr;
  auto groups = params_.groups();
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    // The discriminator ascends the shared objective; everyone else descends.
    float scale = (groups[gi] == &params_.discriminator) ? -1.0f : 1.0f;
    update_group(g, *groups[gi], opt_[gi], lr, scale);
  }

  ++iteration_;
  return lb;
}

Checkpoint Trainer::make_checkpoint() const {
  Checkpoint ck;
  ck.params = params_;
  ck.opt = opt_;
  ck.iteration = iteration_;
  ck.config = cfg_;
  ck.rng_state = rng_.state();
  ck.train_series_ids = train_series_ids_;
  return ck;
}

FitResult Trainer::fit(const TimeSeriesDataset& ds,
                       const std::function<void(const LossBreakdown&)>& on_iter) {
  if (ds.series.empty()) throw DataError("fit: empty dataset");
  train_series_ids_ = ds.ids();

  FitResult result;
  std::ofstream log_file;
  if (!cfg_.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(cfg_.out_dir, ec);
    if (ec) throw DataError("cannot create out_dir " + cfg_.out_dir);
    bool fresh = iteration_ == 0;
    log_file.open(fs::path(cfg_.out_dir) / "log.csv", fresh ? std::ios::trunc : std::ios::app);
    if (!log_file) throw DataError("cannot open log.csv under " + cfg_.out_dir);
    if (fresh) log_file << LossBreakdown::csv_header() << "\n";
  }

  auto write_ckpt = [&](const std::string& name) {
    std::string path = (fs::path(cfg_.out_dir) / name).string();
    save_checkpoint(path, make_checkpoint());
    last_checkpoint_ = path;
    return path;
  };

  while (iteration_ < cfg_.iterations) {
    PatchPairBatch batch = sample_patch_pairs(ds, cfg_.batch_size, cfg_.patch_size, rng_);
    LossBreakdown lb = train_step(batch);
    result.log.push_back(lb);
    if (on_iter) on_iter(lb);
    if (log_file) {
      log_file << lb.csv_row() << "\n";
      log_file.flush();
    }
    if (!cfg_.out_dir.empty() && cfg_.checkpoint_every > 0 && iteration_ % cfg_.checkpoint_every == 0 &&
        iteration_ < cfg_.iterations)
      write_ckpt("ckpt-" + std::to_string(iteration_) + ".bin");
  }

  if (!cfg_.out_dir.empty()) result.final_checkpoint = write_ckpt("ckpt-final.bin");
  return result;
}

}  // namespace dsts
