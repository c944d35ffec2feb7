#include "dsts/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "json.hpp"

#include "dsts/common.hpp"
#include "dsts/container.hpp"

namespace fs = std::filesystem;

namespace dsts {

namespace {

// Test-split series ids live far above any plausible train id, so the two
// splits can never collide whatever the sizes are.
constexpr int64_t kTestIdOffset = 1'000'000;

// Fixed channel responses to the two independent base fields. Channel 3
// (the NIR stand-in) is dominated by the second field and its own blobs.
constexpr float kMix[4][2] = {{0.8f, 0.2f}, {0.6f, 0.4f}, {0.7f, -0.3f}, {0.3f, -0.7f}};

// Seasonal tone curve constants. Gains stay in [0.7, 1] and offsets within
// +-0.075, keeping values inside (-1, 1) for terrain in [-0.8, 0.8].
constexpr float kGainDepth[4] = {0.30f, 0.22f, 0.26f, 0.18f};
constexpr float kOffsetSwing[4] = {0.10f, -0.12f, 0.08f, -0.15f};

float lattice_value(uint64_t seed, int octave, int64_t xi, int64_t yi) {
  uint64_t h = hash64(seed ^ (static_cast<uint64_t>(octave) * 0x9E3779B97F4A7C15ull) ^
                      (static_cast<uint64_t>(xi) * 0xC2B2AE3D27D4EB4Full) ^
                      (static_cast<uint64_t>(yi) * 0x165667B19E3779F9ull));
  return static_cast<float>(static_cast<double>(h >> 11) * 0x1.0p-53) * 2.0f - 1.0f;
}

float value_noise(uint64_t seed, int octave, float x, float y) {
  int64_t xi = static_cast<int64_t>(std::floor(x));
  int64_t yi = static_cast<int64_t>(std::floor(y));
  float u = x - static_cast<float>(xi);
  float v = y - static_cast<float>(yi);
  u = u * u * (3.0f - 2.0f * u);
  v = v * v * (3.0f - 2.0f * v);
  float c00 = lattice_value(seed, octave, xi, yi);
  float c10 = lattice_value(seed, octave, xi + 1, yi);
  float c01 = lattice_value(seed, octave, xi, yi + 1);
  float c11 = lattice_value(seed, octave, xi + 1, yi + 1);
  float top = c00 + (c10 - c00) * u;
  float bot = c01 + (c11 - c01) * u;
  return top + (bot - top) * v;
}

struct TerrainSpec {
  float base_freq = 4.0f;
  int octaves = 4;
  float persistence = 0.5f;
  int blobs_min = 6, blobs_max = 14;
  float blob_amp = 0.45f;
  int nir_blobs_min = 4, nir_blobs_max = 10;
  float stripe_amp = 0.0f;
};

struct Blob {
  float cx, cy, sigma, amp;
  float w[4];
};

void add_blob(Tensor& t, int size, const Blob& b) {
  int x0 = std::max(0, static_cast<int>(std::floor(b.cx - 3.0f * b.sigma)));
  int x1 = std::min(size - 1, static_cast<int>(std::ceil(b.cx + 3.0f * b.sigma)));
  int y0 = std::max(0, static_cast<int>(std::floor(b.cy - 3.0f * b.sigma)));
  int y1 = std::min(size - 1, static_cast<int>(std::ceil(b.cy + 3.0f * b.sigma)));
  float inv2s2 = 1.0f / (2.0f * b.sigma * b.sigma);
  for (int c = 0; c < 4; ++c) {
    if (b.w[c] == 0.0f) continue;
    float* plane = t.data() + static_cast<int64_t>(c) * size * size;
    float a = b.amp * b.w[c];
    for (int y = y0; y <= y1; ++y) {
      float dy = static_cast<float>(y) - b.cy;
      for (int x = x0; x <= x1; ++x) {
        float dx = static_cast<float>(x) - b.cx;
        plane[static_cast<int64_t>(y) * size + x] += a * std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
    }
  }
}

// Terrain in [-0.8, 0.8], channels correlated through two base fields.
Tensor make_terrain(int size, Rng rng, const TerrainSpec& spec) {
  uint64_t seed_a = rng.next_u64();
  uint64_t seed_b = rng.next_u64();
  std::vector<float> fa(static_cast<size_t>(size) * size, 0.0f);
  std::vector<float> fb(fa.size(), 0.0f);
  for (int o = 0; o < spec.octaves; ++o) {
    float freq = spec.base_freq * static_cast<float>(1 << o);
    float amp = std::pow(spec.persistence, static_cast<float>(o));
    float scale_xy = freq / static_cast<float>(size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        size_t i = static_cast<size_t>(y) * size + x;
        fa[i] += amp * value_noise(seed_a, o, x * scale_xy, y * scale_xy);
        fb[i] += amp * value_noise(seed_b, o, x * scale_xy, y * scale_xy);
      }
  }

  Tensor t({4, size, size});
  for (int c = 0; c < 4; ++c) {
    float* plane = t.data() + static_cast<int64_t>(c) * size * size;
    for (size_t i = 0; i < fa.size(); ++i)
      plane[i] = kMix[c][0] * fa[i] + kMix[c][1] * fb[i];
  }

  int nblobs = static_cast<int>(rng.uniform_int(spec.blobs_min, spec.blobs_max + 1));
  for (int i = 0; i < nblobs; ++i) {
    Blob b;
    b.cx = static_cast<float>(rng.next_double() * size);
    b.cy = static_cast<float>(rng.next_double() * size);
    b.sigma = static_cast<float>(size) * (0.03f + 0.09f * rng.next_float());
    b.amp = spec.blob_amp * (0.5f + 0.5f * rng.next_float()) * (rng.next_u64() & 1 ? 1.0f : -1.0f);
    for (float& w : b.w) w = rng.next_float();
    b.w[3] *= 0.25f;  // NIR mostly gets its own blobs below
    add_blob(t, size, b);
  }
  int nnir = static_cast<int>(rng.uniform_int(spec.nir_blobs_min, spec.nir_blobs_max + 1));
  for (int i = 0; i < nnir; ++i) {
    Blob b;
    b.cx = static_cast<float>(rng.next_double() * size);
    b.cy = static_cast<float>(rng.next_double() * size);
    b.sigma = static_cast<float>(size) * (0.03f + 0.09f * rng.next_float());
    b.amp = spec.blob_amp * (0.6f + 0.4f * rng.next_float()) * (rng.next_u64() & 1 ? 1.0f : -1.0f);
    b.w[0] = b.w[1] = b.w[2] = 0.0f;
    b.w[3] = 1.0f;
    add_blob(t, size, b);
  }

  if (spec.stripe_amp > 0.0f) {
    float theta = static_cast<float>(rng.next_double() * 2.0 * M_PI);
    float wl = static_cast<float>(size) * (0.03f + 0.03f * rng.next_float());
    float phase = static_cast<float>(rng.next_double() * 2.0 * M_PI);
    float kx = std::cos(theta) * 2.0f * static_cast<float>(M_PI) / wl;
    float ky = std::sin(theta) * 2.0f * static_cast<float>(M_PI) / wl;
    const float cw[4] = {1.0f, 0.8f, 0.6f, 0.9f};
    for (int c = 0; c < 4; ++c) {
      float* plane = t.data() + static_cast<int64_t>(c) * size * size;
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
          plane[static_cast<int64_t>(y) * size + x] +=
              spec.stripe_amp * cw[c] * std::sin(kx * static_cast<float>(x) + ky * static_cast<float>(y) + phase);
    }
  }

  // Affine per-channel map onto [-0.8, 0.8]: deterministic, never clips,
  // and guarantees the seasonal tone map stays inside (-1, 1).
  for (int c = 0; c < 4; ++c) {
    float* plane = t.data() + static_cast<int64_t>(c) * size * size;
    float lo = plane[0], hi = plane[0];
    for (int64_t i = 0; i < static_cast<int64_t>(size) * size; ++i) {
      lo = std::min(lo, plane[i]);
      hi = std::max(hi, plane[i]);
    }
    float span = hi - lo;
    if (span < 1e-6f) span = 1e-6f;
    for (int64_t i = 0; i < static_cast<int64_t>(size) * size; ++i)
      plane[i] = -0.8f + 1.6f * (plane[i] - lo) / span;
  }
  return t;
}

TerrainSpec class_spec(int cls) {
  TerrainSpec s;
  switch (cls) {
    case 0:  // plains: smooth low-frequency relief, few features
      s.base_freq = 2.0f;
      s.octaves = 3;
      s.persistence = 0.65f;
      s.blobs_min = 0;
      s.blobs_max = 2;
      s.nir_blobs_min = 0;
      s.nir_blobs_max = 2;
      break;
    case 1:  // dunes: fine high-frequency texture
      s.base_freq = 8.0f;
      s.octaves = 4;
      s.persistence = 0.35f;
      s.blobs_min = 0;
      s.blobs_max = 2;
      s.nir_blobs_min = 0;
      s.nir_blobs_max = 2;
      break;
    case 2:  // wetlands: blob-dominated with strong NIR response
      s.base_freq = 3.0f;
      s.octaves = 3;
      s.persistence = 0.5f;
      s.blobs_min = 18;
      s.blobs_max = 28;
      s.blob_amp = 0.6f;
      s.nir_blobs_min = 10;
      s.nir_blobs_max = 16;
      break;
    case 3:  // ridged: oriented stripe pattern over mild noise
      s.base_freq = 4.0f;
      s.octaves = 3;
      s.persistence = 0.45f;
      s.blobs_min = 0;
      s.blobs_max = 3;
      s.stripe_amp = 0.5f;
      break;
    default:
      throw ConfigError("unknown terrain class " + std::to_string(cls));
  }
  return s;
}

void copy_window(const Tensor& img, int x0, int y0, int p, float* dst) {
  int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < p; ++y)
      std::memcpy(dst + (static_cast<int64_t>(ch) * p + y) * p,
                  img.data() + (static_cast<int64_t>(ch) * h + (y0 + y)) * w + x0,
                  sizeof(float) * static_cast<size_t>(p));
}

nlohmann::json rect_to_json(const ChangeRect& r) {
  return nlohmann::json{{"x0", r.x0}, {"y0", r.y0}, {"w", r.w},
                        {"h", r.h},   {"kind", r.kind}, {"magnitude", r.magnitude}};
}

ChangeRect rect_from_json(const nlohmann::json& j) {
  ChangeRect r;
  j.at("x0").get_to(r.x0);
  j.at("y0").get_to(r.y0);
  j.at("w").get_to(r.w);
  j.at("h").get_to(r.h);
  j.at("kind").get_to(r.kind);
  j.at("magnitude").get_to(r.magnitude);
  return r;
}

}  // namespace

void SyntheticParams::validate() const {
  if (n_series < 1) throw ConfigError("n_series must be positive");
  if (time_steps < 2) throw ConfigError("time_steps must be at least 2");
  if (image_size < 64 || image_size % 64 != 0)
    throw ConfigError("image_size must be a positive multiple of 64, got " + std::to_string(image_size));
  if (channels != 4) throw ConfigError("channels is fixed at 4");
  if (split != "train" && split != "test")
    throw ConfigError("split must be 'train' or 'test', got '" + split + "'");
  if (change_prob < 0.0f || change_prob > 1.0f) throw ConfigError("change_prob must be in [0,1]");
  if (max_changes < 0 || max_changes > 8) throw ConfigError("max_changes must be in [0,8]");
}

std::string SyntheticParams::to_json() const {
  nlohmann::json j;
  j["n_series"] = n_series;
  j["time_steps"] = time_steps;
  j["image_size"] = image_size;
  j["channels"] = channels;
  j["seed"] = seed;
  j["split"] = split;
  j["change_prob"] = change_prob;
  j["max_changes"] = max_changes;
  return j.dump();
}

SyntheticParams SyntheticParams::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("SyntheticParams: bad JSON: ") + e.what());
  }
  SyntheticParams p;
  try {
    j.at("n_series").get_to(p.n_series);
    j.at("time_steps").get_to(p.time_steps);
    j.at("image_size").get_to(p.image_size);
    j.at("channels").get_to(p.channels);
    j.at("seed").get_to(p.seed);
    j.at("split").get_to(p.split);
    j.at("change_prob").get_to(p.change_prob);
    j.at("max_changes").get_to(p.max_changes);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("SyntheticParams: missing or mistyped field: ") + e.what());
  }
  p.validate();
  return p;
}

bool rects_overlap(const ChangeRect& a, const ChangeRect& b) {
  return a.x0 < b.x0 + b.w && b.x0 < a.x0 + a.w && a.y0 < b.y0 + b.h && b.y0 < a.y0 + a.h;
}

float rect_iou(const ChangeRect& a, const ChangeRect& b) {
  int ix = std::max(0, std::min(a.x0 + a.w, b.x0 + b.w) - std::max(a.x0, b.x0));
  int iy = std::max(0, std::min(a.y0 + a.h, b.y0 + b.h) - std::max(a.y0, b.y0));
  float inter = static_cast<float>(ix) * iy;
  float uni = static_cast<float>(a.w) * a.h + static_cast<float>(b.w) * b.h - inter;
  return uni > 0.0f ? inter / uni : 0.0f;
}

float season_phase(int t, int time_steps) {
  if (time_steps < 1 || t < 0 || t >= time_steps) throw ConfigError("season_phase: bad time index");
  return 0.5f - 0.5f * std::cos(2.0f * static_cast<float>(M_PI) * static_cast<float>(t) /
                                static_cast<float>(time_steps));
}

float season_gain(int channel, float s) { return 1.0f - kGainDepth[channel & 3] * s; }

float season_offset(int channel, float s) { return kOffsetSwing[channel & 3] * (s - 0.5f); }

void apply_season(Tensor& image, float s) {
  if (image.rank() != 3) throw ConfigError("apply_season expects C x H x W");
  int c = image.dim(0);
  int64_t plane = static_cast<int64_t>(image.dim(1)) * image.dim(2);
  for (int ch = 0; ch < c; ++ch) {
    float g = season_gain(ch, s), o = season_offset(ch, s);
    float* p = image.data() + static_cast<int64_t>(ch) * plane;
    for (int64_t i = 0; i < plane; ++i) p[i] = p[i] * g + o;
  }
}

void invert_season(Tensor& image, float s) {
  if (image.rank() != 3) throw ConfigError("invert_season expects C x H x W");
  int c = image.dim(0);
  int64_t plane = static_cast<int64_t>(image.dim(1)) * image.dim(2);
  for (int ch = 0; ch < c; ++ch) {
    float g = season_gain(ch, s), o = season_offset(ch, s);
    float* p = image.data() + static_cast<int64_t>(ch) * plane;
    for (int64_t i = 0; i < plane; ++i) p[i] = (p[i] - o) / g;
  }
}

TimeSeriesDataset generate_synthetic_dataset(const SyntheticParams& p) {
  p.validate();
  TimeSeriesDataset ds;
  ds.params = p;
  Rng master(p.seed);
  int64_t id0 = p.split == "test" ? kTestIdOffset : 0;
  int size = p.image_size;

  for (int si = 0; si < p.n_series; ++si) {
    SeriesRecord rec;
    rec.id = id0 + si;
    Rng srng = master.derive(static_cast<uint64_t>(rec.id) + 1);
    Tensor terrain = make_terrain(size, srng.derive(0), TerrainSpec{});
    Rng crng = srng.derive(1);  // change stream, independent of terrain

    rec.truth.season.resize(static_cast<size_t>(p.time_steps));
    rec.truth.changes.resize(static_cast<size_t>(p.time_steps));
    for (int t = 0; t < p.time_steps; ++t) {
      float s = season_phase(t, p.time_steps);
      rec.truth.season[static_cast<size_t>(t)] = s;
      Tensor img = terrain;
      apply_season(img, s);

      if (t > 0 && p.max_changes > 0) {
        int count = 0;
        if (crng.next_float() < p.change_prob)
          count = static_cast<int>(crng.uniform_int(1, p.max_changes + 1));
        for (int k = 0; k < count; ++k) {
          ChangeRect r;
          r.w = static_cast<int>(crng.uniform_int(size / 10, size / 4 + 1));
          r.h = static_cast<int>(crng.uniform_int(size / 10, size / 4 + 1));
          r.x0 = static_cast<int>(crng.uniform_int(0, size - r.w));
          r.y0 = static_cast<int>(crng.uniform_int(0, size - r.h));
          r.kind = static_cast<int>(crng.uniform_int(0, 2));
          if (r.kind == 0) {
            r.magnitude = (0.2f + 0.15f * crng.next_float()) * (crng.next_u64() & 1 ? 1.0f : -1.0f);
            for (int c = 0; c < p.channels; ++c) {
              float* plane = img.data() + static_cast<int64_t>(c) * size * size;
              for (int y = r.y0; y < r.y0 + r.h; ++y)
                for (int x = r.x0; x < r.x0 + r.w; ++x) {
                  float& v = plane[static_cast<int64_t>(y) * size + x];
                  v = std::clamp(v + r.magnitude, -0.95f, 0.95f);
                }
            }
          } else {
            // Texture replacement: fresh noise, uncorrelated with the
            // terrain, same amplitude class.
            r.magnitude = 0.5f;
            uint64_t tex_seed = crng.next_u64();
            for (int c = 0; c < p.channels; ++c) {
              float* plane = img.data() + static_cast<int64_t>(c) * size * size;
              for (int y = r.y0; y < r.y0 + r.h; ++y)
                for (int x = r.x0; x < r.x0 + r.w; ++x) {
                  float n = value_noise(tex_seed + static_cast<uint64_t>(c), 0,
                                        static_cast<float>(x) * 0.15f, static_cast<float>(y) * 0.15f);
                  plane[static_cast<int64_t>(y) * size + x] = r.magnitude * n;
                }
            }
          }
          rec.truth.changes[static_cast<size_t>(t)].push_back(r);
        }
      }
      img.require_finite("synthetic image");
      rec.images.push_back(std::move(img));
    }
    ds.series.push_back(std::move(rec));
  }
  return ds;
}

std::vector<int64_t> TimeSeriesDataset::ids() const {
  std::vector<int64_t> out;
  out.reserve(series.size());
  for (const auto& s : series) out.push_back(s.id);
  return out;
}

void TimeSeriesDataset::save(const std::string& dir) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir);

  nlohmann::json j;
  j["format_version"] = 1;
  j["params"] = nlohmann::json::parse(params.to_json());
  nlohmann::json jseries = nlohmann::json::array();
  for (size_t si = 0; si < series.size(); ++si) {
    const SeriesRecord& rec = series[si];
    char dname[32];
    std::snprintf(dname, sizeof(dname), "series_%04zu", si);
    fs::create_directories(fs::path(dir) / dname, ec);
    if (ec) throw DataError("cannot create series directory under " + dir);

    nlohmann::json js;
    js["id"] = rec.id;
    js["dir"] = dname;
    nlohmann::json imgs = nlohmann::json::array();
    for (size_t t = 0; t < rec.images.size(); ++t) {
      char fname[16];
      std::snprintf(fname, sizeof(fname), "t%02zu.dsts", t);
      save_tensor((fs::path(dir) / dname / fname).string(), rec.images[t]);
      imgs.push_back(fname);
    }
    js["images"] = imgs;
    js["season"] = rec.truth.season;
    nlohmann::json jch = nlohmann::json::array();
    for (const auto& per_t : rec.truth.changes) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : per_t) arr.push_back(rect_to_json(r));
      jch.push_back(arr);
    }
    js["changes"] = jch;
    jseries.push_back(js);
  }
  j["series"] = jseries;
  write_file((fs::path(dir) / "manifest.json").string(), j.dump(2) + "\n");
}

TimeSeriesDataset TimeSeriesDataset::load(const std::string& dir) {
  std::string text = read_file((fs::path(dir) / "manifest.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset manifest: bad JSON: ") + e.what());
  }
  TimeSeriesDataset ds;
  try {
    int version = j.at("format_version").get<int>();
    if (version != 1)
      throw VersionError("dataset manifest version " + std::to_string(version) + ", expected 1");
    ds.params = SyntheticParams::from_json(j.at("params").dump());
    for (const auto& js : j.at("series")) {
      SeriesRecord rec;
      js.at("id").get_to(rec.id);
      std::string sdir = js.at("dir").get<std::string>();
      js.at("season").get_to(rec.truth.season);
      for (const auto& arr : js.at("changes")) {
        std::vector<ChangeRect> per_t;
        for (const auto& jr : arr) per_t.push_back(rect_from_json(jr));
        rec.truth.changes.push_back(std::move(per_t));
      }
      for (const auto& fname : js.at("images")) {
        Tensor img = load_tensor((fs::path(dir) / sdir / fname.get<std::string>()).string());
        if (img.rank() != 3 || img.dim(0) != ds.params.channels ||
            img.dim(1) != ds.params.image_size || img.dim(2) != ds.params.image_size)
          throw DataError("dataset image has shape " + img.shape_str() + ", expected " +
                          std::to_string(ds.params.channels) + "x" +
                          std::to_string(ds.params.image_size) + "x" +
                          std::to_string(ds.params.image_size));
        if (tmin(img) <= -1.0f || tmax(img) >= 1.0f)
          throw DataError("dataset image values outside (-1, 1)");
        rec.images.push_back(std::move(img));
      }
      if (static_cast<int>(rec.images.size()) != ds.params.time_steps ||
          rec.truth.season.size() != rec.images.size() ||
          rec.truth.changes.size() != rec.images.size())
        throw DataError("dataset series has inconsistent time step count");
      ds.series.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset manifest: missing or mistyped field: ") + e.what());
  }
  if (static_cast<int>(ds.series.size()) != ds.params.n_series)
    throw DataError("dataset has " + std::to_string(ds.series.size()) + " series, manifest says " +
                    std::to_string(ds.params.n_series));
  return ds;
}

PatchPairBatch sample_patch_pairs(const TimeSeriesDataset& ds, int m, int patch, Rng& rng) {
  if (ds.series.empty()) throw DataError("sample_patch_pairs: empty dataset");
  if (m < 1) throw ConfigError("sample_patch_pairs: batch size must be positive");
  int size = ds.params.image_size;
  int t_steps = ds.params.time_steps;
  if (patch < 1 || patch > size)
    throw ConfigError("sample_patch_pairs: patch " + std::to_string(patch) +
                      " does not fit image size " + std::to_string(size));
  if (t_steps < 2) throw DataError("sample_patch_pairs: need at least two time steps");

  int c = ds.params.channels;
  PatchPairBatch batch;
  batch.x = Tensor({m, c, patch, patch});
  batch.y = Tensor({m, c, patch, patch});
  int64_t item = static_cast<int64_t>(c) * patch * patch;
  for (int i = 0; i < m; ++i) {
    const SeriesRecord& rec = ds.series[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(ds.series.size())))];
    int x0 = static_cast<int>(rng.uniform_int(0, size - patch + 1));
    int y0 = static_cast<int>(rng.uniform_int(0, size - patch + 1));
    int tx = static_cast<int>(rng.uniform_int(0, t_steps));
    int ty = static_cast<int>(rng.uniform_int(0, t_steps - 1));
    if (ty >= tx) ++ty;
    copy_window(rec.images[static_cast<size_t>(tx)], x0, y0, patch, batch.x.data() + i * item);
    copy_window(rec.images[static_cast<size_t>(ty)], x0, y0, patch, batch.y.data() + i * item);
    batch.prov.push_back({rec.id, x0, y0, tx, ty});
  }
  return batch;
}

void LabeledPatches::save(const std::string& dir) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir);
  save_tensor((fs::path(dir) / "patches.dsts").string(), patches);
  nlohmann::json j;
  j["format_version"] = 1;
  j["n_classes"] = n_classes;
  j["labels"] = labels;
  write_file((fs::path(dir) / "labels.json").string(), j.dump(2) + "\n");
}

LabeledPatches LabeledPatches::load(const std::string& dir) {
  LabeledPatches lp;
  lp.patches = load_tensor((fs::path(dir) / "patches.dsts").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file((fs::path(dir) / "labels.json").string()));
    int version = j.at("format_version").get<int>();
    if (version != 1)
      throw VersionError("labels.json version " + std::to_string(version) + ", expected 1");
    j.at("n_classes").get_to(lp.n_classes);
    j.at("labels").get_to(lp.labels);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("labels.json: ") + e.what());
  }
  if (lp.patches.rank() != 4 || static_cast<int>(lp.labels.size()) != lp.patches.dim(0))
    throw DataError("labeled patches and labels disagree");
  for (int lab : lp.labels)
    if (lab < 0 || lab >= lp.n_classes) throw DataError("label outside [0, n_classes)");
  return lp;
}

LabeledPatches generate_labeled_patches(int per_class, int patch, uint64_t seed, int classes) {
  if (per_class < 1) throw ConfigError("per_class must be positive");
  if (classes < 2 || classes > 4) throw ConfigError("classes must be in [2,4]");
  if (patch < 64 || patch % 64 != 0) throw ConfigError("labeled patch size must be a multiple of 64");
  Rng master(seed);
  LabeledPatches lp;
  lp.n_classes = classes;
  lp.patches = Tensor({per_class * classes, 4, patch, patch});
  int64_t item = static_cast<int64_t>(4) * patch * patch;
  int64_t idx = 0;
  for (int cls = 0; cls < classes; ++cls) {
    TerrainSpec spec = class_spec(cls);
    for (int i = 0; i < per_class; ++i, ++idx) {
      Rng prng = master.derive(static_cast<uint64_t>(cls) * 100003ull + static_cast<uint64_t>(i) + 1);
      Tensor img = make_terrain(patch, prng.derive(0), spec);
      float s = prng.next_float();
      apply_season(img, s);
      std::memcpy(lp.patches.data() + idx * item, img.data(), sizeof(float) * static_cast<size_t>(item));
      lp.labels.push_back(cls);
    }
  }
  return lp;
}

}  // namespace dsts
