#include "dsts/png_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "dsts/common.hpp"
#include "dsts/container.hpp"

namespace dsts {

namespace {

void put_be32(std::string& out, uint32_t v) {
  char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
               static_cast<char>(v)};
  out.append(b, 4);
}

void put_chunk(std::string& out, const char type[4], const std::string& payload) {
  put_be32(out, static_cast<uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out += body;
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_be32(out, static_cast<uint32_t>(c));
}

std::string zlib_compress(const std::string& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::string out(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK)
    throw DataError("png: deflate failed");
  out.resize(bound);
  return out;
}

// rows: H x W x channels interleaved bytes, channels in {1, 3}.
void write_png(const std::string& path, const std::vector<uint8_t>& rows, int w, int h, int channels) {
  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, static_cast<uint32_t>(w));
  put_be32(ihdr, static_cast<uint32_t>(h));
  ihdr += static_cast<char>(8);                        // bit depth
  ihdr += static_cast<char>(channels == 3 ? 2 : 0);    // color type
  ihdr += '\0';
  ihdr += '\0';
  ihdr += '\0';
  put_chunk(png, "IHDR", ihdr);
  std::string raw;
  raw.reserve(static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * channels));
  for (int y = 0; y < h; ++y) {
    raw += '\0';  // filter 0
    raw.append(reinterpret_cast<const char*>(rows.data()) + static_cast<size_t>(y) * w * channels,
               static_cast<size_t>(w) * channels);
  }
  put_chunk(png, "IDAT", zlib_compress(raw));
  put_chunk(png, "IEND", "");
  write_file(path, png);
}

}  // namespace

uint8_t unit_to_byte(float v) {
  v = std::clamp(v, -1.0f, 1.0f);
  float scaled = (v + 1.0f) * 0.5f * 255.0f;
  int b = static_cast<int>(std::floor(scaled + 0.5f));
  return static_cast<uint8_t>(std::clamp(b, 0, 255));
}

void export_png(const std::string& path, const Tensor& image, std::array<int, 3> bands) {
  if (image.rank() != 3) throw ConfigError("export_png expects C x H x W, got " + image.shape_str());
  int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (int b : bands)
    if (b < 0 || b >= c)
      throw ConfigError("export_png band " + std::to_string(b) + " out of range for " +
                        std::to_string(c) + " channels");
  std::vector<uint8_t> rows(static_cast<size_t>(h) * w * 3);
  const float* src = image.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < 3; ++k) {
        float v = src[(static_cast<int64_t>(bands[static_cast<size_t>(k)]) * h + y) * w + x];
        rows[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(k)] = unit_to_byte(v);
      }
  write_png(path, rows, w, h, 3);
}

void export_png_gray(const std::string& path, const Tensor& image, float lo, float hi) {
  if (image.rank() != 2) throw ConfigError("export_png_gray expects H x W, got " + image.shape_str());
  if (!(hi > lo)) throw ConfigError("export_png_gray: hi must exceed lo");
  int h = image.dim(0), w = image.dim(1);
  std::vector<uint8_t> rows(static_cast<size_t>(h) * w);
  for (int64_t i = 0; i < image.numel(); ++i) {
    float t = (image[i] - lo) / (hi - lo);
    rows[static_cast<size_t>(i)] = unit_to_byte(t * 2.0f - 1.0f);
  }
  write_png(path, rows, w, h, 1);
}

void export_png_labels(const std::string& path, const Tensor& labels) {
  if (labels.rank() != 2) throw ConfigError("export_png_labels expects H x W, got " + labels.shape_str());
  static const uint8_t palette[16][3] = {
      {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
      {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
      {210, 245, 60}, {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
      {170, 110, 40}, {255, 250, 200}, {128, 0, 0},    {170, 255, 195}};
  int h = labels.dim(0), w = labels.dim(1);
  std::vector<uint8_t> rows(static_cast<size_t>(h) * w * 3);
  for (int64_t i = 0; i < labels.numel(); ++i) {
    int id = static_cast<int>(labels[i]);
    const uint8_t* rgb = palette[((id % 16) + 16) % 16];
    rows[static_cast<size_t>(i) * 3 + 0] = rgb[0];
    rows[static_cast<size_t>(i) * 3 + 1] = rgb[1];
    rows[static_cast<size_t>(i) * 3 + 2] = rgb[2];
  }
  write_png(path, rows, w, h, 3);
}

}  // namespace dsts
