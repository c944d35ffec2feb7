#include "dsts/container.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <limits>

#include "dsts/common.hpp"

static_assert(std::endian::native == std::endian::little, "container IO assumes little-endian");

namespace dsts {

namespace {

constexpr char kMagic[4] = {'D', 'S', 'T', 'S'};

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw DataError("tensor container truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

uint32_t crc32_of(const std::string& bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<uint32_t>(c);
}

void encode_tensor(std::string& out, const Tensor& t) {
  if (t.empty()) throw ConfigError("cannot encode empty tensor");
  out.append(kMagic, 4);
  put<uint16_t>(out, kTensorFormatVersion);
  put<uint8_t>(out, 0);  // dtype float32
  put<uint8_t>(out, static_cast<uint8_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put<uint32_t>(out, static_cast<uint32_t>(t.dim(i)));
  out.append(reinterpret_cast<const char*>(t.data()), sizeof(float) * static_cast<size_t>(t.numel()));
}

Tensor decode_tensor(const std::string& buf, size_t& pos) {
  if (pos + 4 > buf.size() || std::memcmp(buf.data() + pos, kMagic, 4) != 0)
    throw DataError("bad tensor container magic");
  pos += 4;
  uint16_t version = take<uint16_t>(buf, pos);
  if (version != kTensorFormatVersion)
    throw VersionError("tensor container version " + std::to_string(version) + ", expected " +
                       std::to_string(kTensorFormatVersion));
  uint8_t dtype = take<uint8_t>(buf, pos);
  if (dtype != 0) throw DataError("unsupported tensor dtype " + std::to_string(dtype));
  uint8_t rank = take<uint8_t>(buf, pos);
  if (rank == 0 || rank > 8) throw DataError("tensor container rank out of range");
  std::vector<int> shape(rank);
  int64_t n = 1;
  for (auto& e : shape) {
    uint32_t ext = take<uint32_t>(buf, pos);
    if (ext == 0 || ext > static_cast<uint32_t>(std::numeric_limits<int>::max()))
      throw DataError("tensor container extent out of range");
    e = static_cast<int>(ext);
    if (n > std::numeric_limits<int64_t>::max() / e) throw DataError("tensor container extent overflow");
    n *= e;
  }
  if (pos + sizeof(float) * static_cast<size_t>(n) > buf.size())
    throw DataError("tensor container payload truncated");
  std::vector<float> data(static_cast<size_t>(n));
  std::memcpy(data.data(), buf.data() + pos, sizeof(float) * data.size());
  pos += sizeof(float) * data.size();
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::string bytes;
  encode_tensor(bytes, t);
  uint32_t crc = crc32_of(bytes);
  put<uint32_t>(bytes, crc);
  write_file(path, bytes);
}

Tensor load_tensor(const std::string& path) {
  std::string bytes = read_file(path);
  if (bytes.size() < 4) throw DataError("tensor file too short: " + path);
  std::string body = bytes.substr(0, bytes.size() - 4);
  size_t pos = bytes.size() - 4;
  uint32_t stored = take<uint32_t>(bytes, pos);
  if (crc32_of(body) != stored) throw DataError("tensor file CRC mismatch: " + path);
  size_t body_pos = 0;
  Tensor t = decode_tensor(body, body_pos);
  if (body_pos != body.size()) throw DataError("tensor file has trailing bytes: " + path);
  return t;
}

std::string read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open " + path);
  std::string bytes;
  char buf[1 << 16];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof(buf), f)) > 0) bytes.append(buf, got);
  bool err = std::ferror(f) != 0;
  std::fclose(f);
  if (err) throw DataError("read error on " + path);
  return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("cannot create " + path);
  size_t put_ = std::fwrite(bytes.data(), 1, bytes.size(), f);
  bool err = put_ != bytes.size() || std::fclose(f) != 0;
  if (err) throw DataError("write error on " + path);
}

}  // namespace dsts
