#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsts/tensor.hpp"

namespace dsts {

// Single-tensor binary container.
//
// Layout, all little-endian:
//   "DSTS" | u16 version | u8 dtype (0 = float32) | u8 rank |
//   u32 extent[rank] | row-major payload | u32 CRC-32 of all prior bytes
inline constexpr uint16_t kTensorFormatVersion = 1;

// Serializes into `out` (appended); used by both the file writer and the
// checkpoint format.
void encode_tensor(std::string& out, const Tensor& t);
// Decodes one tensor starting at `pos`; advances `pos` past it. The CRC
// trailer is only present in standalone files, so this stops after payload.
Tensor decode_tensor(const std::string& buf, size_t& pos);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Whole-file helpers shared by the dataset/checkpoint writers.
std::string read_file(const std::string& path);   // DataError on failure
void write_file(const std::string& path, const std::string& bytes);
uint32_t crc32_of(const std::string& bytes);

}  // namespace dsts
