#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "dsts/tensor.hpp"

namespace dsts {

// Maps a value in [-1,1] to a byte, round half up; inputs are clamped first.
// 0.0 lands on 128.
uint8_t unit_to_byte(float v);

// Writes a C x H x W tensor as an 8-bit RGB PNG, selecting three channels.
// Values are expected in [-1,1]; out-of-range values are clamped.
void export_png(const std::string& path, const Tensor& image, std::array<int, 3> bands = {0, 1, 2});

// Writes an H x W tensor as grayscale, mapping [lo,hi] to [0,255].
void export_png_gray(const std::string& path, const Tensor& image, float lo, float hi);

// Writes an H x W label map as an RGB PNG with a fixed 16-color palette
// (labels are taken mod 16).
void export_png_labels(const std::string& path, const Tensor& labels);

}  // namespace dsts
