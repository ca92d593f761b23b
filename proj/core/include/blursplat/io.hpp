// File formats: .npy float32 arrays (NumPy v1.0 layout) for training and
// metric data, 8-bit PNG for viewing. PNG stores clamped linear values,
// no gamma.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "blursplat/image.hpp"

namespace blursplat {

// NumPy .npy, version 1.0, little-endian float32, C order.
void write_npy(const std::filesystem::path& path,
               const std::vector<std::size_t>& shape,
               const float* data);

struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<float> data;
};
NpyArray read_npy(const std::filesystem::path& path);

void write_image_npy(const std::filesystem::path& path, const Image& img);
Image read_image_npy(const std::filesystem::path& path);

void write_depth_npy(const std::filesystem::path& path, const DepthMap& d);
DepthMap read_depth_npy(const std::filesystem::path& path);

// Masks ride the same container as 0/1 float32.
void write_mask_npy(const std::filesystem::path& path, const Mask& m);
Mask read_mask_npy(const std::filesystem::path& path);

// 8-bit RGB PNG via zlib. Deterministic output for identical input.
void write_png(const std::filesystem::path& path, const Image& img);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path,
                     const std::string& text);

}  // namespace blursplat
