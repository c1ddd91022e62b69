#pragma once

#include <filesystem>

#include "dbd/tensor.hpp"

namespace dbd::io {

// Portable Float Map, single channel ("Pf"), little-endian scale -1.0,
// rows stored bottom-up per the format convention. Values round-trip through
// float32 storage.
void write_pfm(const std::filesystem::path& path, const Tensor& map);
Tensor read_pfm(const std::filesystem::path& path);  // -> (1,1,H,W)

// 8-bit image files via OpenCV. Grayscale maps are expected in [0,1] and are
// scaled by 255 on write; loads return [0,1] tensors.
void write_gray8(const std::filesystem::path& path, const Tensor& map);
Tensor read_gray8(const std::filesystem::path& path);  // -> (1,1,H,W) in [0,1]

void write_rgb8(const std::filesystem::path& path, const Tensor& image);  // (1,3,H,W)
Tensor read_rgb8(const std::filesystem::path& path);  // -> (1,3,H,W) in [0,1]

// Binary mask from an 8-bit file: >= 128 maps to 1.
Tensor read_mask(const std::filesystem::path& path);  // -> (1,1,H,W) in {0,1}

}  // namespace dbd::io
