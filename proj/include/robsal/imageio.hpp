#pragma once

#include <optional>
#include <string>

#include "robsal/tensor.hpp"

// Raster file I/O (the only OpenCV touchpoint in the library). Images are
// exchanged as C x H x W doubles in [0,1], RGB channel order.
namespace robsal::img {

// Returns nullopt for unreadable/corrupt files.
std::optional<Tensor> load_image(const std::string& path);

// 8-bit quantization with round-half-up; grayscale for H x W input.
void save_image_gray(const std::string& path, const Tensor& map);
void save_image_rgb(const std::string& path, const Tensor& image);

}  // namespace robsal::img
