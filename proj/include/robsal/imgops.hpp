#pragma once

#include "robsal/tensor.hpp"

// Geometry and color primitives on C x H x W images in [0,1]. These back the
// augmentation pipeline; they are pure functions so transforms stay
// reproducible under per-item derived rng streams.
namespace robsal::img {

Tensor center_crop(const Tensor& image, int side);

// Bilinear resize, half-pixel-center convention. Identity when sizes match.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

Tensor flip_horizontal(const Tensor& image);
Tensor flip_vertical(const Tensor& image);

// Rotation (degrees, counterclockwise) composed with a horizontal shear,
// sampled around the image center with bilinear interpolation and
// clamp-to-edge boundary handling.
Tensor affine(const Tensor& image, double rotate_deg, double shear_deg);

double luma_mean(const Tensor& image);

void adjust_brightness(Tensor& image, double factor);
void adjust_contrast(Tensor& image, double factor);    // blends toward the luma mean
void adjust_saturation(Tensor& image, double factor);  // blends toward per-pixel luma

void clamp01(Tensor& image);

}  // namespace robsal::img
