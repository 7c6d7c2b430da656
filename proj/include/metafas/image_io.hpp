#pragma once

#include <string>

#include "metafas/tensor.hpp"

namespace metafas {

// 8-bit binary PPM (P6) for RGB images and PGM (P5) for grayscale depth
// maps. Values are mapped linearly between [0,1] doubles and [0,255] bytes.

/// Read a P6 file into an (H, W, 3) tensor with values in [0,1].
Tensor read_ppm(const std::string& path);

/// Write an (H, W, 3) tensor with values in [0,1] (clamped) as P6.
void write_ppm(const std::string& path, const Tensor& image);

/// Read a P5 file into an (H, W, 1) tensor with values in [0,1].
Tensor read_pgm(const std::string& path);

/// Write an (H, W, 1) tensor with values in [0,1] (clamped) as P5.
void write_pgm(const std::string& path, const Tensor& image);

/// Bilinear resize of an (H, W, C) tensor to (side, side, C).
Tensor resize_bilinear(const Tensor& image, int side);

}  // namespace metafas
