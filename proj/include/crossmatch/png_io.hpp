// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "crossmatch/array.hpp"

namespace crossmatch::pngio {

// Grayscale [0,1]; RGB inputs are averaged across channels.
Image read_image(const std::string& path);
// Integer class-id raster from an 8- or 16-bit single-channel file.
Mask read_mask(const std::string& path);

// 16-bit grayscale; values are clamped to [0,1] and quantized to 1/65535 steps.
void write_image16(const std::string& path, const Image& img);
// 8-bit class ids (0..255).
void write_mask8(const std::string& path, const Mask& mask);

}  // namespace crossmatch::pngio
