#pragma once

#include <string>

#include "dcmil/core.hpp"

namespace dcmil {

// 8-bit grayscale PNG. RGB/RGBA inputs are converted to luminance on read.
void write_png_gray(const std::string& path, const Image& img);
Image read_png_gray(const std::string& path);

}  // namespace dcmil
