#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace seedgrow {

/// 8-bit grayscale PNG, rows top to bottom.
std::string encode_png_gray(std::span<const std::uint8_t> pixels, int width, int height);

}  // namespace seedgrow
