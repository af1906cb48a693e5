#ifndef GAZESEG_IMAGE_IO_HPP
#define GAZESEG_IMAGE_IO_HPP

#include "gazeseg/core.hpp"

#include <filesystem>

namespace gazeseg {

/// 8-bit grayscale PNG. Color inputs are reduced by Rec. 601 luminance.
Image read_gray_png(const std::filesystem::path& path);
void write_gray_png(const std::filesystem::path& path, const Grid<std::uint8_t>& pixels);

/// Binary masks are stored as 0 / 255.
Mask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

/// Rounds and clamps a 0-255 image to bytes.
Grid<std::uint8_t> to_bytes(const Image& image);

}  // namespace gazeseg

#endif
