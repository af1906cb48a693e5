#include "gazeseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

namespace gazeseg {

namespace {

struct PngImage {
    png_image info{};
    PngImage() { info.version = PNG_IMAGE_VERSION; }
    ~PngImage() { png_image_free(&info); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

}  // namespace

Image read_gray_png(const std::filesystem::path& path) {
    PngImage png;
    if (!png_image_begin_read_from_file(&png.info, path.c_str()))
        throw std::runtime_error("cannot read PNG " + path.string() + ": " + png.info.message);
    // libpng's gray conversion applies the sRGB luminance weights.
    png.info.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(png.info));
    if (!png_image_finish_read(&png.info, nullptr, buffer.data(), 0, nullptr))
        throw std::runtime_error("cannot decode PNG " + path.string() + ": " + png.info.message);
    const int h = int(png.info.height), w = int(png.info.width);
    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(y, x) = buffer[std::size_t(y) * w + x];
    return out;
}

void write_gray_png(const std::filesystem::path& path, const Grid<std::uint8_t>& pixels) {
    PngImage png;
    png.info.width = png_uint_32(pixels.cols());
    png.info.height = png_uint_32(pixels.rows());
    png.info.format = PNG_FORMAT_GRAY;
    // Grid is row-major, so its buffer is already in scanline order.
    if (!png_image_write_to_file(&png.info, path.c_str(), 0, pixels.data(), 0, nullptr))
        throw std::runtime_error("cannot write PNG " + path.string() + ": " + png.info.message);
}

Mask read_mask_png(const std::filesystem::path& path) {
    const Image img = read_gray_png(path);
    return (img >= 128).cast<std::uint8_t>();
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
    write_gray_png(path, ((mask != 0).cast<std::uint8_t>() * std::uint8_t(255)).eval());
}

Grid<std::uint8_t> to_bytes(const Image& image) {
    return image.unaryExpr([](double v) { return std::uint8_t(std::lround(std::clamp(v, 0.0, 255.0))); });
}

}  // namespace gazeseg
