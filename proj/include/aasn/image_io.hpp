#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "aasn/tensor.hpp"

namespace aasn::io {

// 8-bit grayscale PNG <-> 1 x 1 x H x W tensor in [0, 1]. Values are clamped
// and rounded on write. Colour inputs are converted to gray on read.
[[nodiscard]] Tensor read_png_gray(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, const Tensor& image);

// Interleaved 8-bit RGB, row-major.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // 3 * width * height

    RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(3) * w * h, 0) {}
    void set(int x, int y, double r, double g, double b);
};
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

} // namespace aasn::io
