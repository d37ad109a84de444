#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "silk/geometry.hpp"

namespace silk {

// Decodes binary PGM (P5), binary PPM (P6) or 8-bit PNG (grey, grey+alpha,
// RGB, RGBA, palette). Colour is converted to luma 0.299R + 0.587G + 0.114B
// and scaled to [0,1]. Throws FormatError naming the path on failure.
ImageGray read_image(const std::filesystem::path& path);

bool is_supported_image(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const ImageGray& img);
void write_png_gray(const std::filesystem::path& path, const ImageGray& img);
// `rgb` holds height*width*3 bytes, row-major.
void write_png_rgb(const std::filesystem::path& path, int height, int width, std::span<const std::uint8_t> rgb);

float luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept;

}  // namespace silk
