#include "silk/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "silk/error.hpp"

namespace silk {

float luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept {
  return static_cast<float>((0.299 * r + 0.587 * g + 0.114 * b) / 255.0);
}

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Netpbm header: magic, width, height, maxval separated by whitespace and
// '#' comments, followed by exactly one whitespace byte.
struct PnmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  PnmHeader h;
  std::size_t pos = 2;
  int values[3] = {0, 0, 0};
  for (int& v : values) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError("malformed PNM header in " + path.string());
    long acc = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      acc = acc * 10 + (bytes[pos] - '0');
      if (acc > 1 << 20) throw FormatError("PNM header value too large in " + path.string());
      ++pos;
    }
    v = static_cast<int>(acc);
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("malformed PNM header in " + path.string());
  h.width = values[0];
  h.height = values[1];
  h.maxval = values[2];
  h.data_offset = pos + 1;
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
    throw FormatError("invalid PNM dimensions in " + path.string());
  }
  return h;
}

ImageGray decode_pnm(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path, int channels) {
  const PnmHeader h = parse_pnm(bytes, path);
  const std::size_t bps = h.maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() < h.data_offset + n * channels * bps) throw FormatError("truncated PNM data in " + path.string());
  auto sample = [&](std::size_t i) -> double {
    const std::uint8_t* p = bytes.data() + h.data_offset + i * bps;
    const int v = bps == 2 ? (p[0] << 8) | p[1] : p[0];
    return static_cast<double>(v) / h.maxval;
  };
  ImageGray img(h.height, h.width);
  for (std::size_t i = 0; i < n; ++i) {
    double v;
    if (channels == 1) {
      v = sample(i);
    } else {
      v = 0.299 * sample(3 * i) + 0.587 * sample(3 * i + 1) + 0.114 * sample(3 * i + 2);
    }
    img.pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return img;
}

ImageGray decode_png(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError("cannot decode PNG " + path.string() + ": " + msg);
  }
  ImageGray img(static_cast<int>(image.height), static_cast<int>(image.width));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = luma(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]);
  return img;
}

void write_png(const std::filesystem::path& path, int height, int width, std::span<const std::uint8_t> data,
               png_uint_32 format) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (data.size() != PNG_IMAGE_SIZE(image)) throw ShapeError("PNG buffer size does not match image extents");
  if (!png_image_write_to_file(&image, path.c_str(), 0, data.data(), 0, nullptr)) {
    throw FormatError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

ImageGray read_image(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pnm(bytes, path, 1);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_pnm(bytes, path, 3);
  throw FormatError("unsupported or undecodable image " + path.string());
}

bool is_supported_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".pgm" || ext == ".ppm" || ext == ".png";
}

void write_pgm(const std::filesystem::path& path, const ImageGray& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (float v : img.pixels) out.put(static_cast<char>(to_byte(v)));
}

void write_png_gray(const std::filesystem::path& path, const ImageGray& img) {
  std::vector<std::uint8_t> bytes(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), bytes.begin(), to_byte);
  write_png(path, img.height, img.width, bytes, PNG_FORMAT_GRAY);
}

void write_png_rgb(const std::filesystem::path& path, int height, int width, std::span<const std::uint8_t> rgb) {
  write_png(path, height, width, rgb, PNG_FORMAT_RGB);
}

}  // namespace silk
