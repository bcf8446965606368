#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace mmsm {

/// Grayscale raster, row-major, values in [0, 1].
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), pixels(w * h, fill) {}

  float& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  float at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

/// Binary PGM (P5), maxval 255. Pixels are quantized to 8 bits on write.
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
std::vector<std::uint8_t> serialize_pgm(const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);
GrayImage parse_pgm(std::span<const std::uint8_t> bytes);

/// Pixel values after a write/read cycle.
GrayImage quantize_8bit(const GrayImage& img);

}  // namespace mmsm
