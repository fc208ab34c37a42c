#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace ogm {

// 8-bit grayscale image, row-major.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), pixels(h * w, fill) {}
  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

// Floating-point working image.
struct FloatImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  FloatImage() = default;
  FloatImage(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}
  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
};

FloatImage to_float(const GrayImage& img);
GrayImage to_gray(const FloatImage& img);

// Bilinear sample with border clamping; (x, y) in pixel-centre coordinates.
double sample_bilinear(const FloatImage& img, double x, double y);
FloatImage gaussian_blur(const FloatImage& img, double sigma);

// Binary (P5) or ASCII (P2) 8-bit PGM.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const GrayImage& img, const std::filesystem::path& path);

}  // namespace ogm
