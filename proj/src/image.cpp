#include "ogm/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ogm {

FloatImage to_float(const GrayImage& img) {
  FloatImage out(img.height, img.width);
  std::transform(img.pixels.begin(), img.pixels.end(), out.pixels.begin(),
                 [](std::uint8_t v) { return static_cast<double>(v); });
  return out;
}

GrayImage to_gray(const FloatImage& img) {
  GrayImage out(img.height, img.width);
  std::transform(img.pixels.begin(), img.pixels.end(), out.pixels.begin(), [](double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  });
  return out;
}

double sample_bilinear(const FloatImage& img, double x, double y) {
  const double maxx = static_cast<double>(img.width - 1);
  const double maxy = static_cast<double>(img.height - 1);
  x = std::clamp(x, 0.0, maxx);
  y = std::clamp(y, 0.0, maxy);
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double top = img.at(y0, x0) * (1.0 - fx) + img.at(y0, x1) * fx;
  const double bottom = img.at(y1, x0) * (1.0 - fx) + img.at(y1, x1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

FloatImage gaussian_blur(const FloatImage& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (double& k : kernel) k /= total;

  const auto h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  FloatImage tmp(img.height, img.width), out(img.height, img.width);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += kernel[k + radius] * img.at(y, std::clamp(x + k, 0L, w - 1));
      tmp.at(y, x) = s;
    }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = -radius; k <= radius; ++k) s += kernel[k + radius] * tmp.at(std::clamp(y + k, 0L, h - 1), x);
      out.at(y, x) = s;
    }
  return out;
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string magic = next_token(in);
  if (magic != "P5" && magic != "P2") throw std::runtime_error(path.string() + ": not an 8-bit PGM (P2/P5)");
  const std::size_t w = std::stoul(next_token(in));
  const std::size_t h = std::stoul(next_token(in));
  const unsigned long maxval = std::stoul(next_token(in));
  if (maxval == 0 || maxval > 255) throw std::runtime_error(path.string() + ": only 8-bit PGM is supported");
  GrayImage img(h, w);
  if (magic == "P5") {
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) throw std::runtime_error(path.string() + ": truncated PGM");
  } else {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::stoul(next_token(in)));
  }
  if (maxval != 255)
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(p * 255 / maxval);
  return img;
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

}  // namespace ogm
