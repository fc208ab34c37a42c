#include "ogm/synthdata.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace ogm {

void HomographyPairSpec::validate() const {
  if (!(corner_perturbation >= 0.0)) throw std::invalid_argument("corner_perturbation must be >= 0");
  if (crop_height < 16 || crop_width < 16) throw std::invalid_argument("crop must be at least 16x16");
  if (brightness_jitter < 0.0 || contrast_jitter < 0.0 || contrast_jitter >= 1.0) {
    throw std::invalid_argument("photometric jitter ranges must be non-negative (contrast < 1)");
  }
}

void SurrogateExtractorConfig::validate() const {
  if (max_keypoints < 4) throw std::invalid_argument("max_keypoints must be >= 4");
  if (patch_size < 2) throw std::invalid_argument("patch_size must be >= 2");
  if (descriptor_dim == 0 || guidance_dim == 0) throw std::invalid_argument("feature dims must be positive");
  if (guidance_pool_cell < 2) throw std::invalid_argument("guidance_pool_cell must be >= 2");
}

TextureKind texture_kind_from_string(const std::string& s) {
  if (s == "checker") return TextureKind::kChecker;
  if (s == "noise" || s == "perlin") return TextureKind::kNoise;
  if (s == "blobs") return TextureKind::kBlobs;
  throw std::invalid_argument("unknown texture kind \"" + s + "\" (expected checker, noise or blobs)");
}

std::string to_string(TextureKind kind) {
  switch (kind) {
    case TextureKind::kChecker: return "checker";
    case TextureKind::kNoise: return "noise";
    case TextureKind::kBlobs: return "blobs";
  }
  return "?";
}

namespace {

using Corners = std::array<Eigen::Vector2d, 4>;

Corners crop_corners(std::size_t h, std::size_t w) {
  const double W = static_cast<double>(w), H = static_cast<double>(h);
  return {Eigen::Vector2d(0, 0), Eigen::Vector2d(W, 0), Eigen::Vector2d(W, H), Eigen::Vector2d(0, H)};
}

Eigen::Matrix3d homography_from_4(const Corners& src, const Corners& dst) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int k = 0; k < 4; ++k) {
    const double x = src[k].x(), y = src[k].y(), u = dst[k].x(), v = dst[k].y();
    a.row(2 * k) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * k + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * k) = u;
    b(2 * k + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> h = a.fullPivLu().solve(b);
  Eigen::Matrix3d out;
  out << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return out;
}

bool convex_quad(const Corners& q) {
  double sign = 0.0;
  for (int k = 0; k < 4; ++k) {
    const Eigen::Vector2d e1 = q[(k + 1) % 4] - q[k];
    const Eigen::Vector2d e2 = q[(k + 2) % 4] - q[(k + 1) % 4];
    const double cross = e1.x() * e2.y() - e1.y() * e2.x();
    if (std::abs(cross) < 1e-6) return false;
    if (sign == 0.0) sign = cross;
    if (cross * sign < 0.0) return false;
  }
  return true;
}

constexpr int kMaxSampleAttempts = 100;

}  // namespace

Eigen::Matrix3d sample_homography(const HomographyPairSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const Corners src = crop_corners(spec.crop_height, spec.crop_width);
  if (spec.corner_perturbation == 0.0) return Eigen::Matrix3d::Identity();
  std::uniform_real_distribution<double> u(-spec.corner_perturbation, spec.corner_perturbation);
  for (int attempt = 0; attempt < kMaxSampleAttempts; ++attempt) {
    Corners dst;
    for (int k = 0; k < 4; ++k) {
      const double dx = u(rng);
      const double dy = u(rng);
      dst[k] = src[k] + Eigen::Vector2d(dx, dy);
    }
    if (!convex_quad(dst)) continue;
    Eigen::Matrix3d h = homography_from_4(src, dst);
    if (!h.allFinite() || std::abs(h.determinant()) < 1e-9) continue;
    return h / h(2, 2);
  }
  throw DegenerateSample("no valid homography after 100 attempts");
}

Eigen::Matrix<double, 2, 3> sample_affine(const HomographyPairSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  Eigen::Matrix<double, 2, 3> out = Eigen::Matrix<double, 2, 3>::Identity();
  if (spec.corner_perturbation == 0.0) return out;
  const double rho = spec.corner_perturbation;
  const double w = static_cast<double>(spec.crop_width), h = static_cast<double>(spec.crop_height);
  std::uniform_real_distribution<double> u(-rho, rho);
  for (int attempt = 0; attempt < kMaxSampleAttempts; ++attempt) {
    Eigen::Vector2d d0(u(rng), u(rng)), d1(u(rng), u(rng)), d3(u(rng), u(rng));
    // The fourth corner moves by d1 + d3 - d0 under an affine map.
    const Eigen::Vector2d d2 = d1 + d3 - d0;
    if (d2.cwiseAbs().maxCoeff() > rho) continue;
    // Columns: image of x-axis step, y-axis step, origin.
    out.col(2) = d0;
    out.col(0) = Eigen::Vector2d(1, 0) + (d1 - d0) / w;
    out.col(1) = Eigen::Vector2d(0, 1) + (d3 - d0) / h;
    if (std::abs(out.leftCols<2>().determinant()) < 0.1) continue;
    return out;
  }
  throw DegenerateSample("no valid affine transform after 100 attempts");
}

double max_corner_displacement(const Eigen::Matrix3d& h, std::size_t crop_height, std::size_t crop_width) {
  double worst = 0.0;
  for (const auto& c : crop_corners(crop_height, crop_width)) {
    const Eigen::Vector2d mapped = (h * c.homogeneous()).hnormalized();
    worst = std::max(worst, (mapped - c).cwiseAbs().maxCoeff());
  }
  return worst;
}

namespace {

GrayImage checker_texture(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> cell_d(16, 32), lo_d(20, 90), hi_d(160, 235);
  const int cell = cell_d(rng);
  const auto lo = static_cast<std::uint8_t>(lo_d(rng));
  const auto hi = static_cast<std::uint8_t>(hi_d(rng));
  std::uniform_int_distribution<int> phase_d(0, cell - 1);
  const int px = phase_d(rng), py = phase_d(rng);
  GrayImage img(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const int cx = (static_cast<int>(x) + px) / cell, cy = (static_cast<int>(y) + py) / cell;
      img.at(y, x) = ((cx + cy) % 2 == 0) ? lo : hi;
    }
  return img;
}

GrayImage noise_texture(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FloatImage acc(h, w, 0.0);
  double amplitude = 1.0;
  std::size_t cell = 48;
  for (int octave = 0; octave < 5 && cell >= 2; ++octave, amplitude *= 0.55, cell /= 2) {
    const std::size_t gh = h / cell + 2, gw = w / cell + 2;
    std::vector<double> lattice(gh * gw);
    for (double& v : lattice) v = u(rng);
    for (std::size_t y = 0; y < h; ++y) {
      const double fy = static_cast<double>(y) / static_cast<double>(cell);
      const auto iy = static_cast<std::size_t>(fy);
      double ty = fy - static_cast<double>(iy);
      ty = ty * ty * (3.0 - 2.0 * ty);
      for (std::size_t x = 0; x < w; ++x) {
        const double fx = static_cast<double>(x) / static_cast<double>(cell);
        const auto ix = static_cast<std::size_t>(fx);
        double tx = fx - static_cast<double>(ix);
        tx = tx * tx * (3.0 - 2.0 * tx);
        const double v00 = lattice[iy * gw + ix], v01 = lattice[iy * gw + ix + 1];
        const double v10 = lattice[(iy + 1) * gw + ix], v11 = lattice[(iy + 1) * gw + ix + 1];
        acc.at(y, x) += amplitude * ((v00 * (1 - tx) + v01 * tx) * (1 - ty) + (v10 * (1 - tx) + v11 * tx) * ty);
      }
    }
  }
  const auto [mn, mx] = std::minmax_element(acc.pixels.begin(), acc.pixels.end());
  const double lo = *mn, span = std::max(*mx - *mn, 1e-9);
  for (double& v : acc.pixels) v = 255.0 * (v - lo) / span;
  return to_gray(acc);
}

GrayImage blob_texture(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FloatImage img(h, w, 60.0 + 130.0 * u(rng));
  const std::size_t shapes = std::max<std::size_t>(8, h * w / 900);
  const double H = static_cast<double>(h), W = static_cast<double>(w);
  for (std::size_t s = 0; s < shapes; ++s) {
    const double cx = u(rng) * W, cy = u(rng) * H;
    const double rx = 4.0 + 22.0 * u(rng), ry = 4.0 + 22.0 * u(rng);
    const double angle = u(rng) * M_PI;
    const double value = 255.0 * u(rng);
    const bool ellipse = u(rng) < 0.5;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double reach = std::max(rx, ry) * 1.5;
    const auto y0 = static_cast<long>(std::max(0.0, cy - reach)), y1 = static_cast<long>(std::min(H - 1, cy + reach));
    const auto x0 = static_cast<long>(std::max(0.0, cx - reach)), x1 = static_cast<long>(std::min(W - 1, cx + reach));
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        const double lx = (ca * dx + sa * dy) / rx, ly = (-sa * dx + ca * dy) / ry;
        const bool inside = ellipse ? (lx * lx + ly * ly <= 1.0) : (std::abs(lx) <= 1.0 && std::abs(ly) <= 1.0);
        if (inside) img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = value;
      }
  }
  return to_gray(gaussian_blur(img, 0.6));
}

}  // namespace

GrayImage procedural_texture(TextureKind kind, std::size_t height, std::size_t width, std::mt19937_64& rng) {
  if (height < 64 || width < 64) throw std::invalid_argument("procedural textures must be at least 64x64");
  switch (kind) {
    case TextureKind::kChecker: return checker_texture(height, width, rng);
    case TextureKind::kNoise: return noise_texture(height, width, rng);
    case TextureKind::kBlobs: return blob_texture(height, width, rng);
  }
  throw std::invalid_argument("unknown texture kind");
}

std::vector<Keypoint> detect_harris(const GrayImage& image, const SurrogateExtractorConfig& cfg) {
  const std::size_t h = image.height, w = image.width;
  if (h < 8 || w < 8) return {};
  const FloatImage f = gaussian_blur(to_float(image), 1.0);
  FloatImage ixx(h, w), iyy(h, w), ixy(h, w);
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double gx = (f.at(y - 1, x + 1) + 2 * f.at(y, x + 1) + f.at(y + 1, x + 1) - f.at(y - 1, x - 1) -
                         2 * f.at(y, x - 1) - f.at(y + 1, x - 1)) / 8.0;
      const double gy = (f.at(y + 1, x - 1) + 2 * f.at(y + 1, x) + f.at(y + 1, x + 1) - f.at(y - 1, x - 1) -
                         2 * f.at(y - 1, x) - f.at(y - 1, x + 1)) / 8.0;
      ixx.at(y, x) = gx * gx;
      iyy.at(y, x) = gy * gy;
      ixy.at(y, x) = gx * gy;
    }
  ixx = gaussian_blur(ixx, 1.5);
  iyy = gaussian_blur(iyy, 1.5);
  ixy = gaussian_blur(ixy, 1.5);
  FloatImage response(h, w);
  double strongest = 0.0;
  for (std::size_t i = 0; i < h * w; ++i) {
    const double a = ixx.pixels[i], b = iyy.pixels[i], c = ixy.pixels[i];
    response.pixels[i] = a * b - c * c - 0.04 * (a + b) * (a + b);
    strongest = std::max(strongest, response.pixels[i]);
  }
  if (strongest < 1e-6) return {};
  const double threshold = cfg.corner_threshold * strongest;
  const long r = static_cast<long>(cfg.nms_radius);
  const std::size_t border = std::max<std::size_t>(cfg.border, 1);
  std::vector<Keypoint> out;
  for (std::size_t y = border; y + border < h; ++y)
    for (std::size_t x = border; x + border < w; ++x) {
      const double v = response.at(y, x);
      if (v <= threshold) continue;
      bool is_max = true;
      for (long dy = -r; dy <= r && is_max; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          if (!dy && !dx) continue;
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
          const double n = response.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
          // Plateaus keep their first pixel in scan order.
          const bool earlier = dy < 0 || (dy == 0 && dx < 0);
          if (n > v || (earlier && n == v)) {
            is_max = false;
            break;
          }
        }
      if (!is_max) continue;
      // Parabolic sub-pixel refinement.
      auto offset = [](double m, double c, double p) {
        const double denom = m - 2.0 * c + p;
        return std::abs(denom) < 1e-12 ? 0.0 : std::clamp(0.5 * (m - p) / denom, -0.5, 0.5);
      };
      const double ox = offset(response.at(y, x - 1), v, response.at(y, x + 1));
      const double oy = offset(response.at(y - 1, x), v, response.at(y + 1, x));
      out.push_back({static_cast<double>(x) + ox, static_cast<double>(y) + oy, v});
    }
  std::stable_sort(out.begin(), out.end(), [](const Keypoint& a, const Keypoint& b) { return a.response > b.response; });
  if (out.size() > cfg.max_keypoints) out.resize(cfg.max_keypoints);
  return out;
}

namespace {

std::vector<double> gaussian_projection(std::size_t in, std::size_t out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(out)));
  std::vector<double> m(in * out);
  for (double& v : m) v = n(rng);
  return m;
}

constexpr std::size_t kCellStats = 4;
constexpr std::size_t kGuidanceStats = kCellStats * 9;

void l2_normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n < 1e-12) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (double& x : v) x /= n;
}

}  // namespace

SurrogateExtractor::SurrogateExtractor(SurrogateExtractorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  descriptor_projection_ = gaussian_projection(cfg_.patch_size * cfg_.patch_size, cfg_.descriptor_dim, cfg_.projection_seed);
  guidance_projection_ = gaussian_projection(kGuidanceStats, cfg_.guidance_dim, cfg_.projection_seed + 1);
}

FeatureSet SurrogateExtractor::extract(const GrayImage& image, const std::string& image_id) const {
  const auto keypoints = detect_harris(image, cfg_);
  const FloatImage smooth = gaussian_blur(to_float(image), 0.5 * cfg_.patch_spacing);
  const std::size_t n = keypoints.size(), c = cfg_.descriptor_dim, cg = cfg_.guidance_dim;

  FeatureSet fs;
  fs.image_id = image_id;
  fs.height = static_cast<std::uint32_t>(image.height);
  fs.width = static_cast<std::uint32_t>(image.width);
  fs.descriptor_dim = c;
  fs.guidance_dim = cg;
  fs.locations.resize(2 * n);
  fs.scores.resize(n);
  fs.descriptors.resize(n * c);
  fs.guidance.resize(n * cg);
  const double strongest = n ? keypoints.front().response : 1.0;

  // Coarse per-cell statistics: mean, std, mean |gx|, mean |gy| (scaled to ~[0,1]).
  const std::size_t cell = cfg_.guidance_pool_cell;
  const std::size_t gh = (image.height + cell - 1) / cell, gw = (image.width + cell - 1) / cell;
  std::vector<double> stats(gh * gw * kCellStats, 0.0);
  for (std::size_t cy = 0; cy < gh; ++cy)
    for (std::size_t cx = 0; cx < gw; ++cx) {
      double s = 0, s2 = 0, ax = 0, ay = 0;
      std::size_t count = 0;
      for (std::size_t y = cy * cell; y < std::min(image.height, (cy + 1) * cell); ++y)
        for (std::size_t x = cx * cell; x < std::min(image.width, (cx + 1) * cell); ++x) {
          const double v = smooth.at(y, x) / 255.0;
          s += v;
          s2 += v * v;
          if (x + 1 < image.width) ax += std::abs(smooth.at(y, x + 1) - smooth.at(y, x)) / 255.0;
          if (y + 1 < image.height) ay += std::abs(smooth.at(y + 1, x) - smooth.at(y, x)) / 255.0;
          ++count;
        }
      const double mean = s / count;
      double* out = &stats[(cy * gw + cx) * kCellStats];
      out[0] = mean;
      out[1] = std::sqrt(std::max(0.0, s2 / count - mean * mean));
      out[2] = 4.0 * ax / count;
      out[3] = 4.0 * ay / count;
    }
  // 3×3 neighbourhood context per cell.
  std::vector<double> context(gh * gw * kGuidanceStats);
  for (std::size_t cy = 0; cy < gh; ++cy)
    for (std::size_t cx = 0; cx < gw; ++cx) {
      double* out = &context[(cy * gw + cx) * kGuidanceStats];
      std::size_t k = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(cy) + dy, 0, static_cast<long>(gh) - 1));
          const auto xx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(cx) + dx, 0, static_cast<long>(gw) - 1));
          for (std::size_t s = 0; s < kCellStats; ++s) out[k++] = stats[(yy * gw + xx) * kCellStats + s];
        }
    }

  const std::size_t p = cfg_.patch_size;
  std::vector<double> patch(p * p), desc(c), ctx(kGuidanceStats);
  for (std::size_t i = 0; i < n; ++i) {
    const Keypoint& kp = keypoints[i];
    fs.locations[2 * i] = static_cast<float>(kp.x);
    fs.locations[2 * i + 1] = static_cast<float>(kp.y);
    fs.scores[i] = static_cast<float>(std::clamp(kp.response / strongest, 0.0, 1.0));

    const double half = 0.5 * static_cast<double>(p - 1);
    double mean = 0.0;
    for (std::size_t py = 0; py < p; ++py)
      for (std::size_t px = 0; px < p; ++px) {
        const double v = sample_bilinear(smooth, kp.x + (static_cast<double>(px) - half) * cfg_.patch_spacing,
                                         kp.y + (static_cast<double>(py) - half) * cfg_.patch_spacing);
        patch[py * p + px] = v;
        mean += v;
      }
    mean /= static_cast<double>(p * p);
    for (double& v : patch) v -= mean;
    l2_normalize(patch);
    std::fill(desc.begin(), desc.end(), 0.0);
    for (std::size_t k = 0; k < p * p; ++k)
      for (std::size_t j = 0; j < c; ++j) desc[j] += patch[k] * descriptor_projection_[k * c + j];
    l2_normalize(desc);
    for (std::size_t j = 0; j < c; ++j) fs.descriptors[i * c + j] = static_cast<float>(desc[j]);

    // Bilinear over cell centres.
    const double u = std::clamp(kp.x / static_cast<double>(cell) - 0.5, 0.0, static_cast<double>(gw - 1));
    const double v = std::clamp(kp.y / static_cast<double>(cell) - 0.5, 0.0, static_cast<double>(gh - 1));
    const auto x0 = static_cast<std::size_t>(u), y0 = static_cast<std::size_t>(v);
    const std::size_t x1 = std::min(x0 + 1, gw - 1), y1 = std::min(y0 + 1, gh - 1);
    const double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
    for (std::size_t k = 0; k < kGuidanceStats; ++k) {
      ctx[k] = (1 - fy) * ((1 - fx) * context[(y0 * gw + x0) * kGuidanceStats + k] + fx * context[(y0 * gw + x1) * kGuidanceStats + k]) +
               fy * ((1 - fx) * context[(y1 * gw + x0) * kGuidanceStats + k] + fx * context[(y1 * gw + x1) * kGuidanceStats + k]);
    }
    for (std::size_t j = 0; j < cg; ++j) {
      double g = 0.0;
      for (std::size_t k = 0; k < kGuidanceStats; ++k) g += ctx[k] * guidance_projection_[k * cg + j];
      fs.guidance[i * cg + j] = static_cast<float>(g);
    }
  }
  return fs;
}

SyntheticPair make_pair(const GrayImage& image, const HomographyPairSpec& spec, const SurrogateExtractor& extractor,
                        std::mt19937_64& rng, WarpKind warp) {
  spec.validate();
  const std::size_t ch = spec.crop_height, cw = spec.crop_width;
  const double rho = spec.corner_perturbation;
  if (static_cast<double>(image.height) < static_cast<double>(ch) + 2.0 * rho ||
      static_cast<double>(image.width) < static_cast<double>(cw) + 2.0 * rho) {
    throw std::invalid_argument("source image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                                " is too small for the crop plus perturbation margin");
  }
  const std::size_t oy = (image.height - ch) / 2, ox = (image.width - cw) / 2;

  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  GroundTruth gt;
  if (warp == WarpKind::kHomography) {
    h = sample_homography(spec, rng);
    gt = HomographyGT{h};
  } else {
    const auto a = sample_affine(spec, rng);
    h.topRows<2>() = a;
    gt = AffineGT{a};
  }
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double brightness = spec.brightness_jitter * u(rng);
  const double contrast = 1.0 + spec.contrast_jitter * u(rng);

  SyntheticPair out;
  out.image_a = GrayImage(ch, cw);
  for (std::size_t y = 0; y < ch; ++y)
    for (std::size_t x = 0; x < cw; ++x) out.image_a.at(y, x) = image.at(y + oy, x + ox);

  const FloatImage source = to_float(image);
  const Eigen::Matrix3d h_inv = h.inverse();
  FloatImage view_b(ch, cw);
  for (std::size_t y = 0; y < ch; ++y)
    for (std::size_t x = 0; x < cw; ++x) {
      const Eigen::Vector3d p = h_inv * Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y), 1.0);
      const double v = sample_bilinear(source, p.x() / p.z() + static_cast<double>(ox), p.y() / p.z() + static_cast<double>(oy));
      view_b.at(y, x) = contrast * (v - 128.0) + 128.0 + brightness;
    }
  out.image_b = to_gray(view_b);

  out.record.set_a = extractor.extract(out.image_a, "a");
  out.record.set_b = extractor.extract(out.image_b, "b");
  if (out.record.set_a.size() < 8 || out.record.set_b.size() < 8) {
    throw PairRejected("insufficient keypoints: view A has " + std::to_string(out.record.set_a.size()) +
                       ", view B has " + std::to_string(out.record.set_b.size()) + " (need 8)");
  }
  out.record.gt_transform = gt;
  const auto err = transfer_error_matrix(gt, out.record.set_a, out.record.set_b);
  out.record.gt_matches = mutual_nearest_within(err, out.record.set_a.size(), out.record.set_b.size(), kCorrectPx);
  out.corner_displacement = max_corner_displacement(h, ch, cw);
  return out;
}

PairRecord make_pose_pair(const PoseSceneConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double W = static_cast<double>(cfg.width), H = static_cast<double>(cfg.height);
  Eigen::Matrix3d K;
  K << cfg.focal, 0, W / 2, 0, cfg.focal, H / 2, 0, 0, 1;

  const Eigen::Vector3d axis = Eigen::Vector3d(n01(rng), n01(rng), n01(rng)).normalized();
  const double angle = (5.0 + (cfg.max_rotation_deg - 5.0) * u(rng)) * M_PI / 180.0;
  const Eigen::Matrix3d R = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  const Eigen::Vector3d centre_b = Eigen::Vector3d(n01(rng), 0.3 * n01(rng), 0.3 * n01(rng)).normalized();
  const Eigen::Vector3d t = -R * centre_b;

  std::vector<Eigen::Vector2d> xa, xb;
  std::vector<Eigen::Vector3d> points;
  for (int attempt = 0; attempt < 50000 && points.size() < cfg.num_points; ++attempt) {
    const Eigen::Vector3d X(8.0 * u(rng) - 4.0, 6.0 * u(rng) - 3.0, 4.0 + 8.0 * u(rng));
    const Eigen::Vector3d Xb = R * X + t;
    if (Xb.z() < 0.5) continue;
    const Eigen::Vector2d pa = (K * X).hnormalized(), pb = (K * Xb).hnormalized();
    if (pa.x() < 0 || pa.y() < 0 || pa.x() >= W || pa.y() >= H) continue;
    if (pb.x() < 0 || pb.y() < 0 || pb.x() >= W || pb.y() >= H) continue;
    points.push_back(X);
    xa.push_back(pa);
    xb.push_back(pb);
  }

  const std::size_t c = cfg.descriptor_dim, cg = cfg.guidance_dim;
  std::vector<double> guidance_proj(3 * cg);
  for (double& v : guidance_proj) v = n01(rng);
  auto unit = [&](std::vector<double> v) {
    l2_normalize(v);
    return v;
  };
  auto noisy = [&](const std::vector<double>& base) {
    std::vector<double> v(base);
    for (double& x : v) x += cfg.descriptor_noise * n01(rng) / std::sqrt(static_cast<double>(c));
    return unit(v);
  };
  auto guidance_of = [&](const Eigen::Vector3d& X) {
    const Eigen::Vector3d s(X.x() / 4.0, X.y() / 3.0, (X.z() - 8.0) / 4.0);
    std::vector<double> g(cg);
    for (std::size_t j = 0; j < cg; ++j)
      g[j] = s.x() * guidance_proj[j] + s.y() * guidance_proj[cg + j] + s.z() * guidance_proj[2 * cg + j] + 0.05 * n01(rng);
    return g;
  };

  struct Entry {
    Eigen::Vector2d xy;
    std::vector<double> d, g;
    long point;
  };
  std::vector<Entry> view_a, view_b;
  for (std::size_t k = 0; k < points.size(); ++k) {
    std::vector<double> base(c);
    for (double& x : base) x = n01(rng);
    base = unit(base);
    view_a.push_back({xa[k], noisy(base), guidance_of(points[k]), static_cast<long>(k)});
    view_b.push_back({xb[k], noisy(base), guidance_of(points[k]), static_cast<long>(k)});
  }
  for (auto* view : {&view_a, &view_b})
    for (std::size_t k = 0; k < cfg.outliers_per_view; ++k) {
      std::vector<double> d(c), g(cg);
      for (double& x : d) x = n01(rng);
      for (double& x : g) x = n01(rng);
      view->push_back({Eigen::Vector2d(u(rng) * (W - 1), u(rng) * (H - 1)), unit(d), g, -1});
    }
  std::shuffle(view_b.begin(), view_b.end(), rng);

  auto to_features = [&](const std::vector<Entry>& view, const std::string& id) {
    FeatureSet fs;
    fs.image_id = id;
    fs.height = static_cast<std::uint32_t>(cfg.height);
    fs.width = static_cast<std::uint32_t>(cfg.width);
    fs.descriptor_dim = c;
    fs.guidance_dim = cg;
    for (const Entry& e : view) {
      fs.locations.push_back(static_cast<float>(e.xy.x()));
      fs.locations.push_back(static_cast<float>(e.xy.y()));
      fs.scores.push_back(1.0f);
      for (double v : e.d) fs.descriptors.push_back(static_cast<float>(v));
      for (double v : e.g) fs.guidance.push_back(static_cast<float>(v));
    }
    return fs;
  };

  PairRecord rec;
  rec.set_a = to_features(view_a, "a");
  rec.set_b = to_features(view_b, "b");
  RelativePoseGT gt;
  gt.R = R;
  gt.t = t.normalized();
  gt.K_a = K;
  gt.K_b = K;
  rec.gt_transform = gt;
  std::vector<long> where_b(points.size(), -1);
  for (std::size_t j = 0; j < view_b.size(); ++j)
    if (view_b[j].point >= 0) where_b[static_cast<std::size_t>(view_b[j].point)] = static_cast<long>(j);
  rec.gt_matches.emplace();
  for (std::size_t i = 0; i < view_a.size(); ++i)
    if (view_a[i].point >= 0) rec.gt_matches->emplace_back(i, static_cast<std::size_t>(where_b[static_cast<std::size_t>(view_a[i].point)]));
  return rec;
}

}  // namespace ogm
