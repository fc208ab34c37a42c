#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ogm/features.hpp"
#include "ogm/image.hpp"

namespace ogm {

struct HomographyPairSpec {
  std::size_t crop_height = 256;
  std::size_t crop_width = 256;
  double corner_perturbation = 50.0;  // ρ, max per-axis displacement of each crop corner
  double brightness_jitter = 20.0;    // additive, uniform in ±value
  double contrast_jitter = 0.2;       // multiplicative, uniform in 1 ± value
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct SurrogateExtractorConfig {
  std::size_t max_keypoints = 256;
  double corner_threshold = 0.01;  // relative to the strongest Harris response
  std::size_t nms_radius = 3;
  std::size_t border = 4;
  std::size_t patch_size = 8;
  double patch_spacing = 2.0;  // pixels between patch samples
  std::size_t guidance_pool_cell = 16;
  std::size_t descriptor_dim = 64;
  std::size_t guidance_dim = 32;
  std::uint64_t projection_seed = 0x5eed;

  void validate() const;
};

enum class TextureKind { kChecker, kNoise, kBlobs };
TextureKind texture_kind_from_string(const std::string& s);
std::string to_string(TextureKind kind);

class PairRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateSample : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Perturbs the four crop corners by up to ρ per axis and fits the homography
// mapping the original corners onto them. H(2,2) = 1.
Eigen::Matrix3d sample_homography(const HomographyPairSpec& spec, std::mt19937_64& rng);
// Same, but perturbs three corners and fits an affine map.
Eigen::Matrix<double, 2, 3> sample_affine(const HomographyPairSpec& spec, std::mt19937_64& rng);
// Largest L∞ displacement of the crop corners under `h`.
double max_corner_displacement(const Eigen::Matrix3d& h, std::size_t crop_height, std::size_t crop_width);

GrayImage procedural_texture(TextureKind kind, std::size_t height, std::size_t width, std::mt19937_64& rng);

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double response = 0.0;
};

// Harris corners after non-maximum suppression, strongest first.
std::vector<Keypoint> detect_harris(const GrayImage& image, const SurrogateExtractorConfig& cfg);

// Surrogate keypoints, patch descriptors and pooled guidance features.
class SurrogateExtractor {
 public:
  explicit SurrogateExtractor(SurrogateExtractorConfig cfg);
  FeatureSet extract(const GrayImage& image, const std::string& image_id) const;
  const SurrogateExtractorConfig& config() const { return cfg_; }

 private:
  SurrogateExtractorConfig cfg_;
  std::vector<double> descriptor_projection_;  // patch²  × C
  std::vector<double> guidance_projection_;    // stats × C′
};

inline constexpr double kCorrectPx = 3.0;
inline constexpr double kIncorrectPx = 5.0;

struct SyntheticPair {
  PairRecord record;
  GrayImage image_a;
  GrayImage image_b;
  double corner_displacement = 0.0;
};

enum class WarpKind { kHomography, kAffine };

// Crops view A from the centre of `image` and renders view B through the
// sampled transform. Throws PairRejected if either view has < 8 keypoints.
SyntheticPair make_pair(const GrayImage& image, const HomographyPairSpec& spec, const SurrogateExtractor& extractor,
                        std::mt19937_64& rng, WarpKind warp = WarpKind::kHomography);

struct PoseSceneConfig {
  std::size_t num_points = 200;
  std::size_t outliers_per_view = 40;
  double max_rotation_deg = 20.0;
  double descriptor_noise = 0.15;
  std::size_t height = 480;
  std::size_t width = 640;
  double focal = 500.0;
  std::size_t descriptor_dim = 64;
  std::size_t guidance_dim = 32;
};

// Two pinhole views of a random 3D point cloud; gt_matches from shared points.
PairRecord make_pose_pair(const PoseSceneConfig& cfg, std::mt19937_64& rng);

}  // namespace ogm
