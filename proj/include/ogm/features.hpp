#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ogm/tensor.hpp"

namespace ogm {

// All per-keypoint data for one image. Float fields are stored at file
// precision (f32) so that read(write(fs)) is bit-exact.
struct FeatureSet {
  std::string image_id;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::size_t descriptor_dim = 0;
  std::size_t guidance_dim = 0;
  std::vector<float> locations;    // N×2, (x, y) pixels
  std::vector<float> scores;       // N
  std::vector<float> descriptors;  // N×C
  std::vector<float> guidance;     // N×C′

  std::size_t size() const { return scores.size(); }
  Eigen::Vector2d location(std::size_t i) const {
    return {locations[2 * i], locations[2 * i + 1]};
  }
  Tensor location_tensor() const;
  Tensor descriptor_tensor() const;
  Tensor guidance_tensor() const;

  // Throws std::invalid_argument naming the violated invariant.
  void validate() const;
  bool operator==(const FeatureSet&) const = default;
};

using IndexPair = std::pair<std::size_t, std::size_t>;

struct HomographyGT {
  Eigen::Matrix3d H = Eigen::Matrix3d::Identity();  // maps A pixels to B pixels
};

struct AffineGT {
  Eigen::Matrix<double, 2, 3> A = Eigen::Matrix<double, 2, 3>::Identity();
};

struct RelativePoseGT {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();  // x_b = R x_a + t
  Eigen::Vector3d t = Eigen::Vector3d::UnitX();
  Eigen::Matrix3d K_a = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d K_b = Eigen::Matrix3d::Identity();
};

using GroundTruth = std::variant<HomographyGT, AffineGT, RelativePoseGT>;

struct PairRecord {
  FeatureSet set_a;
  FeatureSet set_b;
  GroundTruth gt_transform;
  std::optional<std::vector<IndexPair>> gt_matches;
};

void validate_ground_truth(const GroundTruth& gt);

// True for homography and affine ground truth (pixel transfer is defined).
bool has_analytic_transfer(const GroundTruth& gt);
// A -> B pixel transfer; nullopt when the point maps to infinity or gt is a pose.
std::optional<Eigen::Vector2d> transfer_a_to_b(const GroundTruth& gt, const Eigen::Vector2d& x);
std::optional<Eigen::Vector2d> transfer_b_to_a(const GroundTruth& gt, const Eigen::Vector2d& x);

// Symmetric transfer error max(|T a - b|, |a - T⁻¹ b|); +inf when undefined.
double transfer_error(const GroundTruth& gt, const Eigen::Vector2d& xa, const Eigen::Vector2d& xb);
// Row-major N×M matrix of transfer_error over all keypoint pairs.
std::vector<double> transfer_error_matrix(const GroundTruth& gt, const FeatureSet& a, const FeatureSet& b);

// Pairs (i, j) that are each other's nearest under `err` (row-major N×M)
// with err(i, j) < threshold. Ties resolve to the lower index.
std::vector<IndexPair> mutual_nearest_within(std::span<const double> err, std::size_t n, std::size_t m,
                                             double threshold);

// Channel-wise standardisation over keypoints: zero mean, unit variance per
// column; variance floored at 1e-8 so constant columns map to zero.
Tensor normalize_channels(const Tensor& g);
inline constexpr double kChannelVarianceFloor = 1e-8;

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

inline constexpr char kFeatureMagic[4] = {'O', 'G', 'F', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

std::vector<std::uint8_t> encode_features(const FeatureSet& fs);
FeatureSet decode_features(std::span<const std::uint8_t> bytes, std::string image_id = {});
void write_features(const FeatureSet& fs, const std::filesystem::path& path);
FeatureSet read_features(const std::filesystem::path& path);

// JSON sidecar: {"type": "homography"|"affine"|"pose", "matrix": [...],
// "intrinsics_a": [...], "intrinsics_b": [...], "gt_matches": [[i, j], ...]}.
std::string ground_truth_to_json(const GroundTruth& gt,
                                 const std::optional<std::vector<IndexPair>>& matches);
std::pair<GroundTruth, std::optional<std::vector<IndexPair>>> ground_truth_from_json(
    const std::string& text);

}  // namespace ogm
