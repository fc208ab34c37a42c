#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "ogm/features.hpp"
#include "ogm/matching.hpp"

namespace ogm {

struct RansacConfig {
  std::size_t iterations = 1000;
  double inlier_px = 3.0;                 // homography / affine
  double essential_threshold = 1e-3;      // Sampson distance in normalised coordinates
  std::uint64_t seed = 0;
};

struct EvalConfig {
  double correct_px = 3.0;
  double incorrect_px = 5.0;
  std::vector<double> pose_thresholds_deg{5.0, 10.0, 20.0};
  std::vector<double> pck_taus{0.01, 0.03, 0.05};
  RansacConfig ransac;

  void validate() const;
};

struct PointMatches {
  std::vector<Eigen::Vector2d> a;
  std::vector<Eigen::Vector2d> b;
};

PointMatches matched_points(const MatchList& matches, const FeatureSet& a, const FeatureSet& b);

struct CorrespondencePR {
  std::size_t predicted = 0;
  std::size_t correct = 0;
  std::size_t incorrect = 0;  // beyond incorrect_px; the band between is ignored
  std::size_t matchable = 0;  // keypoints of A with a partner within correct_px
  std::optional<double> precision;  // empty when nothing was classified
  double recall = 0.0;
};

// Analytic transfer when available, otherwise membership in gt_matches.
CorrespondencePR correspondence_pr(const MatchList& matches, const PairRecord& pair, const EvalConfig& cfg);

// Pooled over pairs: Σcorrect / Σ(correct + incorrect) and Σcorrect / Σmatchable.
struct PRSummary {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t pairs = 0;
};
PRSummary summarize_pr(const std::vector<CorrespondencePR>& per_pair);

// Angle of R_a · R_bᵀ in degrees, from the axis-angle (Rodrigues) form.
double rotation_error_deg(const Eigen::Matrix3d& r_a, const Eigen::Matrix3d& r_b);

struct PoseResult {
  bool success = false;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();  // unit length on success
  Eigen::Matrix3d E = Eigen::Matrix3d::Zero();
  std::size_t inliers = 0;
};

inline constexpr std::size_t kMinPoseMatches = 8;
inline constexpr double kPoseFailureDeg = 180.0;

// Eight-point essential matrix inside RANSAC, refit on inliers, then the
// (R, t) decomposition with the most points in front of both cameras.
PoseResult estimate_pose(const PointMatches& pts, const Eigen::Matrix3d& k_a, const Eigen::Matrix3d& k_b,
                         const RansacConfig& cfg);

struct PoseSummary {
  std::vector<double> accuracy;  // per threshold
  std::vector<double> auc;
};

// Accuracy is the fraction of errors ≤ τ. AUC integrates the cumulative error
// curve on [0, τ] with the trapezoid rule and divides by τ.
PoseSummary pose_accuracy_and_auc(std::vector<double> errors_deg, const std::vector<double>& thresholds);

struct AffineResult {
  bool success = false;
  Eigen::Matrix<double, 2, 3> A = Eigen::Matrix<double, 2, 3>::Zero();
  std::size_t inliers = 0;
};

AffineResult estimate_affine(const PointMatches& pts, const RansacConfig& cfg);

// The 20 fixed test points: 5 columns × 4 rows evenly spanning [0.1, 0.9] of the image.
std::vector<Eigen::Vector2d> pck_test_points(std::size_t height, std::size_t width);

struct PCKResult {
  bool failed = false;
  std::vector<double> pck;  // per τ
};

PCKResult pck_from_affines(const Eigen::Matrix<double, 2, 3>& estimated, const Eigen::Matrix<double, 2, 3>& gt,
                           std::size_t height, std::size_t width, const std::vector<double>& taus);
PCKResult estimate_affine_pck(const PointMatches& pts, const Eigen::Matrix<double, 2, 3>& gt, std::size_t height,
                              std::size_t width, const EvalConfig& cfg);

struct HomographyResult {
  bool success = false;
  Eigen::Matrix3d H = Eigen::Matrix3d::Identity();  // H(2,2) = 1
  std::size_t inliers = 0;
};

// Normalised DLT with a four-point sample inside RANSAC, refit on inliers.
HomographyResult estimate_homography(const PointMatches& pts, const RansacConfig& cfg);

}  // namespace ogm
