#include <gtest/gtest.h>

#include <algorithm>
#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <random>

#include "ogm/geomeval.hpp"
#include "pose_scene.hpp"

namespace ogm {
namespace {

using testing::make_pose_scene;
using testing::random_rotation;

FeatureSet located(const std::vector<Eigen::Vector2d>& pts) {
  FeatureSet fs;
  fs.image_id = "pts";
  fs.height = 200;
  fs.width = 200;
  fs.descriptor_dim = 1;
  fs.guidance_dim = 1;
  for (const auto& p : pts) {
    fs.locations.push_back(static_cast<float>(p.x()));
    fs.locations.push_back(static_cast<float>(p.y()));
    fs.scores.push_back(1.0f);
    fs.descriptors.push_back(1.0f);
    fs.guidance.push_back(1.0f);
  }
  return fs;
}

std::vector<Eigen::Vector2d> grid_points(std::size_t n, double step = 20.0) {
  std::vector<Eigen::Vector2d> pts;
  for (std::size_t k = 0; k < n; ++k) pts.emplace_back(10.0 + step * (k % 8), 10.0 + step * (k / 8));
  return pts;
}

MatchList diagonal(std::size_t n) {
  MatchList ml;
  for (std::size_t i = 0; i < n; ++i) ml.pairs.push_back({i, i, 1.0});
  return ml;
}

// ---- correspondence precision / recall ----

TEST(CorrespondencePR, ExactReprojectionsArePrecise) {
  const auto pts = grid_points(12);
  HomographyGT h;
  h.H(0, 2) = 7.0;
  std::vector<Eigen::Vector2d> moved;
  for (const auto& p : pts) moved.push_back(p + Eigen::Vector2d(7.0, 0.0));
  const PairRecord pair{located(pts), located(moved), h, std::nullopt};
  const CorrespondencePR r = correspondence_pr(diagonal(12), pair, {});
  ASSERT_TRUE(r.precision.has_value());
  EXPECT_EQ(*r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.matchable, 12u);
}

TEST(CorrespondencePR, TenPixelDisplacementIsImprecise) {
  const auto pts = grid_points(12, 40.0);
  std::vector<Eigen::Vector2d> moved;
  for (const auto& p : pts) moved.push_back(p + Eigen::Vector2d(0.0, 10.0));
  const PairRecord pair{located(pts), located(moved), HomographyGT{}, std::nullopt};
  const CorrespondencePR r = correspondence_pr(diagonal(12), pair, {});
  ASSERT_TRUE(r.precision.has_value());
  EXPECT_EQ(*r.precision, 0.0);
  EXPECT_EQ(r.incorrect, 12u);
}

TEST(CorrespondencePR, NoPredictionsLeavesPrecisionUndefined) {
  const auto pts = grid_points(5);
  const PairRecord pair{located(pts), located(pts), HomographyGT{}, std::nullopt};
  const CorrespondencePR r = correspondence_pr({}, pair, {});
  EXPECT_FALSE(r.precision.has_value());
  EXPECT_EQ(r.recall, 0.0);
}

TEST(CorrespondencePR, MatchesBruteForceClassification) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 200.0), jitter(-6.0, 6.0);
  AffineGT g;
  g.A << 1.05, 0.02, 3.0, -0.03, 0.97, -2.0;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Eigen::Vector2d> a, b;
    for (int k = 0; k < 30; ++k) {
      a.emplace_back(u(rng), u(rng));
      b.push_back(g.A * a.back().homogeneous() + Eigen::Vector2d(jitter(rng), jitter(rng)));
    }
    for (int k = 0; k < 5; ++k) b.emplace_back(u(rng), u(rng));
    const PairRecord pair{located(a), located(b), g, std::nullopt};
    MatchList ml;
    std::uniform_int_distribution<std::size_t> ui(0, a.size() - 1), uj(0, b.size() - 1);
    for (int k = 0; k < 25; ++k) {
      const std::size_t i = ui(rng);
      ml.pairs.push_back({i, (k % 3 == 0) ? uj(rng) : i, 0.5});
    }
    const CorrespondencePR r = correspondence_pr(ml, pair, {});

    auto err = [&](std::size_t i, std::size_t j) {
      const Eigen::Vector2d fa = pair.set_a.location(i), fb = pair.set_b.location(j);
      const Eigen::Vector2d fwd = g.A * fa.homogeneous();
      Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
      m.topRows<2>() = g.A;
      const Eigen::Vector2d back = (m.inverse() * fb.homogeneous()).hnormalized();
      return std::max((fwd - fb).norm(), (back - fa).norm());
    };
    std::size_t correct = 0, incorrect = 0, matchable = 0;
    for (const Match& mt : ml.pairs) {
      const double e = err(mt.i, mt.j);
      if (e < 3.0) ++correct;
      if (e > 5.0) ++incorrect;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
      bool any = false;
      for (std::size_t j = 0; j < b.size(); ++j) any |= err(i, j) < 3.0;
      matchable += any;
    }
    EXPECT_EQ(r.correct, correct);
    EXPECT_EQ(r.incorrect, incorrect);
    EXPECT_EQ(r.matchable, matchable);
    if (correct + incorrect > 0) {
      EXPECT_DOUBLE_EQ(*r.precision, static_cast<double>(correct) / static_cast<double>(correct + incorrect));
    }
    EXPECT_DOUBLE_EQ(r.recall, static_cast<double>(correct) / static_cast<double>(matchable));
  }
}

TEST(CorrespondencePR, UsesGroundTruthMatchesWithoutTransfer) {
  const auto pts = grid_points(4);
  PairRecord pair{located(pts), located(pts), RelativePoseGT{}, std::vector<IndexPair>{{0, 1}, {1, 0}, {2, 2}}};
  MatchList ml;
  ml.pairs = {{0, 1, 1.0}, {1, 1, 1.0}, {2, 2, 1.0}};
  const CorrespondencePR r = correspondence_pr(ml, pair, {});
  EXPECT_EQ(r.correct, 2u);
  EXPECT_EQ(r.incorrect, 1u);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
  pair.gt_matches.reset();
  EXPECT_THROW(correspondence_pr(ml, pair, {}), std::invalid_argument);
}

TEST(SummarizePR, PoolsCounts) {
  CorrespondencePR a, b;
  a.correct = 8;
  a.incorrect = 2;
  a.matchable = 10;
  b.correct = 1;
  b.incorrect = 9;
  b.matchable = 30;
  const PRSummary s = summarize_pr({a, b});
  EXPECT_DOUBLE_EQ(s.precision, 9.0 / 20.0);
  EXPECT_DOUBLE_EQ(s.recall, 9.0 / 40.0);
  EXPECT_EQ(s.pairs, 2u);
}

TEST(EvalConfig, ValidatesOrdering) {
  EvalConfig c;
  EXPECT_NO_THROW(c.validate());
  c.correct_px = 6.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.pose_thresholds_deg = {10, 5};
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// ---- rotation error ----

TEST(RotationError, ZeroForEqualAndSymmetric) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 50; ++k) {
    const Eigen::Matrix3d a = random_rotation(rng, 0.0, 180.0), b = random_rotation(rng, 0.0, 180.0);
    EXPECT_NEAR(rotation_error_deg(a, a), 0.0, 1e-9);
    EXPECT_NEAR(rotation_error_deg(a, b), rotation_error_deg(b, a), 1e-9);
  }
}

TEST(RotationError, KnownAxisAngle) {
  std::mt19937_64 rng(2);
  for (double deg : {1e-4, 0.05, 1.0, 30.0, 90.0, 179.0, 180.0}) {
    const Eigen::Matrix3d base = random_rotation(rng, 0.0, 180.0);
    const Eigen::Vector3d axis = Eigen::Vector3d(0.3, -0.5, 0.8).normalized();
    const Eigen::Matrix3d r = Eigen::AngleAxisd(deg * M_PI / 180.0, axis).toRotationMatrix() * base;
    EXPECT_NEAR(rotation_error_deg(r, base), deg, 1e-9) << deg;
  }
}

// ---- pose ----

TEST(EstimatePose, NoiselessRecoversRotation) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = make_pose_scene(rng);
    const PoseResult p = estimate_pose(s.pts, s.K, s.K, {});
    ASSERT_TRUE(p.success);
    EXPECT_LT(rotation_error_deg(p.R, s.R), 0.1);
    EXPECT_NEAR(p.t.norm(), 1.0, 1e-12);
    EXPECT_GT(p.t.dot(s.t), 0.999);
    EXPECT_NEAR(p.R.determinant(), 1.0, 1e-9);
    EXPECT_TRUE((p.R * p.R.transpose()).isApprox(Eigen::Matrix3d::Identity(), 1e-9));
    EXPECT_EQ(p.inliers, 50u);
  }
}

TEST(EstimatePose, EssentialResidualOnInliers) {
  std::mt19937_64 rng(4);
  const auto s = make_pose_scene(rng);
  const PoseResult p = estimate_pose(s.pts, s.K, s.K, {});
  ASSERT_TRUE(p.success);
  const Eigen::Matrix3d k_inv = s.K.inverse();
  for (std::size_t i = 0; i < s.pts.a.size(); ++i) {
    const Eigen::Vector3d xa = k_inv * s.pts.a[i].homogeneous(), xb = k_inv * s.pts.b[i].homogeneous();
    EXPECT_LT(std::abs(xb.dot(p.E * xa)), 1e-10);
  }
}

TEST(EstimatePose, ThirtyPercentOutliers) {
  std::mt19937_64 rng(5);
  std::size_t good = 0;
  const std::size_t trials = 20;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const auto s = make_pose_scene(rng, 50, 15);
    RansacConfig cfg;
    cfg.seed = trial;
    const PoseResult p = estimate_pose(s.pts, s.K, s.K, cfg);
    if (p.success && rotation_error_deg(p.R, s.R) < 1.0) ++good;
  }
  EXPECT_GE(good, trials - 1);
}

TEST(EstimatePose, TooFewMatchesFails) {
  std::mt19937_64 rng(6);
  const auto s = make_pose_scene(rng, kMinPoseMatches - 1);
  EXPECT_FALSE(estimate_pose(s.pts, s.K, s.K, {}).success);
}

TEST(EstimatePose, DeterministicGivenSeed) {
  std::mt19937_64 rng(7);
  const auto s = make_pose_scene(rng, 50, 15);
  RansacConfig cfg;
  cfg.seed = 99;
  const PoseResult a = estimate_pose(s.pts, s.K, s.K, cfg), b = estimate_pose(s.pts, s.K, s.K, cfg);
  EXPECT_EQ(a.R, b.R);
  EXPECT_EQ(a.t, b.t);
  EXPECT_EQ(a.inliers, b.inliers);
}

// ---- pose accuracy / AUC ----

TEST(PoseAccuracy, AllZeroErrors) {
  const PoseSummary s = pose_accuracy_and_auc({0, 0, 0}, {5, 10, 20});
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(s.accuracy[k], 1.0);
    EXPECT_DOUBLE_EQ(s.auc[k], 1.0);
  }
}

TEST(PoseAccuracy, DirectCount) {
  const PoseSummary s = pose_accuracy_and_auc({4, 6, 21}, {5, 10, 20});
  EXPECT_DOUBLE_EQ(s.accuracy[0], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.accuracy[1], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.accuracy[2], 2.0 / 3.0);
}

// Midpoint integration of the piecewise-linear cumulative curve through (0,0)
// and (e_k, k/n) for e_k < tau, held flat past the last such error.
double auc_oracle(std::vector<double> e, double tau) {
  std::sort(e.begin(), e.end());
  const double n = static_cast<double>(e.size());
  e.erase(std::lower_bound(e.begin(), e.end(), tau), e.end());
  auto curve = [&](double x) {
    double px = 0.0, py = 0.0;
    for (std::size_t k = 0; k < e.size(); ++k) {
      const double ex = e[k], ey = static_cast<double>(k + 1) / n;
      if (x <= ex) return ex > px ? py + (ey - py) * (x - px) / (ex - px) : ey;
      px = ex;
      py = ey;
    }
    return py;
  };
  const int steps = 200000;
  double area = 0.0;
  for (int s = 0; s < steps; ++s) area += curve((s + 0.5) * tau / steps);
  return area / steps;
}

TEST(PoseAccuracy, AucMatchesNumericalIntegration) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> errs(40);
    for (double& e : errs) e = u(rng);
    const PoseSummary s = pose_accuracy_and_auc(errs, {5, 10, 20});
    for (std::size_t k = 0; k < 3; ++k) {
      const double tau = std::vector<double>{5, 10, 20}[k];
      EXPECT_NEAR(s.auc[k], auc_oracle(errs, tau), 1e-3);
    }
  }
}

TEST(PoseAccuracy, MonotoneAndAucBelowAccuracy) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 180.0);
  std::vector<double> errs(100);
  for (double& e : errs) e = u(rng) * u(rng) / 180.0;
  const std::vector<double> taus = {1, 2, 5, 10, 20, 45, 90};
  const PoseSummary s = pose_accuracy_and_auc(errs, taus);
  for (std::size_t k = 0; k < taus.size(); ++k) {
    EXPECT_LE(s.auc[k], s.accuracy[k] + 1e-12);
    if (k) {
      EXPECT_GE(s.accuracy[k], s.accuracy[k - 1]);
    }
  }
}

TEST(PoseAccuracy, RejectsEmptyAndOutOfRange) {
  EXPECT_THROW(pose_accuracy_and_auc({}, {5}), std::invalid_argument);
  EXPECT_THROW(pose_accuracy_and_auc({181.0}, {5}), std::invalid_argument);
  EXPECT_THROW(pose_accuracy_and_auc({-1.0}, {5}), std::invalid_argument);
}

// ---- affine / PCK ----

TEST(PckTestPoints, FiveByFourGrid) {
  const auto pts = pck_test_points(100, 200);
  ASSERT_EQ(pts.size(), 20u);
  EXPECT_DOUBLE_EQ(pts.front().x(), 20.0);
  EXPECT_DOUBLE_EQ(pts.front().y(), 10.0);
  EXPECT_DOUBLE_EQ(pts.back().x(), 180.0);
  EXPECT_DOUBLE_EQ(pts.back().y(), 90.0);
}

TEST(Pck, EqualAffinesScoreOne) {
  Eigen::Matrix<double, 2, 3> a;
  a << 1.1, 0.1, 5, -0.2, 0.9, 3;
  const PCKResult r = pck_from_affines(a, a, 240, 320, {0.01, 0.03, 0.05});
  EXPECT_EQ(r.pck, (std::vector<double>{1.0, 1.0, 1.0}));
}

TEST(Pck, UniformTranslationOfTwoPercent) {
  Eigen::Matrix<double, 2, 3> gt;
  gt << 1.1, 0.1, 5, -0.2, 0.9, 3;
  Eigen::Matrix<double, 2, 3> est = gt;
  est(0, 2) += 0.02 * 320;
  const PCKResult r = pck_from_affines(est, gt, 240, 320, {0.01, 0.03, 0.05});
  EXPECT_EQ(r.pck, (std::vector<double>{0.0, 1.0, 1.0}));
}

TEST(EstimateAffine, RecoversNoiselessAffine) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 300.0), d(-0.3, 0.3), t(-20.0, 20.0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::Matrix<double, 2, 3> gt;
    gt << 1 + d(rng), d(rng), t(rng), d(rng), 1 + d(rng), t(rng);
    PointMatches pts;
    for (int k = 0; k < 30; ++k) {
      pts.a.emplace_back(u(rng), u(rng));
      pts.b.push_back(gt * pts.a.back().homogeneous());
    }
    const AffineResult r = estimate_affine(pts, {});
    ASSERT_TRUE(r.success);
    EXPECT_LT((r.A - gt).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_EQ(r.inliers, 30u);
    const PCKResult p = estimate_affine_pck(pts, gt, 300, 300, {});
    EXPECT_FALSE(p.failed);
    EXPECT_EQ(p.pck, (std::vector<double>{1.0, 1.0, 1.0}));
  }
}

TEST(EstimateAffine, TooFewMatchesFails) {
  PointMatches pts;
  pts.a = {{0, 0}, {1, 0}};
  pts.b = pts.a;
  EXPECT_FALSE(estimate_affine(pts, {}).success);
  const PCKResult p = estimate_affine_pck(pts, Eigen::Matrix<double, 2, 3>::Identity(), 100, 100, {});
  EXPECT_TRUE(p.failed);
  EXPECT_EQ(p.pck, (std::vector<double>{0.0, 0.0, 0.0}));
}

// ---- homography ----

TEST(EstimateHomography, FourExactCorrespondences) {
  Eigen::Matrix3d h;
  h << 1.2, 0.1, 15, -0.05, 0.9, -8, 1e-4, -2e-4, 1;
  PointMatches pts;
  pts.a = {{10, 20}, {250, 30}, {240, 200}, {20, 210}};
  for (const auto& p : pts.a) pts.b.push_back((h * p.homogeneous()).hnormalized());
  const HomographyResult r = estimate_homography(pts, {});
  ASSERT_TRUE(r.success);
  EXPECT_LT((r.H - h).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(EstimateHomography, IdentityCorrespondences) {
  PointMatches pts;
  pts.a = {{0, 0}, {100, 0}, {100, 80}, {0, 80}, {50, 40}, {30, 70}};
  pts.b = pts.a;
  const HomographyResult r = estimate_homography(pts, {});
  ASSERT_TRUE(r.success);
  EXPECT_LT((r.H - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(EstimateHomography, CollinearPointsFail) {
  PointMatches pts;
  for (int k = 0; k < 8; ++k) pts.a.emplace_back(10.0 * k, 5.0 * k + 1.0);
  pts.b = pts.a;
  EXPECT_FALSE(estimate_homography(pts, {}).success);
}

TEST(EstimateHomography, RobustToOutliers) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 256.0);
  Eigen::Matrix3d h;
  h << 0.95, 0.08, 12, -0.06, 1.04, -5, 2e-4, 1e-4, 1;
  PointMatches pts;
  for (int k = 0; k < 60; ++k) {
    pts.a.emplace_back(u(rng), u(rng));
    pts.b.push_back(k < 40 ? Eigen::Vector2d((h * pts.a.back().homogeneous()).hnormalized())
                           : Eigen::Vector2d(u(rng), u(rng)));
  }
  RansacConfig cfg;
  cfg.seed = 3;
  const HomographyResult r = estimate_homography(pts, cfg);
  ASSERT_TRUE(r.success);
  EXPECT_LT((r.H - h).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_GE(r.inliers, 40u);
  const HomographyResult again = estimate_homography(pts, cfg);
  EXPECT_EQ(again.H, r.H);
}

TEST(MatchedPoints, LooksUpLocations) {
  const FeatureSet a = located({{1, 2}, {3, 4}}), b = located({{5, 6}});
  MatchList ml;
  ml.pairs = {{1, 0, 1.0}};
  const PointMatches p = matched_points(ml, a, b);
  EXPECT_EQ(p.a[0], Eigen::Vector2d(3, 4));
  EXPECT_EQ(p.b[0], Eigen::Vector2d(5, 6));
  ml.pairs = {{2, 0, 1.0}};
  EXPECT_THROW(matched_points(ml, a, b), std::out_of_range);
}

}  // namespace
}  // namespace ogm
