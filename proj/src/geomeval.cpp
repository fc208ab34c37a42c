#include "ogm/geomeval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace ogm {

void EvalConfig::validate() const {
  if (!(correct_px < incorrect_px)) throw std::invalid_argument("correct_px must be below incorrect_px");
  if (!std::is_sorted(pose_thresholds_deg.begin(), pose_thresholds_deg.end()))
    throw std::invalid_argument("pose thresholds must be sorted ascending");
  if (!std::is_sorted(pck_taus.begin(), pck_taus.end())) throw std::invalid_argument("pck taus must be sorted ascending");
}

PointMatches matched_points(const MatchList& matches, const FeatureSet& a, const FeatureSet& b) {
  PointMatches out;
  for (const Match& m : matches.pairs) {
    if (m.i >= a.size() || m.j >= b.size()) throw std::out_of_range("match index outside feature set");
    out.a.push_back(a.location(m.i));
    out.b.push_back(b.location(m.j));
  }
  return out;
}

CorrespondencePR correspondence_pr(const MatchList& matches, const PairRecord& pair, const EvalConfig& cfg) {
  const FeatureSet& a = pair.set_a;
  const FeatureSet& b = pair.set_b;
  CorrespondencePR r;
  r.predicted = matches.pairs.size();
  if (has_analytic_transfer(pair.gt_transform)) {
    const std::vector<double> err = transfer_error_matrix(pair.gt_transform, a, b);
    const std::size_t m = b.size();
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto row = err.begin() + static_cast<long>(i * m);
      if (m > 0 && *std::min_element(row, row + static_cast<long>(m)) < cfg.correct_px) ++r.matchable;
    }
    for (const Match& mt : matches.pairs) {
      const double e = err[mt.i * m + mt.j];
      if (e < cfg.correct_px) ++r.correct;
      else if (e > cfg.incorrect_px) ++r.incorrect;
    }
  } else if (pair.gt_matches) {
    std::vector<std::ptrdiff_t> partner(a.size(), -1);
    for (const auto& [i, j] : *pair.gt_matches) partner.at(i) = static_cast<std::ptrdiff_t>(j);
    r.matchable = pair.gt_matches->size();
    for (const Match& mt : matches.pairs) {
      if (partner.at(mt.i) == static_cast<std::ptrdiff_t>(mt.j)) ++r.correct;
      else ++r.incorrect;
    }
  } else {
    throw std::invalid_argument("pair has neither an analytic transform nor gt_matches");
  }
  if (r.correct + r.incorrect > 0)
    r.precision = static_cast<double>(r.correct) / static_cast<double>(r.correct + r.incorrect);
  r.recall = r.matchable ? static_cast<double>(r.correct) / static_cast<double>(r.matchable) : 0.0;
  return r;
}

PRSummary summarize_pr(const std::vector<CorrespondencePR>& per_pair) {
  std::size_t correct = 0, classified = 0, matchable = 0;
  for (const auto& r : per_pair) {
    correct += r.correct;
    classified += r.correct + r.incorrect;
    matchable += r.matchable;
  }
  PRSummary s;
  s.pairs = per_pair.size();
  s.precision = classified ? static_cast<double>(correct) / static_cast<double>(classified) : 0.0;
  s.recall = matchable ? static_cast<double>(correct) / static_cast<double>(matchable) : 0.0;
  return s;
}

double rotation_error_deg(const Eigen::Matrix3d& r_a, const Eigen::Matrix3d& r_b) {
  const Eigen::Matrix3d r = r_a * r_b.transpose();
  const Eigen::Vector3d axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = 0.5 * axis.norm();
  const double c = 0.5 * (r.trace() - 1.0);
  return std::atan2(s, c) * 180.0 / M_PI;
}

namespace {

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  // Floyd's algorithm keeps the draw count fixed per sample.
  std::vector<std::size_t> chosen;
  for (std::size_t j = n - k; j < n; ++j) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
    if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) chosen.push_back(t);
    else chosen.push_back(j);
  }
  return chosen;
}

// Similarity transform taking points to zero centroid and mean distance √2.
Eigen::Matrix3d normalizing_transform(const std::vector<Eigen::Vector2d>& pts, const std::vector<std::size_t>& idx) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (std::size_t i : idx) c += pts[i];
  c /= static_cast<double>(idx.size());
  double d = 0.0;
  for (std::size_t i : idx) d += (pts[i] - c).norm();
  d /= static_cast<double>(idx.size());
  const double s = d > 1e-12 ? std::sqrt(2.0) / d : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

bool collinear(const Eigen::Vector2d& p, const Eigen::Vector2d& q, const Eigen::Vector2d& r) {
  const Eigen::Vector2d u = q - p, v = r - p;
  const double cross = u.x() * v.y() - u.y() * v.x();
  return std::abs(cross) <= 1e-6 * u.norm() * v.norm() + 1e-12;
}

Eigen::VectorXd null_vector(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
  return svd.matrixV().col(svd.matrixV().cols() - 1);
}

// ---- essential matrix ----

std::optional<Eigen::Matrix3d> fit_essential(const std::vector<Eigen::Vector2d>& xa,
                                             const std::vector<Eigen::Vector2d>& xb,
                                             const std::vector<std::size_t>& idx) {
  const Eigen::Matrix3d ta = normalizing_transform(xa, idx), tb = normalizing_transform(xb, idx);
  Eigen::MatrixXd m(std::max<std::size_t>(idx.size(), 9), 9);
  m.setZero();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Eigen::Vector3d p = ta * xa[idx[r]].homogeneous();
    const Eigen::Vector3d q = tb * xb[idx[r]].homogeneous();
    m.row(static_cast<long>(r)) << q.x() * p.x(), q.x() * p.y(), q.x(), q.y() * p.x(), q.y() * p.y(), q.y(), p.x(),
        p.y(), 1.0;
  }
  const Eigen::VectorXd e = null_vector(m);
  Eigen::Matrix3d en;
  en << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  Eigen::Matrix3d ee = tb.transpose() * en * ta;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(ee, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d proj =
      svd.matrixU() * Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal() * svd.matrixV().transpose();
  if (!proj.allFinite()) return std::nullopt;
  return proj;
}

double sampson_distance(const Eigen::Matrix3d& e, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector3d x = a.homogeneous(), y = b.homogeneous();
  const Eigen::Vector3d ex = e * x, ety = e.transpose() * y;
  const double num = y.dot(ex);
  const double den = ex.x() * ex.x() + ex.y() * ex.y() + ety.x() * ety.x() + ety.y() * ety.y();
  if (den <= 0.0) return std::numeric_limits<double>::infinity();
  return std::abs(num) / std::sqrt(den);
}

// Depths (λa, λb) with λb xb = R λa xa + t, least squares.
bool in_front(const Eigen::Matrix3d& r, const Eigen::Vector3d& t, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  Eigen::Matrix<double, 3, 2> m;
  m.col(0) = r * a.homogeneous();
  m.col(1) = -b.homogeneous();
  const Eigen::Vector2d lam = m.colPivHouseholderQr().solve(-t);
  return lam(0) > 0.0 && lam(1) > 0.0;
}

}  // namespace

PoseResult estimate_pose(const PointMatches& pts, const Eigen::Matrix3d& k_a, const Eigen::Matrix3d& k_b,
                         const RansacConfig& cfg) {
  PoseResult out;
  const std::size_t n = pts.a.size();
  if (pts.b.size() != n) throw std::invalid_argument("point lists differ in length");
  if (n < kMinPoseMatches) return out;
  const Eigen::Matrix3d ka_inv = k_a.inverse(), kb_inv = k_b.inverse();
  std::vector<Eigen::Vector2d> xa(n), xb(n);
  for (std::size_t i = 0; i < n; ++i) {
    xa[i] = (ka_inv * pts.a[i].homogeneous()).hnormalized();
    xb[i] = (kb_inv * pts.b[i].homogeneous()).hnormalized();
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> best_inliers;
  auto inliers_of = [&](const Eigen::Matrix3d& e) {
    std::vector<std::size_t> in;
    for (std::size_t i = 0; i < n; ++i)
      if (sampson_distance(e, xa[i], xb[i]) < cfg.essential_threshold) in.push_back(i);
    return in;
  };
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto sample = sample_indices(n, kMinPoseMatches, rng);
    const auto e = fit_essential(xa, xb, sample);
    if (!e) continue;
    auto in = inliers_of(*e);
    if (in.size() > best_inliers.size()) best_inliers = std::move(in);
  }
  if (best_inliers.size() < kMinPoseMatches) return out;
  const auto refit = fit_essential(xa, xb, best_inliers);
  if (!refit) return out;
  const Eigen::Matrix3d e = *refit;
  const auto final_inliers = inliers_of(e);
  const auto& support = final_inliers.size() >= kMinPoseMatches ? final_inliers : best_inliers;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  if (u.determinant() < 0) u = -u;
  if (v.determinant() < 0) v = -v;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d r1 = u * w * v.transpose(), r2 = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2).normalized();
  const std::pair<Eigen::Matrix3d, Eigen::Vector3d> candidates[4] = {{r1, t}, {r1, -t}, {r2, t}, {r2, -t}};
  std::size_t best_count = 0;
  for (const auto& [r, tc] : candidates) {
    std::size_t count = 0;
    for (std::size_t i : support)
      if (in_front(r, tc, xa[i], xb[i])) ++count;
    if (count > best_count) {
      best_count = count;
      out.R = r;
      out.t = tc;
    }
  }
  if (best_count == 0) return out;
  out.success = true;
  out.E = e;
  out.inliers = support.size();
  return out;
}

PoseSummary pose_accuracy_and_auc(std::vector<double> errors_deg, const std::vector<double>& thresholds) {
  if (errors_deg.empty()) throw std::invalid_argument("no pose errors to aggregate");
  for (double e : errors_deg)
    if (!(e >= 0.0 && e <= 180.0)) throw std::invalid_argument("pose error outside [0, 180]");
  std::sort(errors_deg.begin(), errors_deg.end());
  const double n = static_cast<double>(errors_deg.size());
  PoseSummary s;
  for (double tau : thresholds) {
    const auto le = std::upper_bound(errors_deg.begin(), errors_deg.end(), tau) - errors_deg.begin();
    s.accuracy.push_back(static_cast<double>(le) / n);
    // Cumulative curve through (0, 0), (e_k, k/n) for e_k < τ, ending at (τ, last recall).
    const auto lt = std::lower_bound(errors_deg.begin(), errors_deg.end(), tau) - errors_deg.begin();
    double area = 0.0, prev_e = 0.0, prev_r = 0.0;
    for (long k = 0; k < lt; ++k) {
      const double e = errors_deg[static_cast<std::size_t>(k)], r = static_cast<double>(k + 1) / n;
      area += 0.5 * (r + prev_r) * (e - prev_e);
      prev_e = e;
      prev_r = r;
    }
    area += prev_r * (tau - prev_e);
    s.auc.push_back(area / tau);
  }
  return s;
}

namespace {

std::optional<Eigen::Matrix<double, 2, 3>> fit_affine(const PointMatches& pts, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd m(idx.size(), 3);
  Eigen::MatrixXd rhs(idx.size(), 2);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    m.row(static_cast<long>(r)) << pts.a[idx[r]].x(), pts.a[idx[r]].y(), 1.0;
    rhs.row(static_cast<long>(r)) = pts.b[idx[r]].transpose();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  if (qr.rank() < 3) return std::nullopt;
  const Eigen::MatrixXd sol = qr.solve(rhs);
  Eigen::Matrix<double, 2, 3> a = sol.transpose();
  if (!a.allFinite()) return std::nullopt;
  return a;
}

}  // namespace

AffineResult estimate_affine(const PointMatches& pts, const RansacConfig& cfg) {
  AffineResult out;
  const std::size_t n = pts.a.size();
  if (pts.b.size() != n) throw std::invalid_argument("point lists differ in length");
  if (n < 3) return out;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> best;
  auto inliers_of = [&](const Eigen::Matrix<double, 2, 3>& a) {
    std::vector<std::size_t> in;
    for (std::size_t i = 0; i < n; ++i)
      if ((a * pts.a[i].homogeneous() - pts.b[i]).norm() < cfg.inlier_px) in.push_back(i);
    return in;
  };
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto s = sample_indices(n, 3, rng);
    if (collinear(pts.a[s[0]], pts.a[s[1]], pts.a[s[2]])) continue;
    const auto a = fit_affine(pts, s);
    if (!a) continue;
    auto in = inliers_of(*a);
    if (in.size() > best.size()) best = std::move(in);
  }
  if (best.size() < 3) return out;
  const auto refit = fit_affine(pts, best);
  if (!refit) return out;
  out.success = true;
  out.A = *refit;
  out.inliers = inliers_of(*refit).size();
  return out;
}

std::vector<Eigen::Vector2d> pck_test_points(std::size_t height, std::size_t width) {
  std::vector<Eigen::Vector2d> pts;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 5; ++c)
      pts.emplace_back((0.1 + 0.8 * c / 4.0) * static_cast<double>(width),
                       (0.1 + 0.8 * r / 3.0) * static_cast<double>(height));
  return pts;
}

PCKResult pck_from_affines(const Eigen::Matrix<double, 2, 3>& estimated, const Eigen::Matrix<double, 2, 3>& gt,
                           std::size_t height, std::size_t width, const std::vector<double>& taus) {
  const auto pts = pck_test_points(height, width);
  const double side = static_cast<double>(std::max(height, width));
  PCKResult out;
  for (double tau : taus) {
    std::size_t hit = 0;
    for (const auto& p : pts)
      if ((estimated * p.homogeneous() - gt * p.homogeneous()).norm() < tau * side) ++hit;
    out.pck.push_back(static_cast<double>(hit) / static_cast<double>(pts.size()));
  }
  return out;
}

PCKResult estimate_affine_pck(const PointMatches& pts, const Eigen::Matrix<double, 2, 3>& gt, std::size_t height,
                              std::size_t width, const EvalConfig& cfg) {
  const AffineResult fit = estimate_affine(pts, cfg.ransac);
  if (!fit.success) return {true, std::vector<double>(cfg.pck_taus.size(), 0.0)};
  return pck_from_affines(fit.A, gt, height, width, cfg.pck_taus);
}

namespace {

std::optional<Eigen::Matrix3d> fit_homography(const PointMatches& pts, const std::vector<std::size_t>& idx) {
  const Eigen::Matrix3d ta = normalizing_transform(pts.a, idx), tb = normalizing_transform(pts.b, idx);
  Eigen::MatrixXd m(std::max<std::size_t>(2 * idx.size(), 9), 9);
  m.setZero();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Eigen::Vector3d p = ta * pts.a[idx[r]].homogeneous();
    const Eigen::Vector3d q = tb * pts.b[idx[r]].homogeneous();
    m.row(static_cast<long>(2 * r)) << 0, 0, 0, -p.x(), -p.y(), -1, q.y() * p.x(), q.y() * p.y(), q.y();
    m.row(static_cast<long>(2 * r + 1)) << p.x(), p.y(), 1, 0, 0, 0, -q.x() * p.x(), -q.x() * p.y(), -q.x();
  }
  const Eigen::VectorXd h = null_vector(m);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Eigen::Matrix3d out = tb.inverse() * hn * ta;
  if (std::abs(out(2, 2)) < 1e-12) return std::nullopt;
  out /= out(2, 2);
  if (!out.allFinite() || std::abs(out.determinant()) < 1e-12) return std::nullopt;
  return out;
}

bool degenerate_quad(const std::vector<Eigen::Vector2d>& p, const std::vector<std::size_t>& s) {
  for (int skip = 0; skip < 4; ++skip) {
    std::vector<std::size_t> t;
    for (int k = 0; k < 4; ++k)
      if (k != skip) t.push_back(s[k]);
    if (collinear(p[t[0]], p[t[1]], p[t[2]])) return true;
  }
  return false;
}

}  // namespace

HomographyResult estimate_homography(const PointMatches& pts, const RansacConfig& cfg) {
  HomographyResult out;
  const std::size_t n = pts.a.size();
  if (pts.b.size() != n) throw std::invalid_argument("point lists differ in length");
  if (n < 4) return out;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> best;
  auto inliers_of = [&](const Eigen::Matrix3d& h) {
    std::vector<std::size_t> in;
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector3d y = h * pts.a[i].homogeneous();
      if (std::abs(y.z()) > 1e-12 && (y.hnormalized() - pts.b[i]).norm() < cfg.inlier_px) in.push_back(i);
    }
    return in;
  };
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto s = sample_indices(n, 4, rng);
    if (degenerate_quad(pts.a, s) || degenerate_quad(pts.b, s)) continue;
    const auto h = fit_homography(pts, s);
    if (!h) continue;
    auto in = inliers_of(*h);
    if (in.size() > best.size()) best = std::move(in);
  }
  if (best.size() < 4) return out;
  const auto refit = fit_homography(pts, best);
  if (!refit) return out;
  out.success = true;
  out.H = *refit;
  out.inliers = inliers_of(*refit).size();
  return out;
}

}  // namespace ogm
