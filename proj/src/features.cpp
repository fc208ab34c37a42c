#include "ogm/features.hpp"

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "json.hpp"

namespace ogm {

namespace {

Tensor tensor_from_floats(const std::vector<float>& v, std::size_t rows, std::size_t cols) {
  return Tensor::matrix(rows, cols, std::vector<double>(v.begin(), v.end()));
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  void floats(std::vector<float>& out, std::uint64_t count, const char* what) {
    if (count > (bytes_.size() - pos_) / 4) {
      throw FormatError(std::string("truncated file: expected ") + std::to_string(count) +
                            " f32 values for " + what,
                        pos_);
    }
    out.resize(count);
    for (auto& f : out) f = f32(what);
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) throw FormatError(std::string("truncated file while reading ") + what, pos_);
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Tensor FeatureSet::location_tensor() const { return tensor_from_floats(locations, size(), 2); }
Tensor FeatureSet::descriptor_tensor() const { return tensor_from_floats(descriptors, size(), descriptor_dim); }
Tensor FeatureSet::guidance_tensor() const { return tensor_from_floats(guidance, size(), guidance_dim); }

void FeatureSet::validate() const {
  const std::size_t n = size();
  if (locations.size() != 2 * n) throw std::invalid_argument("locations must hold N×2 values");
  if (descriptors.size() != n * descriptor_dim) throw std::invalid_argument("descriptors must hold N×C values");
  if (guidance.size() != n * guidance_dim) throw std::invalid_argument("guidance must hold N×C′ values");
  for (std::size_t i = 0; i < n; ++i) {
    const float x = locations[2 * i], y = locations[2 * i + 1];
    if (!(x >= 0.0f && x < static_cast<float>(width) && y >= 0.0f && y < static_cast<float>(height))) {
      throw std::invalid_argument("keypoint " + std::to_string(i) + " lies outside the " +
                                  std::to_string(width) + "x" + std::to_string(height) + " image");
    }
    if (!(scores[i] >= 0.0f && scores[i] <= 1.0f)) {
      throw std::invalid_argument("score of keypoint " + std::to_string(i) + " outside [0,1]");
    }
  }
  for (float d : descriptors)
    if (!std::isfinite(d)) throw std::invalid_argument("non-finite descriptor entry");
  for (float g : guidance)
    if (!std::isfinite(g)) throw std::invalid_argument("non-finite guidance entry");
}

void validate_ground_truth(const GroundTruth& gt) {
  if (const auto* h = std::get_if<HomographyGT>(&gt)) {
    if (!h->H.allFinite() || std::abs(h->H.determinant()) < 1e-12) {
      throw std::invalid_argument("homography must be finite with non-zero determinant");
    }
  } else if (const auto* a = std::get_if<AffineGT>(&gt)) {
    if (!a->A.allFinite() || std::abs(a->A.leftCols<2>().determinant()) < 1e-12) {
      throw std::invalid_argument("affine transform must be finite and invertible");
    }
  } else {
    const auto& p = std::get<RelativePoseGT>(gt);
    const double ortho = (p.R * p.R.transpose() - Eigen::Matrix3d::Identity()).norm();
    if (ortho > 1e-6 || std::abs(p.R.determinant() - 1.0) > 1e-6) {
      throw std::invalid_argument("relative rotation must be orthonormal with det +1");
    }
    if (!p.t.allFinite() || !p.K_a.allFinite() || !p.K_b.allFinite()) {
      throw std::invalid_argument("pose ground truth must be finite");
    }
  }
}

bool has_analytic_transfer(const GroundTruth& gt) { return !std::holds_alternative<RelativePoseGT>(gt); }

namespace {

Eigen::Matrix3d transfer_matrix(const GroundTruth& gt) {
  if (const auto* h = std::get_if<HomographyGT>(&gt)) return h->H;
  if (const auto* a = std::get_if<AffineGT>(&gt)) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m.topRows<2>() = a->A;
    return m;
  }
  throw std::invalid_argument("pose ground truth has no pixel transfer");
}

std::optional<Eigen::Vector2d> apply(const Eigen::Matrix3d& m, const Eigen::Vector2d& x) {
  const Eigen::Vector3d y = m * x.homogeneous();
  if (std::abs(y.z()) < 1e-12) return std::nullopt;
  return y.hnormalized();
}

}  // namespace

std::optional<Eigen::Vector2d> transfer_a_to_b(const GroundTruth& gt, const Eigen::Vector2d& x) {
  if (!has_analytic_transfer(gt)) return std::nullopt;
  return apply(transfer_matrix(gt), x);
}

std::optional<Eigen::Vector2d> transfer_b_to_a(const GroundTruth& gt, const Eigen::Vector2d& x) {
  if (!has_analytic_transfer(gt)) return std::nullopt;
  return apply(transfer_matrix(gt).inverse(), x);
}

double transfer_error(const GroundTruth& gt, const Eigen::Vector2d& xa, const Eigen::Vector2d& xb) {
  const auto fwd = transfer_a_to_b(gt, xa);
  const auto bwd = transfer_b_to_a(gt, xb);
  if (!fwd || !bwd) return std::numeric_limits<double>::infinity();
  return std::max((*fwd - xb).norm(), (*bwd - xa).norm());
}

std::vector<double> transfer_error_matrix(const GroundTruth& gt, const FeatureSet& a, const FeatureSet& b) {
  const std::size_t n = a.size(), m = b.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<std::optional<Eigen::Vector2d>> fwd(n), bwd(m);
  for (std::size_t i = 0; i < n; ++i) fwd[i] = transfer_a_to_b(gt, a.location(i));
  for (std::size_t j = 0; j < m; ++j) bwd[j] = transfer_b_to_a(gt, b.location(j));
  std::vector<double> err(n * m, inf);
  for (std::size_t i = 0; i < n; ++i) {
    if (!fwd[i]) continue;
    const Eigen::Vector2d xa = a.location(i);
    for (std::size_t j = 0; j < m; ++j) {
      if (!bwd[j]) continue;
      err[i * m + j] = std::max((*fwd[i] - b.location(j)).norm(), (*bwd[j] - xa).norm());
    }
  }
  return err;
}

std::vector<IndexPair> mutual_nearest_within(std::span<const double> err, std::size_t n, std::size_t m,
                                             double threshold) {
  std::vector<std::size_t> row_best(n, m), col_best(m, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double e = err[i * m + j];
      if (row_best[i] == m || e < err[i * m + row_best[i]]) row_best[i] = j;
      if (col_best[j] == n || e < err[col_best[j] * m + j]) col_best[j] = i;
    }
  std::vector<IndexPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = row_best[i];
    if (j < m && col_best[j] == i && err[i * m + j] < threshold) out.emplace_back(i, j);
  }
  return out;
}

Tensor normalize_channels(const Tensor& g) {
  const std::size_t n = g.rows(), c = g.cols();
  std::vector<double> out(n * c);
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += g(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (g(i, j) - mean) * (g(i, j) - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(std::max(var, kChannelVarianceFloor));
    for (std::size_t i = 0; i < n; ++i) out[i * c + j] = (g(i, j) - mean) * inv;
  }
  return Tensor::matrix(n, c, std::move(out));
}

FormatError::FormatError(const std::string& what, std::uint64_t offset)
    : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

std::vector<std::uint8_t> encode_features(const FeatureSet& fs) {
  fs.validate();
  Writer w;
  w.raw(kFeatureMagic, 4);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(fs.size()));
  w.u32(static_cast<std::uint32_t>(fs.descriptor_dim));
  w.u32(static_cast<std::uint32_t>(fs.guidance_dim));
  w.u32(fs.height);
  w.u32(fs.width);
  for (float v : fs.locations) w.f32(v);
  for (float v : fs.scores) w.f32(v);
  for (float v : fs.descriptors) w.f32(v);
  for (float v : fs.guidance) w.f32(v);
  return w.take();
}

FeatureSet decode_features(std::span<const std::uint8_t> bytes, std::string image_id) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kFeatureMagic, 4) != 0) {
    throw FormatError("bad magic: expected \"OGFF\"", 0);
  }
  const std::size_t version_at = r.pos();
  const std::uint32_t version = r.u32("version");
  if (version != kFeatureVersion) {
    throw FormatError("unsupported version " + std::to_string(version) + ", expected 1", version_at);
  }
  FeatureSet fs;
  fs.image_id = std::move(image_id);
  const std::uint64_t n = r.u32("keypoint count");
  fs.descriptor_dim = r.u32("descriptor dim");
  fs.guidance_dim = r.u32("guidance dim");
  fs.height = r.u32("height");
  fs.width = r.u32("width");
  const std::uint64_t expected = 4ull * (n * (3 + fs.descriptor_dim + fs.guidance_dim));
  if (r.remaining() != expected) {
    throw FormatError("count mismatch: header declares " + std::to_string(n) + " keypoints (" +
                          std::to_string(expected) + " payload bytes) but " +
                          std::to_string(r.remaining()) + " bytes follow",
                      r.pos());
  }
  r.floats(fs.locations, 2 * n, "locations");
  r.floats(fs.scores, n, "scores");
  r.floats(fs.descriptors, n * fs.descriptor_dim, "descriptors");
  r.floats(fs.guidance, n * fs.guidance_dim, "guidance");
  return fs;
}

void write_features(const FeatureSet& fs, const std::filesystem::path& path) {
  const auto bytes = encode_features(fs);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

FeatureSet read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_features(bytes, path.stem().string());
}

namespace {

template <typename Derived>
nlohmann::json row_major(const Eigen::MatrixBase<Derived>& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) arr.push_back(m(r, c));
  return arr;
}

template <int R, int C>
Eigen::Matrix<double, R, C> read_matrix(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != R * C) {
    throw std::invalid_argument(std::string("ground truth field \"") + key + "\" must hold " +
                                std::to_string(R * C) + " numbers");
  }
  Eigen::Matrix<double, R, C> m;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) m(r, c) = j[key][r * C + c].get<double>();
  return m;
}

}  // namespace

std::string ground_truth_to_json(const GroundTruth& gt, const std::optional<std::vector<IndexPair>>& matches) {
  nlohmann::ordered_json j;
  if (const auto* h = std::get_if<HomographyGT>(&gt)) {
    j["type"] = "homography";
    j["matrix"] = row_major(h->H);
  } else if (const auto* a = std::get_if<AffineGT>(&gt)) {
    j["type"] = "affine";
    j["matrix"] = row_major(a->A);
  } else {
    const auto& p = std::get<RelativePoseGT>(gt);
    Eigen::Matrix<double, 3, 4> rt;
    rt << p.R, p.t;
    j["type"] = "pose";
    j["matrix"] = row_major(rt);
    j["intrinsics_a"] = row_major(p.K_a);
    j["intrinsics_b"] = row_major(p.K_b);
  }
  if (matches) {
    nlohmann::json arr = nlohmann::json::array();
    for (auto [i, k] : *matches) arr.push_back({i, k});
    j["gt_matches"] = arr;
  }
  return j.dump(1);
}

std::pair<GroundTruth, std::optional<std::vector<IndexPair>>> ground_truth_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const std::string type = j.at("type").get<std::string>();
  GroundTruth gt;
  if (type == "homography") {
    gt = HomographyGT{read_matrix<3, 3>(j, "matrix")};
  } else if (type == "affine") {
    gt = AffineGT{read_matrix<2, 3>(j, "matrix")};
  } else if (type == "pose") {
    const auto rt = read_matrix<3, 4>(j, "matrix");
    RelativePoseGT p;
    p.R = rt.leftCols<3>();
    p.t = rt.col(3);
    p.K_a = read_matrix<3, 3>(j, "intrinsics_a");
    p.K_b = read_matrix<3, 3>(j, "intrinsics_b");
    gt = p;
  } else {
    throw std::invalid_argument("unknown ground truth type \"" + type + "\"");
  }
  validate_ground_truth(gt);
  std::optional<std::vector<IndexPair>> matches;
  if (j.contains("gt_matches")) {
    matches.emplace();
    for (const auto& m : j["gt_matches"]) matches->emplace_back(m.at(0).get<std::size_t>(), m.at(1).get<std::size_t>());
  }
  return {gt, matches};
}

}  // namespace ogm
