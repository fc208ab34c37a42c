#include "ogm/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ogm/autograd.hpp"

namespace ogm {

namespace {

void check_ratio(double keep_ratio) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) {
    throw std::invalid_argument("keep_ratio must lie in (0, 1], got " + std::to_string(keep_ratio));
  }
}

Tensor gram(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw DimensionError("guidance widths differ");
  std::vector<double> out(a.rows() * b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      out[i * b.rows() + j] = kernels::dot(a.ptr() + i * a.cols(), b.ptr() + j * b.cols(), a.cols());
  return Tensor::matrix(a.rows(), b.rows(), std::move(out));
}

Tensor transpose(const Tensor& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out[j * t.rows() + i] = t(i, j);
  return Tensor::matrix(t.cols(), t.rows(), std::move(out));
}

}  // namespace

std::size_t selected_count(double keep_ratio, std::size_t m) {
  check_ratio(keep_ratio);
  const auto k = static_cast<std::size_t>(std::floor(keep_ratio * static_cast<double>(m) + 1e-9));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(m, 1));
}

BoolMatrix top_k_rows(const Tensor& similarity, double keep_ratio) {
  const std::size_t n = similarity.rows(), m = similarity.cols();
  BoolMatrix mask(n, m, false);
  if (m == 0) return mask;
  const std::size_t k = selected_count(keep_ratio, m);
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = similarity.ptr() + i * m;
    std::iota(order.begin(), order.end(), 0);
    std::nth_element(order.begin(), order.begin() + static_cast<long>(k - 1), order.end(),
                     [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    for (std::size_t t = 0; t < k; ++t) mask.set(i, order[t], true);
  }
  return mask;
}

InterMasks build_inter_masks(const Tensor& g_a, const Tensor& g_b, double keep_ratio) {
  check_ratio(keep_ratio);
  if (g_a.rows() == 0 || g_b.rows() == 0) throw std::invalid_argument("empty keypoint set");
  const Tensor sim = gram(g_a, g_b);
  InterMasks out;
  out.b_to_a = {top_k_rows(sim, keep_ratio), keep_ratio};
  out.a_to_b = {top_k_rows(transpose(sim), keep_ratio), keep_ratio};
  return out;
}

GuidanceMask build_intra_mask(const Tensor& g, double keep_ratio) {
  check_ratio(keep_ratio);
  if (g.rows() == 0) throw std::invalid_argument("empty keypoint set");
  return {top_k_rows(gram(g, g), keep_ratio), keep_ratio};
}

}  // namespace ogm
