#include "ogm/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace ogm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Sums below this fall back to an exact log-sum-exp over the row or column.
constexpr double kUnderflowGuard = 1e-280;

// exp(z) stabilised per row and per column, so each Sinkhorn half-step needs
// one exp per potential instead of one per entry. Potentials stay in log space.
class StabilizedKernel {
 public:
  StabilizedKernel(const std::vector<double>& z, std::size_t rows, std::size_t cols)
      : z_(z), rows_(rows), cols_(cols), row_max_(rows, kNegInf), col_max_(cols, kNegInf), kr_(z.size()), kc_(z.size()) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        row_max_[i] = std::max(row_max_[i], z[i * cols + j]);
        col_max_[j] = std::max(col_max_[j], z[i * cols + j]);
      }
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        kr_[i * cols + j] = std::exp(z[i * cols + j] - row_max_[i]);
        kc_[i * cols + j] = std::exp(z[i * cols + j] - col_max_[j]);
      }
  }

  // out_i = log Σ_j exp(z_ij + v_j). `scale` receives exp(v_j - max v) and
  // `sums` the stabilised row sums (0 marks a row computed exactly).
  void row_lse(const double* v, double* out, std::vector<double>& scale, std::vector<double>& sums) const {
    const double vmax = *std::max_element(v, v + cols_);
    for (std::size_t j = 0; j < cols_; ++j) scale[j] = std::exp(v[j] - vmax);
    for (std::size_t i = 0; i < rows_; ++i) {
      const double* k = kr_.data() + i * cols_;
      double s = 0.0;
      for (std::size_t j = 0; j < cols_; ++j) s += k[j] * scale[j];
      if (s > kUnderflowGuard) {
        sums[i] = s;
        out[i] = row_max_[i] + vmax + std::log(s);
      } else {
        sums[i] = 0.0;
        out[i] = exact_row(i, v);
      }
    }
  }

  // out_j = log Σ_i exp(z_ij + u_i), same conventions as row_lse.
  void col_lse(const double* u, double* out, std::vector<double>& scale, std::vector<double>& sums) const {
    const double umax = *std::max_element(u, u + rows_);
    for (std::size_t i = 0; i < rows_; ++i) scale[i] = std::exp(u[i] - umax);
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      const double* k = kc_.data() + i * cols_;
      const double a = scale[i];
      for (std::size_t j = 0; j < cols_; ++j) sums[j] += k[j] * a;
    }
    for (std::size_t j = 0; j < cols_; ++j) {
      if (sums[j] > kUnderflowGuard) {
        out[j] = col_max_[j] + umax + std::log(sums[j]);
      } else {
        sums[j] = 0.0;
        out[j] = exact_col(j, u);
      }
    }
  }

  double kr(std::size_t i, std::size_t j) const { return kr_[i * cols_ + j]; }
  double kc(std::size_t i, std::size_t j) const { return kc_[i * cols_ + j]; }
  const double* kr_row(std::size_t i) const { return kr_.data() + i * cols_; }
  const double* kc_row(std::size_t i) const { return kc_.data() + i * cols_; }

 private:
  double exact_row(std::size_t i, const double* v) const {
    const double* zi = z_.data() + i * cols_;
    double mx = kNegInf;
    for (std::size_t j = 0; j < cols_; ++j) mx = std::max(mx, zi[j] + v[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols_; ++j) s += std::exp(zi[j] + v[j] - mx);
    return mx + std::log(s);
  }
  double exact_col(std::size_t j, const double* u) const {
    double mx = kNegInf;
    for (std::size_t i = 0; i < rows_; ++i) mx = std::max(mx, z_[i * cols_ + j] + u[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) s += std::exp(z_[i * cols_ + j] + u[i] - mx);
    return mx + std::log(s);
  }

  const std::vector<double>& z_;
  std::size_t rows_, cols_;
  std::vector<double> row_max_, col_max_;
  std::vector<double> kr_, kc_;
};

}  // namespace

Var similarity(Var d_a, Var d_b) {
  if (d_a.cols() != d_b.cols()) throw DimensionError("similarity: descriptor widths differ");
  return ops::matmul_nt(d_a, d_b);
}

Var log_sinkhorn(Var scores, Var dustbin, const SinkhornConfig& cfg) {
  if (cfg.iterations == 0) throw std::invalid_argument("sinkhorn needs at least one iteration");
  if (!(cfg.temperature > 0.0)) throw std::invalid_argument("sinkhorn temperature must be positive");
  if (dustbin.value().size() != 1) throw DimensionError("dustbin score must be a single value");
  const Tensor& s = scores.value();
  const std::size_t n = s.rows(), m = s.cols();
  const std::size_t rows = n + 1, cols = m + 1, iters = cfg.iterations;
  const double inv_t = 1.0 / cfg.temperature;
  const double alpha = dustbin.value().data()[0] * inv_t;

  std::vector<double> z(rows * cols, alpha);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) z[i * cols + j] = s(i, j) * inv_t;

  const double norm = -std::log(static_cast<double>(n + m));
  std::vector<double> log_mu(rows, norm), log_nu(cols, norm);
  log_mu[n] = std::log(static_cast<double>(m)) + norm;
  log_nu[m] = std::log(static_cast<double>(n)) + norm;
  // Empty sides have no mass to move; keep the dustbin marginal finite.
  if (m == 0) log_mu[n] = norm;
  if (n == 0) log_nu[m] = norm;

  // us[t], vs[t] for t = 0..iters; index 0 is the zero start.
  const StabilizedKernel kernel(z, rows, cols);
  std::vector<double> us((iters + 1) * rows, 0.0), vs((iters + 1) * cols, 0.0);
  std::vector<double> lse_r(rows), lse_c(cols), row_scale(cols), col_scale(rows), row_sums(rows), col_sums(cols);
  for (std::size_t t = 1; t <= iters; ++t) {
    kernel.row_lse(vs.data() + (t - 1) * cols, lse_r.data(), row_scale, row_sums);
    for (std::size_t i = 0; i < rows; ++i) us[t * rows + i] = log_mu[i] - lse_r[i];
    kernel.col_lse(us.data() + t * rows, lse_c.data(), col_scale, col_sums);
    for (std::size_t j = 0; j < cols; ++j) vs[t * cols + j] = log_nu[j] - lse_c[j];
  }

  const double* u = us.data() + iters * rows;
  const double* v = vs.data() + iters * cols;
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = z[i * cols + j] + u[i] + v[j] - norm;

  auto backward = [scores, dustbin, z = std::move(z), us = std::move(us), vs = std::move(vs),
                   log_mu = std::move(log_mu), log_nu = std::move(log_nu), n, m, rows, cols, iters,
                   inv_t](Tape& tape, std::span<const double> g) {
    const StabilizedKernel k(z, rows, cols);
    std::vector<double> dz(g.begin(), g.end());
    std::vector<double> du(rows, 0.0), dv(cols, 0.0), dv_prev(cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        du[i] += g[i * cols + j];
        dv[j] += g[i * cols + j];
      }
    std::vector<double> lse(std::max(rows, cols)), row_scale(cols), col_scale(rows), row_sums(rows), col_sums(cols);
    std::vector<double> c(std::max(rows, cols));
    for (std::size_t t = iters; t >= 1; --t) {
      const double* ut = us.data() + t * rows;
      const double* vt = vs.data() + t * cols;
      const double* vp = vs.data() + (t - 1) * cols;
      // v_t = b - LSE_i(z + u_t); weights W_ij = exp(z_ij + u_ti + v_tj - b_j), each column sums to 1.
      k.col_lse(ut, lse.data(), col_scale, col_sums);
      for (std::size_t j = 0; j < cols; ++j) c[j] = col_sums[j] > 0.0 ? dv[j] / col_sums[j] : 0.0;
      for (std::size_t i = 0; i < rows; ++i) {
        const double* kc = k.kc_row(i);
        double* dzi = dz.data() + i * cols;
        const double a = col_scale[i];
        double acc = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          const double w = kc[j] * a * c[j];
          dzi[j] -= w;
          acc += w;
        }
        du[i] -= acc;
      }
      for (std::size_t j = 0; j < cols; ++j) {
        if (col_sums[j] > 0.0) continue;
        for (std::size_t i = 0; i < rows; ++i) {
          const double w = dv[j] * std::exp(z[i * cols + j] + ut[i] + vt[j] - log_nu[j]);
          dz[i * cols + j] -= w;
          du[i] -= w;
        }
      }
      // u_t = a - LSE_j(z + v_{t-1}); weights W'_ij = exp(z_ij + v_{t-1,j} + u_ti - a_i), each row sums to 1.
      k.row_lse(vp, lse.data(), row_scale, row_sums);
      std::fill(dv_prev.begin(), dv_prev.end(), 0.0);
      for (std::size_t i = 0; i < rows; ++i) {
        double* dzi = dz.data() + i * cols;
        if (row_sums[i] > 0.0) {
          const double* kr = k.kr_row(i);
          const double f = du[i] / row_sums[i];
          for (std::size_t j = 0; j < cols; ++j) {
            const double w = kr[j] * row_scale[j] * f;
            dzi[j] -= w;
            dv_prev[j] -= w;
          }
        } else {
          const double cu = ut[i] - log_mu[i];
          for (std::size_t j = 0; j < cols; ++j) {
            const double w = du[i] * std::exp(z[i * cols + j] + vp[j] + cu);
            dzi[j] -= w;
            dv_prev[j] -= w;
          }
        }
      }
      dv.swap(dv_prev);
      std::fill(du.begin(), du.end(), 0.0);
    }
    if (double* gs = tape.grad_ptr(scores)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gs[i * m + j] += dz[i * cols + j] * inv_t;
    }
    if (double* gd = tape.grad_ptr(dustbin)) {
      double total = 0.0;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
          if (i == n || j == m) total += dz[i * cols + j];
      gd[0] += total * inv_t;
    }
  };
  return scores.tape->record(Tensor::matrix(rows, cols, std::move(out)), {scores, dustbin}, std::move(backward));
}

AssignmentMatrix to_assignment(const Tensor& log_probs, std::size_t iterations) {
  std::vector<double> p(log_probs.size());
  const auto src = log_probs.data();
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::exp(src[k]);
  return {Tensor::matrix(log_probs.rows(), log_probs.cols(), std::move(p)), iterations};
}

MatchList extract_matches(const AssignmentMatrix& assign, double min_confidence) {
  const std::size_t n = assign.n(), m = assign.m();
  const Tensor& p = assign.probs;
  MatchList out;
  out.threshold = min_confidence;
  if (n == 0 || m == 0) return out;
  std::vector<std::size_t> row_best(n, 0), col_best(m, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 1; j < m; ++j)
      if (p(i, j) > p(i, row_best[i])) row_best[i] = j;
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 1; i < n; ++i)
      if (p(i, j) > p(col_best[j], j)) col_best[j] = i;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = row_best[i];
    if (col_best[j] == i && p(i, j) >= min_confidence) out.pairs.push_back({i, j, p(i, j)});
  }
  return out;
}

MatchList mutual_nearest_neighbors(const Tensor& desc_a, const Tensor& desc_b) {
  if (desc_a.cols() != desc_b.cols()) throw DimensionError("descriptor widths differ");
  const std::size_t n = desc_a.rows(), m = desc_b.rows(), c = desc_a.cols();
  MatchList out;
  out.threshold = -std::numeric_limits<double>::infinity();
  if (n == 0 || m == 0) return out;
  std::vector<double> s(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) s[i * m + j] = kernels::dot(desc_a.ptr() + i * c, desc_b.ptr() + j * c, c);
  std::vector<std::size_t> row_best(n, 0), col_best(m, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 1; j < m; ++j)
      if (s[i * m + j] > s[i * m + row_best[i]]) row_best[i] = j;
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 1; i < n; ++i)
      if (s[i * m + j] > s[col_best[j] * m + j]) col_best[j] = i;
  for (std::size_t i = 0; i < n; ++i)
    if (col_best[row_best[i]] == i) out.pairs.push_back({i, row_best[i], s[i * m + row_best[i]]});
  return out;
}

std::string matches_to_json(const MatchList& matches, const FeatureSet& a, const FeatureSet& b) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Match& mt : matches.pairs) {
    if (mt.i >= a.size() || mt.j >= b.size()) throw std::out_of_range("match index outside feature set");
    const auto xa = a.location(mt.i), xb = b.location(mt.j);
    arr.push_back({{"i", mt.i}, {"j", mt.j}, {"xy_a", {xa.x(), xa.y()}}, {"xy_b", {xb.x(), xb.y()}},
                   {"conf", mt.confidence}});
  }
  return arr.dump(1) + "\n";
}

MatchList matches_from_json(const std::string& text) {
  const auto arr = nlohmann::json::parse(text);
  if (!arr.is_array()) throw std::runtime_error("match file must hold a JSON array");
  MatchList out;
  for (const auto& e : arr) out.pairs.push_back({e.at("i").get<std::size_t>(), e.at("j").get<std::size_t>(), e.at("conf").get<double>()});
  return out;
}

}  // namespace ogm
