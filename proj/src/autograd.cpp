#include "ogm/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace ogm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Tensor& t) { return ConstMap(t.ptr(), t.rows(), t.cols()); }

Tensor from_eigen(const RowMat& m) {
  return Tensor::matrix(m.rows(), m.cols(), std::vector<double>(m.data(), m.data() + m.size()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), requires_grad, {}, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[p.id].requires_grad;
  nodes_.push_back(Node{std::move(value), needs, needs ? std::move(backward) : Backward{}, {}});
  return Var{this, nodes_.size() - 1};
}

double* Tape::grad_ptr(Var v) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad.data();
}

void Tape::backward(Var root) {
  if (nodes_[root.id].value.size() != 1) {
    throw DimensionError("backward() root must be a scalar, got " +
                         shape_string(nodes_[root.id].value.shape()));
  }
  if (!nodes_[root.id].requires_grad) return;
  grad_ptr(root)[0] += 1.0;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    // Moved out so the callback may reallocate other nodes' buffers.
    std::vector<double> g = std::move(n.grad);
    n.backward(*this, g);
    n.grad = std::move(g);
  }
}

std::vector<double> Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
  return n.grad;
}

Tensor Tape::grad_tensor(Var v) const { return Tensor(nodes_[v.id].value.shape(), grad(v)); }

namespace kernels {

double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

std::size_t set_columns(const unsigned char* bits, std::size_t n, std::uint32_t* idx) {
  std::size_t k = 0;
  for (std::size_t j = 0; j < n; ++j) {
    idx[k] = static_cast<std::uint32_t>(j);
    k += bits[j] != 0;
  }
  return k;
}

void softmax_row(const double* x, const unsigned char* mask, std::size_t n, double* out) {
  if (!mask) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(x[j] - mx);
      total += out[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
    return;
  }
  // Same arithmetic over the kept columns only, so an all-true mask is bitwise the dense result.
  thread_local std::vector<std::uint32_t> idx;
  idx.resize(n);
  const std::size_t k = set_columns(mask, n, idx.data());
  std::fill(out, out + n, 0.0);
  if (k == 0) return;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < k; ++t) mx = std::max(mx, x[idx[t]]);
  double total = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    const double e = std::exp(x[idx[t]] - mx);
    out[idx[t]] = e;
    total += e;
  }
  const double inv = 1.0 / total;
  for (std::size_t t = 0; t < k; ++t) out[idx[t]] *= inv;
}

}  // namespace kernels

namespace ops {

Var matmul(Var a, Var b) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.cols() != tb.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(ta.shape()) + " · " +
                         shape_string(tb.shape()));
  }
  RowMat out = view(ta) * view(tb);
  Tape& tape = *a.tape;
  return tape.record(from_eigen(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    ConstMap gm(g.data(), ta.rows(), tb.cols());
    if (double* ga = t.grad_ptr(a)) MutMap(ga, ta.rows(), ta.cols()).noalias() += gm * view(tb).transpose();
    if (double* gb = t.grad_ptr(b)) MutMap(gb, tb.rows(), tb.cols()).noalias() += view(ta).transpose() * gm;
  });
}

namespace {

Var matmul_nt_impl(Var a, Var b, const BoolMatrix* mask, std::size_t* evaluated) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.cols() != tb.cols()) {
    throw DimensionError("matmul_nt: widths differ " + shape_string(ta.shape()) + " vs " +
                         shape_string(tb.shape()));
  }
  const std::size_t n = ta.rows(), m = tb.rows(), k = ta.cols();
  if (mask && (mask->rows != n || mask->cols != m)) {
    throw DimensionError("matmul_nt: mask shape does not match output");
  }
  std::vector<double> out(n * m, 0.0);
  std::size_t count = 0;
  std::vector<std::uint32_t> idx(mask ? m : 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = ta.ptr() + i * k;
    if (!mask) {
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] = kernels::dot(ai, tb.ptr() + j * k, k);
      count += m;
      continue;
    }
    const std::size_t kept = kernels::set_columns(mask->bits.data() + i * m, m, idx.data());
    for (std::size_t t = 0; t < kept; ++t) out[i * m + idx[t]] = kernels::dot(ai, tb.ptr() + idx[t] * k, k);
    count += kept;
  }
  if (evaluated) *evaluated = count;
  std::shared_ptr<const BoolMatrix> kept = mask ? std::make_shared<const BoolMatrix>(*mask) : nullptr;
  return a.tape->record(Tensor::matrix(n, m, std::move(out)), {a, b},
                        [a, b, kept](Tape& t, std::span<const double> g) {
                          const Tensor& ta = a.value();
                          const Tensor& tb = b.value();
                          RowMat gm = ConstMap(g.data(), ta.rows(), tb.rows());
                          if (kept) {
                            for (std::size_t i = 0; i < kept->bits.size(); ++i)
                              if (!kept->bits[i]) gm.data()[i] = 0.0;
                          }
                          if (double* ga = t.grad_ptr(a))
                            MutMap(ga, ta.rows(), ta.cols()).noalias() += gm * view(tb);
                          if (double* gb = t.grad_ptr(b))
                            MutMap(gb, tb.rows(), tb.cols()).noalias() += gm.transpose() * view(ta);
                        });
}

}  // namespace

Var matmul_nt(Var a, Var b) { return matmul_nt_impl(a, b, nullptr, nullptr); }

Var matmul_nt_masked(Var a, Var b, const BoolMatrix& mask, std::size_t* evaluated) {
  return matmul_nt_impl(a, b, &mask, evaluated);
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  const Tensor& ta = a.value();
  std::vector<double> out(ta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta.data()[i] + b.value().data()[i];
  return a.tape->record(Tensor(ta.shape(), std::move(out)), {a, b},
                        [a, b](Tape& t, std::span<const double> g) {
                          for (Var p : {a, b})
                            if (double* gp = t.grad_ptr(p))
                              for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
                        });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  const Tensor& ta = a.value();
  std::vector<double> out(ta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta.data()[i] - b.value().data()[i];
  return a.tape->record(Tensor(ta.shape(), std::move(out)), {a, b},
                        [a, b](Tape& t, std::span<const double> g) {
                          if (double* ga = t.grad_ptr(a))
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          if (double* gb = t.grad_ptr(b))
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                        });
}

Var add_row(Var a, Var row) {
  const Tensor& ta = a.value();
  const Tensor& tr = row.value();
  if (tr.size() != ta.cols()) {
    throw DimensionError("add_row: row of " + std::to_string(tr.size()) + " entries vs " +
                         std::to_string(ta.cols()) + " columns");
  }
  const std::size_t m = ta.rows(), n = ta.cols();
  std::vector<double> out(ta.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = ta.ptr()[i * n + j] + tr.ptr()[j];
  return a.tape->record(Tensor::matrix(m, n, std::move(out)), {a, row},
                        [a, row, m, n](Tape& t, std::span<const double> g) {
                          if (double* ga = t.grad_ptr(a))
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          if (double* gr = t.grad_ptr(row))
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
                        });
}

Var scale(Var a, double s) {
  const Tensor& ta = a.value();
  std::vector<double> out(ta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta.data()[i] * s;
  return a.tape->record(Tensor(ta.shape(), std::move(out)), {a},
                        [a, s](Tape& t, std::span<const double> g) {
                          if (double* ga = t.grad_ptr(a))
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                        });
}

Var relu(Var a) {
  const Tensor& ta = a.value();
  std::vector<double> out(ta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta.data()[i] > 0.0 ? ta.data()[i] : 0.0;
  return a.tape->record(Tensor(ta.shape(), std::move(out)), {a},
                        [a](Tape& t, std::span<const double> g) {
                          if (double* ga = t.grad_ptr(a)) {
                            const auto x = a.value().data();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              if (x[i] > 0.0) ga[i] += g[i];
                          }
                        });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& tp = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(tp.ptr() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  std::vector<Var> kept(parts.begin(), parts.end());
  return parts[0].tape->record(Tensor::matrix(m, total, std::move(out)), parts,
                               [kept, widths, m, total](Tape& t, std::span<const double> g) {
                                 std::size_t off = 0;
                                 for (std::size_t k = 0; k < kept.size(); ++k) {
                                   if (double* gp = t.grad_ptr(kept[k]))
                                     for (std::size_t i = 0; i < m; ++i)
                                       for (std::size_t j = 0; j < widths[k]; ++j)
                                         gp[i * widths[k] + j] += g[i * total + off + j];
                                   off += widths[k];
                                 }
                               });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& ta = a.value();
  const std::size_t m = ta.rows(), n = ta.cols();
  if (start + count > n) throw DimensionError("slice_cols: range exceeds width");
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(ta.ptr() + i * n + start, count, out.data() + i * count);
  return a.tape->record(Tensor::matrix(m, count, std::move(out)), {a},
                        [a, start, count, m, n](Tape& t, std::span<const double> g) {
                          if (double* ga = t.grad_ptr(a))
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < count; ++j) ga[i * n + start + j] += g[i * count + j];
                        });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.tape->record(Tensor::scalar(s), {a}, [a](Tape& t, std::span<const double> g) {
    if (double* ga = t.grad_ptr(a))
      for (std::size_t i = 0; i < a.value().size(); ++i) ga[i] += g[0];
  });
}

Var gather(Var a, std::span<const std::pair<std::size_t, std::size_t>> index) {
  const Tensor& ta = a.value();
  std::vector<double> out;
  out.reserve(index.size());
  for (auto [r, c] : index) {
    if (r >= ta.rows() || c >= ta.cols()) throw DimensionError("gather: index out of range");
    out.push_back(ta(r, c));
  }
  std::vector<std::pair<std::size_t, std::size_t>> kept(index.begin(), index.end());
  const std::size_t k = out.size();
  return a.tape->record(Tensor::matrix(1, k, std::move(out)), {a},
                        [a, kept](Tape& t, std::span<const double> g) {
                          if (double* ga = t.grad_ptr(a)) {
                            const std::size_t n = a.value().cols();
                            for (std::size_t k = 0; k < kept.size(); ++k)
                              ga[kept[k].first * n + kept[k].second] += g[k];
                          }
                        });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var softmax_rows(Var x, const BoolMatrix* mask, SoftmaxInfo* info) {
  const Tensor& tx = x.value();
  const std::size_t m = tx.rows(), n = tx.cols();
  if (mask && (mask->rows != m || mask->cols != n)) {
    throw DimensionError("softmax_rows: mask shape does not match input");
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const unsigned char* row_mask = mask ? mask->bits.data() + i * n : nullptr;
    kernels::softmax_row(tx.ptr() + i * n, row_mask, n, out.data() + i * n);
    if (info && row_mask && std::none_of(row_mask, row_mask + n, [](unsigned char b) { return b; })) {
      info->fully_masked_rows.push_back(i);
    }
  }
  Tensor y = Tensor::matrix(m, n, std::move(out));
  return x.tape->record(y, {x}, [x, y, m, n](Tape& t, std::span<const double> g) {
    double* gx = t.grad_ptr(x);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      const double* yi = y.ptr() + i * n;
      const double* gi = g.data() + i * n;
      double inner = 0.0;
      for (std::size_t j = 0; j < n; ++j) inner += yi[j] * gi[j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += yi[j] * (gi[j] - inner);
    }
  });
}

}  // namespace ops

}  // namespace ogm
