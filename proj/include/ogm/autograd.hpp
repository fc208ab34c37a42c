#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "ogm/tensor.hpp"

namespace ogm {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode recorder. Nodes are appended in evaluation order, so reverse
// id order is a valid reverse topological order. Not thread-safe; use one
// tape per concurrent forward/backward pass.
class Tape {
 public:
  // Receives the gradient of the node's output; accumulates into parents via grad_ptr().
  using Backward = std::function<void(Tape&, std::span<const double>)>;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var record(Tensor value, std::span<const Var> parents, Backward backward);
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1; root must hold a single element.
  void backward(Var root);
  // Gradient buffer of a node, or nullptr if it does not require grad.
  double* grad_ptr(Var v);
  // Gradient after backward(); zeros when the node received none.
  std::vector<double> grad(Var v) const;
  Tensor grad_tensor(Var v) const;

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    Backward backward;
    std::vector<double> grad;
  };
  std::vector<Node> nodes_;
};

namespace ops {

Var matmul(Var a, Var b);
// a · bᵀ with a fixed-order dot-product kernel.
Var matmul_nt(Var a, Var b);
// a · bᵀ evaluated only where mask is true; other entries are 0 and carry no gradient.
// Returns the number of dot products evaluated through `evaluated`.
Var matmul_nt_masked(Var a, Var b, const BoolMatrix& mask, std::size_t* evaluated = nullptr);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// a (m×n) + row (1×n) broadcast over rows.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
Var relu(Var a);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var sum(Var a);
// 1×k vector of a(r, c) for each index pair.
Var gather(Var a, std::span<const std::pair<std::size_t, std::size_t>> index);
Var linear(Var x, Var weight, Var bias);

struct SoftmaxInfo {
  std::vector<std::size_t> fully_masked_rows;
};
// Row-wise softmax. Masked entries are exactly 0; rows with no unmasked entry
// return all zeros and are reported in `info`.
Var softmax_rows(Var x, const BoolMatrix* mask = nullptr, SoftmaxInfo* info = nullptr);

}  // namespace ops

// Plain (non-recorded) kernels shared by ops and by callers needing identical arithmetic.
namespace kernels {
double dot(const double* a, const double* b, std::size_t n);
// Writes the column indices of the set bits of one mask row to idx (room for n); returns how many.
std::size_t set_columns(const unsigned char* bits, std::size_t n, std::uint32_t* idx);
void softmax_row(const double* x, const unsigned char* mask, std::size_t n, double* out);
}  // namespace kernels

}  // namespace ogm
