#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ogm {

class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Immutable dense f64 tensor, row-major. Copies share storage.
class Tensor {
 public:
  Tensor();
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor filled(std::size_t rows, std::size_t cols, double value);
  static Tensor scalar(double value);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  // Rank-2 accessors; rank-1 tensors behave as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return {data_->data(), data_->size()}; }
  const double* ptr() const { return data_->data(); }
  double operator()(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  double item() const;

  std::vector<double> to_vector() const { return *data_; }
  bool bitwise_equal(const Tensor& other) const;

 private:
  std::vector<std::size_t> shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

// Boolean matrix used as an attention / selection mask.
struct BoolMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<unsigned char> bits;

  BoolMatrix() = default;
  BoolMatrix(std::size_t r, std::size_t c, bool value = false)
      : rows(r), cols(c), bits(r * c, value ? 1 : 0) {}

  bool operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits[r * cols + c] = v ? 1 : 0; }
  std::size_t row_count(std::size_t r) const;
  std::size_t count() const;
  BoolMatrix transposed() const;
  bool operator==(const BoolMatrix&) const = default;
};

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace ogm
