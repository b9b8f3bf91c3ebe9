#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "newscap/errors.hpp"

namespace newscap {

/// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
///
/// Invariants enforced at construction and at op boundaries:
///   - product(shape) == data.size()
///   - grad, when present, has the same length as data
///   - every stored value is finite
///
/// Dimensions of size zero are permitted so that empty context domains
/// (no faces, no objects) can be represented as 0-row matrices.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double value);
  /// Rank-1 tensor from a value list.
  static Tensor vector(std::vector<double> data);
  /// Rank-2 tensor from flat row-major data.
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  const std::vector<std::size_t>& shape() const { return shape_; }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::span<const double> row_span(std::size_t r) const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);

  /// Gradient buffer; allocated zero-filled on first access when
  /// requires_grad is set.
  std::vector<double>& grad();
  const std::optional<std::vector<double>>& maybe_grad() const { return grad_; }
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  /// Throws NumericError if any element is non-finite. `what` names the
  /// operation or file the tensor came from.
  void ensure_finite(const std::string& what) const;

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

/// Throws NumericError naming `what` if any element of `values` is non-finite.
void ensure_all_finite(std::span<const double> values, const std::string& what);

}  // namespace newscap
