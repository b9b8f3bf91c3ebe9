#include "newscap/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace newscap {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw DimensionError("tensor: shape " + shape_str() + " does not match data length " +
                         std::to_string(data_.size()));
  }
  ensure_finite("tensor construction");
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.data_) v = value;
  t.ensure_finite("tensor full");
  return t;
}

Tensor Tensor::vector(std::vector<double> data) {
  std::size_t n = data.size();
  return Tensor({n}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(shape_.size()));
  }
  return shape_[axis];
}

std::span<const double> Tensor::row_span(std::size_t r) const {
  std::size_t c = cols();
  return std::span<const double>(data_.data() + r * c, c);
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (!on) grad_.reset();
}

std::vector<double>& Tensor::grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  if (grad_->size() != data_.size()) {
    throw DimensionError("tensor: grad length " + std::to_string(grad_->size()) +
                         " does not match data length " + std::to_string(data_.size()));
  }
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) {
  auto& buf = grad();
  if (g.size() != buf.size()) {
    throw DimensionError("tensor: gradient length " + std::to_string(g.size()) +
                         " does not match parameter length " + std::to_string(buf.size()));
  }
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

void Tensor::ensure_finite(const std::string& what) const {
  ensure_all_finite(data_, what);
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

void ensure_all_finite(std::span<const double> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

}  // namespace newscap
