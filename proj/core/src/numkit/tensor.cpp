#include "scca/numkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace scca::nk {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  validate_shape(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw std::out_of_range("tensor index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("tensor index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw std::runtime_error(std::string("non-finite value produced by ") + what);
}

}  // namespace scca::nk
