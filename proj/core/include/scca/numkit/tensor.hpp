#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace scca::nk {

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage for tensor buffers.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float64 array. The data length always equals the product of
// the shape; every dimension is positive.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, v); }
  static Tensor from(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access, bounds checked against the shape.
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  // Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double, AlignedAllocator<double>> data_;
};

// Throws std::runtime_error naming `what` when any element is NaN or Inf.
void require_finite(const Tensor& t, const char* what);

}  // namespace scca::nk
