#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dsts {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major tensor of 64-bit reals. A plain value type: copies are
/// deep, and there is no gradient state here (see Var in autograd.hpp).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor from(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Value of a rank-0 or single-element tensor.
  double item() const;

  /// Row-major offset of a multi-index.
  std::int64_t offset(std::initializer_list<std::int64_t> index) const;
  double& at(std::initializer_list<std::int64_t> index) { return data_[static_cast<std::size_t>(offset(index))]; }
  double at(std::initializer_list<std::int64_t> index) const { return data_[static_cast<std::size_t>(offset(index))]; }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Max |a - b| over elements; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);

// When enabled, every primitive op checks its result for NaN/Inf and throws
// NumericError. Off by default; thread-local.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

}  // namespace dsts
