#include "dsts/tensor.hpp"

#include <cmath>
#include <sstream>

#include "dsts/error.hpp"

namespace dsts {

namespace {
thread_local bool g_finite_checks = false;
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d <= 0) throw InputError("tensor dimensions must be positive, got " + to_string(shape_));
  }
  data_.assign(static_cast<std::size_t>(numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d <= 0) throw InputError("tensor dimensions must be positive, got " + to_string(shape_));
  }
  if (static_cast<std::int64_t>(data_.size()) != numel(shape_)) {
    throw InputError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
  }
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) throw InputError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

std::int64_t Tensor::offset(std::initializer_list<std::int64_t> index) const {
  if (index.size() != shape_.size()) throw InputError("index rank mismatch for shape " + to_string(shape_));
  std::int64_t off = 0;
  std::size_t i = 0;
  for (auto v : index) {
    off = off * shape_[i] + v;
    ++i;
  }
  return off;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw InputError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw InputError("max_abs_diff shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dsts
