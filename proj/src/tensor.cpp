#include "caeav/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "caeav/errors.hpp"

namespace caeav {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

static void check_extents(const Shape& s) {
  for (auto d : s)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(s));
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  check_extents(shape);
  data.assign(shape_numel(shape), fill);
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  check_extents(shape);
  if (shape_numel(shape) != data.size())
    throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                         " values");
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  return shape[axis];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
  return shape == other.shape &&
         (data.empty() || std::memcmp(data.data(), other.data.data(), data.size() * sizeof(double)) == 0);
}

Parameter::Parameter(std::string n, Tensor v, bool is_frozen)
    : name(std::move(n)), value(std::move(v)), grad(value.shape, 0.0), frozen(is_frozen) {}

void Parameter::zero_grad() {
  if (grad.shape != value.shape) grad = Tensor(value.shape, 0.0);
  std::fill(grad.data.begin(), grad.data.end(), 0.0);
}

}  // namespace caeav
