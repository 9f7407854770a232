#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bers/errors.hpp"

namespace bers {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense n-dimensional array of doubles, row-major, with an optional
/// gradient buffer. Copies share storage (handle semantics), so a tensor
/// recorded on a tape keeps observing in-place gradient accumulation.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  int64_t dim(size_t axis) const { return impl_->shape.at(axis); }
  size_t rank() const { return impl_->shape.size(); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& vec() { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }

  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Grad buffer, allocated (zero-filled) on first access.
  double* grad();
  const std::vector<double>& grad_vec() const { return impl_->grad; }
  void zero_grad();

  /// Deep copy; grad is not copied.
  Tensor clone() const;

  /// True when both handles refer to the same storage.
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until touched
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

void check_same_shape(const Tensor& a, const Tensor& b, const char* op);
void check_all_finite(const Tensor& t, const char* op);

}  // namespace bers
