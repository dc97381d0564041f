#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gradnet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Storage is shared between copies and cloned on the first write through
/// mutable_data(), so passing tensors by value is cheap and a tensor seen by
/// one holder never changes under another.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return storage_ ? storage_->size() : 0; }

  std::span<const double> data() const;
  std::span<double> mutable_data();

  double operator[](std::size_t i) const { return (*storage_)[i]; }
  double& at_mut(std::size_t i) { return mutable_data()[i]; }

  /// Value of a single-element tensor.
  double item() const;

  /// Same data, new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  /// Deep copy with storage not shared with this tensor.
  Tensor clone() const;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> storage_;
};

/// Tensor filled with ones, zeros, or a copy of `like`'s shape.
Tensor ones(const Shape& shape);
Tensor zeros_like(const Tensor& like);

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace gradnet
