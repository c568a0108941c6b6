#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace jsa {

/// Row-major n-dimensional array of doubles.
///
/// Matrices are the common case: a batch of B vectors of width W is a
/// DenseArray of shape {B, W}, and row(i) views one of them.
class DenseArray {
 public:
  DenseArray() = default;
  explicit DenseArray(std::vector<std::size_t> shape, double fill = 0.0);
  DenseArray(std::vector<std::size_t> shape, std::vector<double> data);

  static DenseArray vector(std::initializer_list<double> values);
  static DenseArray vector(std::vector<double> values);
  static DenseArray matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix view: rank-1 arrays are a single row.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols(), cols()};
  }

  void reshape(std::vector<std::size_t> shape);
  void fill(double v);
  bool all_finite() const noexcept;

  friend bool operator==(const DenseArray&, const DenseArray&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Throws numeric_error naming `what` if any entry is NaN or infinite.
void require_finite(const DenseArray& a, const char* what);
void require_finite(std::span<const double> a, const char* what);

/// [A | B] along columns; both must have the same number of rows.
DenseArray hcat(const DenseArray& a, const DenseArray& b);

/// Rows of `a` selected by index, in order.
DenseArray gather_rows(const DenseArray& a, std::span<const std::size_t> index);

/// Each row of `a` repeated `times` times consecutively.
DenseArray repeat_rows(const DenseArray& a, std::size_t times);

/// Stable log(sum(exp(v))). Returns -inf for an empty span.
double log_sum_exp(std::span<const double> v);

}  // namespace jsa
