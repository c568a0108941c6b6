#include "jsa/dense_array.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include "jsa/errors.hpp"

namespace jsa {

namespace {

std::size_t extent_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

DenseArray::DenseArray(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(extent_product(shape_), fill) {}

DenseArray::DenseArray(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (extent_product(shape_) != data_.size()) {
    throw shape_error("DenseArray: shape holds " + std::to_string(extent_product(shape_)) +
                      " values but " + std::to_string(data_.size()) + " were given");
  }
}

DenseArray DenseArray::vector(std::initializer_list<double> values) {
  return DenseArray({values.size()}, std::vector<double>(values));
}

DenseArray DenseArray::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return DenseArray({n}, std::move(values));
}

DenseArray DenseArray::matrix(std::size_t rows, std::size_t cols, double fill) {
  return DenseArray({rows, cols}, fill);
}

std::size_t DenseArray::rows() const noexcept {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t DenseArray::cols() const noexcept {
  if (shape_.empty()) return 0;
  if (shape_.size() == 1) return shape_[0];
  return shape_[0] == 0 ? 0 : data_.size() / shape_[0];
}

void DenseArray::reshape(std::vector<std::size_t> shape) {
  if (extent_product(shape) != data_.size()) throw shape_error("DenseArray::reshape: size mismatch");
  shape_ = std::move(shape);
}

void DenseArray::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool DenseArray::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const DenseArray& a, const char* what) { require_finite(a.values(), what); }

void require_finite(std::span<const double> a, const char* what) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i])) {
      throw numeric_error(std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

DenseArray hcat(const DenseArray& a, const DenseArray& b) {
  if (a.rows() != b.rows()) throw shape_error("hcat: row counts differ");
  const std::size_t rows = a.rows(), ca = a.cols(), cb = b.cols();
  DenseArray out = DenseArray::matrix(rows, ca + cb);
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = out.row(r);
    std::copy_n(a.data() + r * ca, ca, dst.begin());
    std::copy_n(b.data() + r * cb, cb, dst.begin() + ca);
  }
  return out;
}

DenseArray gather_rows(const DenseArray& a, std::span<const std::size_t> index) {
  const std::size_t cols = a.cols();
  DenseArray out = DenseArray::matrix(index.size(), cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.rows()) throw shape_error("gather_rows: index out of range");
    std::copy_n(a.data() + index[i] * cols, cols, out.data() + i * cols);
  }
  return out;
}

DenseArray repeat_rows(const DenseArray& a, std::size_t times) {
  const std::size_t rows = a.rows(), cols = a.cols();
  DenseArray out = DenseArray::matrix(rows * times, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < times; ++k) {
      std::copy_n(a.data() + r * cols, cols, out.data() + (r * times + k) * cols);
    }
  }
  return out;
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace jsa
