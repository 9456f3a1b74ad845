#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/StdVector>

namespace rvae {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<RowMatrix>;
using ConstRowMatrixMap = Eigen::Map<const RowMatrix>;

/// Storage aligned to Eigen's packet size. Vectorised reductions peel
/// according to the address, so a fixed alignment keeps results bitwise
/// reproducible from run to run.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense row-major array of doubles with an arbitrary shape.
///
/// The autodiff engine only ever works on rank-2 tensors; higher ranks are
/// used at API boundaries (e.g. N x B x D sequences) and are viewed as
/// matrices through `as_matrix`, which folds all leading axes into rows.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::span<const double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor scalar(double value);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix view: cols = last axis, rows = product of the others.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const AlignedVector& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  RowMatrixMap as_matrix() { return {data_.data(), Eigen::Index(rows()), Eigen::Index(cols())}; }
  ConstRowMatrixMap as_matrix() const {
    return {data_.data(), Eigen::Index(rows()), Eigen::Index(cols())};
  }

  Tensor reshaped(std::vector<std::size_t> shape) const;
  void fill(double value);
  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  AlignedVector data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape) noexcept;

}  // namespace rvae
