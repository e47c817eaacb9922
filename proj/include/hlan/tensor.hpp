#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hlan {

#ifdef HLAN_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

// Error categories. The CLI maps each one onto an exit code.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense row-major array. Rank 0 is a scalar, rank 1 is treated as a 1 x n row
// by the matrix kernels.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = 0);
  Tensor(Shape shape, std::vector<real> data);

  static Tensor scalar(real v) { return Tensor(Shape{}, std::vector<real>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, real fill = 0) {
    return Tensor(Shape{rows, cols}, fill);
  }
  static Tensor from_rows(std::initializer_list<std::initializer_list<real>> rows);
  static Tensor vector(std::initializer_list<real> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-D view of the tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  std::span<real> span() { return data_; }
  std::span<const real> span() const { return data_; }
  std::vector<real>& values() { return data_; }
  const std::vector<real>& values() const { return data_; }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }
  real& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  real at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  real* row(std::size_t r) { return data_.data() + r * cols(); }
  const real* row(std::size_t r) const { return data_.data() + r * cols(); }

  real item() const;
  void fill(real v);
  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool requires_grad = false;

 private:
  Shape shape_;
  std::vector<real> data_;
};

bool operator==(const Tensor& a, const Tensor& b);

}  // namespace hlan
