#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace advnav {

/// Error raised for inconsistent tensor shapes. The message names the
/// offending tape entry when one is involved.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array with an optional gradient buffer of the same shape.
///
/// Every tensor used by the models is rank 2; a vector is a 1 x n row.
template <class T>
struct BasicTensor {
  std::vector<std::size_t> shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty when absent

  BasicTensor() = default;
  BasicTensor(std::size_t rows, std::size_t cols, T fill = T{0})
      : shape{rows, cols}, values(rows * cols, fill) {}

  static BasicTensor from(std::size_t rows, std::size_t cols, std::vector<T> v) {
    if (v.size() != rows * cols) {
      throw ShapeError("tensor: value count " + std::to_string(v.size()) +
                       " does not match shape " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
    BasicTensor t;
    t.shape = {rows, cols};
    t.values = std::move(v);
    return t;
  }

  static BasicTensor row(std::vector<T> v) {
    const auto n = v.size();
    return from(1, n, std::move(v));
  }

  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  std::size_t size() const { return values.size(); }

  T& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T{0});
  }
  void zero_grad() { grad.assign(values.size(), T{0}); }

  /// Checks product(shape) == size and that grad, if present, matches.
  bool valid() const {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                          std::multiplies<>());
    return n == values.size() && (grad.empty() || grad.size() == values.size());
  }

  template <class U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out;
    out.shape = shape;
    out.values.assign(values.begin(), values.end());
    if (!grad.empty()) out.grad.assign(grad.begin(), grad.end());
    return out;
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape == b.shape && a.values == b.values;
  }
};

using Tensor = BasicTensor<float>;

}  // namespace advnav
