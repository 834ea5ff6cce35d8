#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tobac/errors.hpp"

namespace tobac {

/// Dense row-major tensor. Training runs in 32-bit; the 64-bit instantiation
/// exists for finite-difference gradient checks.
template <typename T>
class TensorT {
 public:
  using value_type = T;

  TensorT() = default;

  explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(count(shape_), T(0));
  }

  TensorT(std::vector<int> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size()) {
      throw StructuralError("tensor shape " + shape_string() + " does not match " +
                            std::to_string(data_.size()) + " elements");
    }
  }

  static TensorT zeros(std::vector<int> shape) { return TensorT(std::move(shape)); }

  static TensorT full(std::vector<int> shape, T value) {
    TensorT t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }

  /// Leading dimension for 2-D views; 1 for scalars and vectors.
  int rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  /// Product of the trailing dimensions (the row length of a 2-D view).
  int cols() const {
    if (shape_.empty()) return 1;
    if (shape_.size() == 1) return shape_[0];
    return static_cast<int>(data_.size() / static_cast<std::size_t>(shape_[0]));
  }

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols() + c]; }
  const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols() + c]; }

  T* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols(); }
  const T* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols(); }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  template <typename U>
  TensorT<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return TensorT<U>(shape_, std::move(out));
  }

  bool all_finite() const;

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw StructuralError("negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

/// Throws NumericError naming `where` when any entry is NaN or infinite.
template <typename T>
void require_finite(const TensorT<T>& t, const char* where);

// --- Kernels -------------------------------------------------------------
// Rows are the leading dimension; the softmax/CE/KL kernels act on the last
// dimension of a 1-D or 2-D tensor.

/// Row-wise softmax with max subtraction.
template <typename T>
TensorT<T> softmax(const TensorT<T>& logits);

/// Row-wise log-softmax.
template <typename T>
TensorT<T> log_softmax(const TensorT<T>& logits);

/// Mean over rows with mask[r] != 0 of -log softmax(logits[r])[targets[r]].
/// Targets and mask are aligned with the rows of `logits`.
template <typename T>
double cross_entropy(const TensorT<T>& logits, std::span<const int> targets,
                     std::span<const std::uint8_t> mask);

/// KL(softmax(p) || softmax(q)) for single logit vectors, in nats.
template <typename T>
double kl_divergence(const TensorT<T>& p_logits, const TensorT<T>& q_logits);

/// C = op(A) * op(B) (+ C if accumulate). A, B, C are 2-D row-major.
template <typename T>
void gemm(const TensorT<T>& a, bool trans_a, const TensorT<T>& b, bool trans_b, TensorT<T>& c,
          bool accumulate);

}  // namespace tobac
