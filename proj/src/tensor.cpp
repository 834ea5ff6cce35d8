#include "tobac/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace tobac {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
void check_row_finite(const T* row, int n, const char* where) {
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(row[i])) throw NumericError(std::string(where) + ": non-finite input");
  }
}

// Stable log-sum-exp of one row, accumulated left to right in double.
template <typename T>
double row_logsumexp(const T* row, int n) {
  double mx = row[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(row[i]));
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(static_cast<double>(row[i]) - mx);
  return mx + std::log(s);
}

}  // namespace

template <typename T>
bool TensorT<T>::all_finite() const {
  for (const T& x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

template <typename T>
void require_finite(const TensorT<T>& t, const char* where) {
  if (!t.all_finite()) throw NumericError(std::string(where) + ": non-finite values");
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.empty()) throw StructuralError("softmax: empty input");
  TensorT<T> out(logits.shape());
  const int n = logits.cols();
  for (int r = 0; r < logits.rows(); ++r) {
    const T* in = logits.row(r);
    check_row_finite(in, n, "softmax");
    T* o = out.row(r);
    double mx = in[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(in[i]));
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(static_cast<double>(in[i]) - mx);
    for (int i = 0; i < n; ++i) o[i] = static_cast<T>(std::exp(static_cast<double>(in[i]) - mx) / s);
  }
  return out;
}

template <typename T>
TensorT<T> log_softmax(const TensorT<T>& logits) {
  if (logits.empty()) throw StructuralError("log_softmax: empty input");
  TensorT<T> out(logits.shape());
  const int n = logits.cols();
  for (int r = 0; r < logits.rows(); ++r) {
    const T* in = logits.row(r);
    check_row_finite(in, n, "log_softmax");
    const double lse = row_logsumexp(in, n);
    T* o = out.row(r);
    for (int i = 0; i < n; ++i) o[i] = static_cast<T>(static_cast<double>(in[i]) - lse);
  }
  return out;
}

template <typename T>
double cross_entropy(const TensorT<T>& logits, std::span<const int> targets,
                     std::span<const std::uint8_t> mask) {
  const int rows = logits.rows();
  const int v = logits.cols();
  if (targets.size() != static_cast<std::size_t>(rows) || mask.size() != targets.size()) {
    throw StructuralError("cross_entropy: targets/mask length must equal logit rows");
  }
  double total = 0.0;
  int counted = 0;
  for (int r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const int t = targets[r];
    if (t < 0 || t >= v) throw StructuralError("cross_entropy: target out of range");
    const T* in = logits.row(r);
    check_row_finite(in, v, "cross_entropy");
    total += row_logsumexp(in, v) - static_cast<double>(in[t]);
    ++counted;
  }
  if (counted == 0) throw StructuralError("cross_entropy: every position is masked out");
  return total / counted;
}

template <typename T>
double kl_divergence(const TensorT<T>& p_logits, const TensorT<T>& q_logits) {
  if (p_logits.size() != q_logits.size() || p_logits.empty()) {
    throw StructuralError("kl_divergence: logit vectors must have equal non-zero length");
  }
  const int n = static_cast<int>(p_logits.size());
  check_row_finite(p_logits.data(), n, "kl_divergence");
  check_row_finite(q_logits.data(), n, "kl_divergence");
  const double lse_p = row_logsumexp(p_logits.data(), n);
  const double lse_q = row_logsumexp(q_logits.data(), n);
  double kl = 0.0;
  for (int i = 0; i < n; ++i) {
    const double lp = static_cast<double>(p_logits[i]) - lse_p;
    const double lq = static_cast<double>(q_logits[i]) - lse_q;
    kl += std::exp(lp) * (lp - lq);
  }
  return std::max(kl, 0.0);
}

template <typename T>
void gemm(const TensorT<T>& a, bool trans_a, const TensorT<T>& b, bool trans_b, TensorT<T>& c,
          bool accumulate) {
  ConstMap<T> am(a.data(), a.rows(), a.cols());
  ConstMap<T> bm(b.data(), b.rows(), b.cols());
  const int m = trans_a ? a.cols() : a.rows();
  const int k = trans_a ? a.rows() : a.cols();
  const int kb = trans_b ? b.cols() : b.rows();
  const int n = trans_b ? b.rows() : b.cols();
  if (k != kb) {
    throw StructuralError("gemm: inner dimensions differ (" + a.shape_string() + " x " +
                          b.shape_string() + ")");
  }
  if (c.rows() != m || c.cols() != n) throw StructuralError("gemm: output shape mismatch");
  MutMap<T> cm(c.data(), m, n);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b) {
    cm.noalias() += am * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += am * bm.transpose();
  } else if (trans_a && !trans_b) {
    cm.noalias() += am.transpose() * bm;
  } else {
    cm.noalias() += am.transpose() * bm.transpose();
  }
}

#define TOBAC_INSTANTIATE(T)                                                              \
  template class TensorT<T>;                                                              \
  template void require_finite<T>(const TensorT<T>&, const char*);                        \
  template TensorT<T> softmax<T>(const TensorT<T>&);                                      \
  template TensorT<T> log_softmax<T>(const TensorT<T>&);                                  \
  template double cross_entropy<T>(const TensorT<T>&, std::span<const int>,               \
                                   std::span<const std::uint8_t>);                        \
  template double kl_divergence<T>(const TensorT<T>&, const TensorT<T>&);                 \
  template void gemm<T>(const TensorT<T>&, bool, const TensorT<T>&, bool, TensorT<T>&, bool);

TOBAC_INSTANTIATE(float)
TOBAC_INSTANTIATE(double)

#undef TOBAC_INSTANTIATE

}  // namespace tobac
