#pragma once

// Scalar-generic numeric helpers shared by the label models, the downstream
// classifier and the samplers. All accept arbitrary Eigen expressions.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "lfloop/errors.hpp"

namespace lfloop {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.derived().array() - m).exp().sum());
}

/// Numerically stable softmax of a vector expression.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = logits.maxCoeff();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> p = (logits.array() - m).exp().matrix();
  return p / p.sum();
}

/// Row-wise softmax, in place.
template <typename Derived>
void softmax_rows(Eigen::MatrixBase<Derived>& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const auto m = row.maxCoeff();
    row = (row.array() - m).exp().matrix();
    row /= row.sum();
  }
}

/// Predictive entropy in nats, with 0 ln 0 = 0.
///
/// Throws UsageError when `p` has negative entries or does not sum to 1
/// within 1e-6.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  if ((p.array() < Scalar(0)).any()) throw UsageError("entropy: negative probability");
  if (std::abs(p.sum() - Scalar(1)) > Scalar(1e-6))
    throw UsageError("entropy: probabilities do not sum to 1");
  Scalar h(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const Scalar v = p(i);
    if (v > Scalar(0)) h -= v * std::log(v);
  }
  return h;
}

/// 1 - cos(u, v). Undefined (NaN) for zero vectors; callers reject those at load time.
template <typename A, typename B>
typename A::Scalar cosine_distance(const Eigen::MatrixBase<A>& u, const Eigen::MatrixBase<B>& v) {
  return typename A::Scalar(1) - u.dot(v) / (u.norm() * v.norm());
}

/// Sample Pearson correlation coefficient.
template <typename A, typename B>
typename A::Scalar pearson(const Eigen::MatrixBase<A>& xs, const Eigen::MatrixBase<B>& ys) {
  using Scalar = typename A::Scalar;
  if (xs.size() != ys.size()) throw UsageError("pearson: length mismatch");
  if (xs.size() < 2) throw UsageError("pearson: need at least two points");
  const auto dx = (xs.array() - xs.mean()).eval();
  const auto dy = (ys.array() - ys.mean()).eval();
  const Scalar sxx = dx.square().sum();
  const Scalar syy = dy.square().sum();
  if (sxx == Scalar(0) || syy == Scalar(0)) throw UndefinedCorrelation();
  const Scalar r = (dx * dy).sum() / std::sqrt(sxx * syy);
  return std::clamp(r, Scalar(-1), Scalar(1));
}

}  // namespace lfloop
