#pragma once

#include "mmi/core/types.hpp"

#include <cmath>
#include <limits>

namespace mmi {

/// log(mean(exp(x))) computed around the maximum so large scores do not overflow.
template <class Derived>
typename Derived::Scalar log_mean_exp(const Eigen::DenseBase<Derived>& x) {
  using S = typename Derived::Scalar;
  const S peak = x.maxCoeff();
  if (!std::isfinite(peak)) return peak;
  const S sum = (x.derived().array() - peak).exp().sum();
  return peak + std::log(sum / static_cast<S>(x.size()));
}

template <class Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using S = typename Derived::Scalar;
  const S peak = x.maxCoeff();
  if (!std::isfinite(peak)) return peak;
  return peak + std::log((x.derived().array() - peak).exp().sum());
}

/// Column-wise softmax of a logit matrix (vocabulary x batch).
template <class Derived>
MatrixX<typename Derived::Scalar> softmax_columns(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  MatrixX<S> out(logits.rows(), logits.cols());
  for (Index c = 0; c < logits.cols(); ++c) {
    const S peak = logits.col(c).maxCoeff();
    out.col(c) = (logits.col(c).array() - peak).exp().matrix();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

/// Column-wise log-softmax.
template <class Derived>
MatrixX<typename Derived::Scalar> log_softmax_columns(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  MatrixX<S> out(logits.rows(), logits.cols());
  for (Index c = 0; c < logits.cols(); ++c) {
    out.col(c) = logits.col(c).array() - log_sum_exp(logits.col(c));
  }
  return out;
}

/// Shannon entropy in nats with 0 ln 0 = 0.
template <class Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& p) {
  using S = typename Derived::Scalar;
  S h = 0;
  for (Index i = 0; i < p.size(); ++i) {
    const S v = p.derived().coeff(i);
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

/// D_KL(p || q) in nats; terms with p = 0 vanish.
template <class DerivedP, class DerivedQ>
typename DerivedP::Scalar kl_divergence(const Eigen::MatrixBase<DerivedP>& p,
                                        const Eigen::MatrixBase<DerivedQ>& q) {
  using S = typename DerivedP::Scalar;
  S d = 0;
  for (Index i = 0; i < p.size(); ++i) {
    const S pi = p.derived().coeff(i);
    if (pi <= 0) continue;
    const S qi = q.derived().coeff(i);
    if (qi <= 0) return std::numeric_limits<S>::infinity();
    d += pi * (std::log(pi) - std::log(qi));
  }
  // Rounding can leave a tiny negative value for near-identical inputs.
  return d > 0 ? d : S(0);
}

template <class S>
S sigmoid(S x) {
  return x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

template <class Derived>
auto sigmoid_array(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return x.unaryExpr([](S v) { return sigmoid(v); });
}

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.derived().array().isFinite().all();
}

}  // namespace mmi
