#pragma once

#include "mmi/nn/param.hpp"

namespace mmi::nn {

/// Affine map y = W x + b over a batch stored column-wise.
template <class Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, Index in, Index out) : weight(name + ".weight", out, in), bias(name + ".bias", out, 1) {}

  void init(Rng& rng) {
    const Scalar bound = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(in_dim())));
    init_uniform(weight, bound, rng);
    init_uniform(bias, bound, rng);
  }

  template <class Derived>
  MatrixX<Scalar> forward(const Eigen::MatrixBase<Derived>& x) const {
    MatrixX<Scalar> y = weight.value * x;
    y.colwise() += bias.value.col(0);
    return y;
  }

  /// Accumulates parameter gradients and returns dL/dx.
  template <class DerivedG, class DerivedX>
  MatrixX<Scalar> backward(const Eigen::MatrixBase<DerivedG>& grad_out, const Eigen::MatrixBase<DerivedX>& x) {
    weight.grad.noalias() += grad_out * x.transpose();
    bias.grad.col(0) += grad_out.rowwise().sum();
    return weight.value.transpose() * grad_out;
  }

  Index in_dim() const { return weight.value.cols(); }
  Index out_dim() const { return weight.value.rows(); }
  void collect(ParamList<Scalar>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param<Scalar> weight;
  Param<Scalar> bias;
};

}  // namespace mmi::nn
