#pragma once

#include "mmi/nn/param.hpp"

#include <span>

namespace mmi::nn {

/// Lookup table with one column per id.
template <class Scalar>
class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, Index count, Index dim) : table(name + ".table", dim, count) {}

  void init(Rng& rng, Scalar stddev = Scalar(0.1)) { init_normal(table, stddev, rng); }

  MatrixX<Scalar> forward(std::span<const int> ids) const {
    MatrixX<Scalar> out(dim(), static_cast<Index>(ids.size()));
    for (std::size_t c = 0; c < ids.size(); ++c) out.col(static_cast<Index>(c)) = table.value.col(ids[c]);
    return out;
  }

  template <class Derived>
  void backward(std::span<const int> ids, const Eigen::MatrixBase<Derived>& grad_out) {
    for (std::size_t c = 0; c < ids.size(); ++c) table.grad.col(ids[c]) += grad_out.col(static_cast<Index>(c));
  }

  Index dim() const { return table.value.rows(); }
  Index count() const { return table.value.cols(); }
  void collect(ParamList<Scalar>& out) { out.push_back(&table); }

  Param<Scalar> table;
};

}  // namespace mmi::nn
