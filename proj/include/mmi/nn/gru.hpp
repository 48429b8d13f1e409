#pragma once

#include "mmi/core/math.hpp"
#include "mmi/nn/param.hpp"

namespace mmi::nn {

/// Gated recurrent cell, gate rows ordered (reset, update, candidate):
///   r = sigma(Wr x + Ur h + b), z = sigma(Wz x + Uz h + b)
///   n = tanh(Wn x + bn + r * (Un h + bun)),  h' = (1 - z) * n + z * h
/// An optional per-column mask freezes the state of finished/padded columns.
template <class Scalar>
class GruCell {
 public:
  struct Cache {
    MatrixX<Scalar> x, h_prev, r, z, n, hn;
    RowVectorX<Scalar> mask;  // empty when unmasked
  };

  GruCell() = default;
  GruCell(const std::string& name, Index in, Index hidden)
      : w(name + ".w", 3 * hidden, in), u(name + ".u", 3 * hidden, hidden), bw(name + ".bw", 3 * hidden, 1),
        bu(name + ".bu", 3 * hidden, 1) {}

  void init(Rng& rng) {
    const Scalar bound = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(hidden())));
    init_uniform(w, bound, rng);
    init_uniform(u, bound, rng);
    init_uniform(bw, bound, rng);
    init_uniform(bu, bound, rng);
  }

  Index hidden() const { return u.value.cols(); }
  Index in_dim() const { return w.value.cols(); }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& x, const MatrixX<Scalar>& h, Cache* cache = nullptr,
                          const RowVectorX<Scalar>* mask = nullptr) const {
    const Index H = hidden();
    MatrixX<Scalar> gx = w.value * x;
    gx.colwise() += bw.value.col(0);
    MatrixX<Scalar> gh = u.value * h;
    gh.colwise() += bu.value.col(0);
    MatrixX<Scalar> r = sigmoid_array((gx.topRows(H) + gh.topRows(H)).array()).matrix();
    MatrixX<Scalar> z = sigmoid_array((gx.middleRows(H, H) + gh.middleRows(H, H)).array()).matrix();
    MatrixX<Scalar> hn = gh.bottomRows(H);
    MatrixX<Scalar> n = (gx.bottomRows(H).array() + r.array() * hn.array()).tanh().matrix();
    MatrixX<Scalar> out = ((1 - z.array()) * n.array() + z.array() * h.array()).matrix();
    if (mask) {
      for (Index c = 0; c < out.cols(); ++c)
        if ((*mask)(c) == 0) out.col(c) = h.col(c);
    }
    if (cache) {
      cache->x = x;
      cache->h_prev = h;
      cache->r = std::move(r);
      cache->z = std::move(z);
      cache->n = std::move(n);
      cache->hn = std::move(hn);
      if (mask) cache->mask = *mask; else cache->mask.resize(0);
    }
    return out;
  }

  /// Backprop one step. Returns dL/dx; writes dL/dh_prev into grad_h_prev.
  MatrixX<Scalar> backward(const Cache& c, const MatrixX<Scalar>& grad_out, MatrixX<Scalar>& grad_h_prev) {
    MatrixX<Scalar> dh = grad_out;
    MatrixX<Scalar> passthrough;
    if (c.mask.size() > 0) {
      passthrough = MatrixX<Scalar>::Zero(dh.rows(), dh.cols());
      for (Index col = 0; col < dh.cols(); ++col) {
        if (c.mask(col) == 0) {
          passthrough.col(col) = dh.col(col);
          dh.col(col).setZero();
        }
      }
    }
    const Index H = hidden();
    const auto z = c.z.array();
    const auto r = c.r.array();
    const auto n = c.n.array();
    MatrixX<Scalar> dn = (dh.array() * (1 - z)).matrix();
    MatrixX<Scalar> dz = (dh.array() * (c.h_prev.array() - n)).matrix();
    MatrixX<Scalar> dan = (dn.array() * (1 - n.square())).matrix();
    MatrixX<Scalar> dar = (dan.array() * c.hn.array() * r * (1 - r)).matrix();
    MatrixX<Scalar> daz = (dz.array() * z * (1 - z)).matrix();

    MatrixX<Scalar> dgx(3 * H, dh.cols());
    dgx << dar, daz, dan;
    MatrixX<Scalar> dgh(3 * H, dh.cols());
    dgh << dar, daz, (dan.array() * r).matrix();

    w.grad.noalias() += dgx * c.x.transpose();
    bw.grad.col(0) += dgx.rowwise().sum();
    u.grad.noalias() += dgh * c.h_prev.transpose();
    bu.grad.col(0) += dgh.rowwise().sum();

    grad_h_prev = (dh.array() * z).matrix();
    grad_h_prev.noalias() += u.value.transpose() * dgh;
    if (passthrough.size() > 0) grad_h_prev += passthrough;
    return w.value.transpose() * dgx;
  }

  void collect(ParamList<Scalar>& out) {
    out.push_back(&w);
    out.push_back(&u);
    out.push_back(&bw);
    out.push_back(&bu);
  }

  Param<Scalar> w, u, bw, bu;
};

}  // namespace mmi::nn
