#pragma once

#include "mmi/core/random.hpp"
#include "mmi/core/types.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace mmi::nn {

template <class Scalar>
struct Param {
  std::string name;
  MatrixX<Scalar> value;
  MatrixX<Scalar> grad;

  Param() = default;
  Param(std::string n, Index rows, Index cols)
      : name(std::move(n)), value(MatrixX<Scalar>::Zero(rows, cols)), grad(MatrixX<Scalar>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

template <class Scalar>
using ParamList = std::vector<Param<Scalar>*>;

template <class Scalar>
void zero_grads(const ParamList<Scalar>& params) {
  for (auto* p : params) p->zero_grad();
}

template <class Scalar>
void scale_grads(const ParamList<Scalar>& params, Scalar factor) {
  for (auto* p : params) p->grad *= factor;
}

template <class Scalar>
Scalar grad_norm(const ParamList<Scalar>& params) {
  Scalar sq = 0;
  for (auto* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

template <class Scalar>
bool grads_finite(const ParamList<Scalar>& params) {
  for (auto* p : params)
    if (!p->grad.array().isFinite().all()) return false;
  return true;
}

/// Uniform(-bound, bound) fill, the usual fan-in scaled init.
template <class Scalar>
void init_uniform(Param<Scalar>& p, Scalar bound, Rng& rng) {
  for (Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * bound);
}

template <class Scalar>
void init_normal(Param<Scalar>& p, Scalar stddev, Rng& rng) {
  for (Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = static_cast<Scalar>(standard_normal(rng) * stddev);
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables global-norm clipping
};

template <class Scalar>
class Adam {
 public:
  explicit Adam(ParamList<Scalar> params, AdamOptions opts = {}) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.push_back(MatrixX<Scalar>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(MatrixX<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    Scalar clip = 1;
    if (opts_.clip_norm > 0) {
      const Scalar norm = grad_norm(params_);
      if (norm > opts_.clip_norm) clip = static_cast<Scalar>(opts_.clip_norm) / norm;
    }
    const Scalar b1 = static_cast<Scalar>(opts_.beta1), b2 = static_cast<Scalar>(opts_.beta2);
    const Scalar c1 = 1 - static_cast<Scalar>(std::pow(opts_.beta1, t_));
    const Scalar c2 = 1 - static_cast<Scalar>(std::pow(opts_.beta2, t_));
    const Scalar lr = static_cast<Scalar>(opts_.lr), eps = static_cast<Scalar>(opts_.eps);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i]->grad;
      m_[i] = b1 * m_[i] + (1 - b1) * clip * g;
      v_[i] = b2 * v_[i] + (1 - b2) * (clip * g).cwiseAbs2();
      params_[i]->value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
    }
  }

  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }
  long steps() const { return t_; }

  /// Points the optimiser at an identically shaped parameter list, keeping
  /// its moment estimates. Needed after the owner is copied or moved.
  void rebind(ParamList<Scalar> params) {
    if (params.size() != params_.size()) throw std::invalid_argument("Adam::rebind: parameter count changed");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i]->value.rows() != m_[i].rows() || params[i]->value.cols() != m_[i].cols())
        throw std::invalid_argument("Adam::rebind: shape of " + params[i]->name + " changed");
    params_ = std::move(params);
  }

 private:
  ParamList<Scalar> params_;
  AdamOptions opts_;
  std::vector<MatrixX<Scalar>> m_, v_;
  long t_ = 0;
};

}  // namespace mmi::nn
