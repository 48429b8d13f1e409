#pragma once

// Per-sample rewards (MI, KL, entropy) and their static or DWA combination.

#include "mmi/backbone.hpp"
#include "mmi/mine.hpp"

#include <array>
#include <optional>

namespace mmi::rewards {

enum class KlDirection {
  reference_to_current,  // KL(q || p), the default
  current_to_reference,  // KL(p || q)
};

struct Weights {
  Real mi = 1, kl = 1, entropy = 1;
  Vector as_vector() const { return Vector{{mi, kl, entropy}}; }
};

struct RewardBreakdown {
  Real mi = 0;
  Real kl = 0;       // <= 0
  Real entropy = 0;  // >= 0
  Weights weights;
  Real total = 0;
};

/// T(E ++ target) - log(ema denominator) for a single pair.
Real mi_reward(const Vector& embedding, const Vector& target, const mine::MIEstimator& estimator,
               mine::Target kind);
/// Columnwise version over a batch.
RowVector mi_rewards(const Matrix& embeddings, const Matrix& targets, const mine::MIEstimator& estimator,
                     mine::Target kind);

/// -sum_t KL(q_t || p_t) along the sampled prefix.
Real kl_reward(const backbone::GeneratedSample& sample, KlDirection direction = KlDirection::reference_to_current);

/// sum_t H(p_t) over full step distributions.
Real entropy_reward(const backbone::GeneratedSample& sample);

Real static_total(RewardBreakdown& breakdown, Real alpha, Real beta);
Real static_total(const RewardBreakdown& breakdown, Real alpha, Real beta);

struct DWAState {
  Real tau = 2.0;
  std::optional<Vector> prev;   // epoch means at t-1
  std::optional<Vector> prev2;  // epoch means at t-2

  static constexpr int kChannels = 3;
  /// Records one epoch's per-channel mean rewards.
  void push(const Vector& epoch_means);
};

/// gamma_k = K softmax(h / tau)_k, h_k = clamp(|m_{t-2}| / |m_{t-1}|, 0.1, 10)
/// with magnitudes floored at 1e-8. Unit weights until two epochs are known.
Weights dwa_weights(const DWAState& state);
/// Raw ratio guard used above, exposed for tests.
Vector dwa_ratios(const Vector& prev2, const Vector& prev);

Real dwa_total(RewardBreakdown& breakdown, const Weights& weights);
Real dwa_total(const RewardBreakdown& breakdown, const Weights& weights);

/// (1 - eps) * MI_R + eps * MI_F; eps outside [0, 1] throws.
Real combined_mi_reward(const Vector& embedding, const Vector& rating_target, const Vector& feature_target,
                        Real epsilon, const mine::MIEstimator& rating_estimator,
                        const mine::MIEstimator& feature_estimator);
RowVector combined_mi_rewards(const Matrix& embeddings, const Matrix& rating_targets, const Matrix& feature_targets,
                              Real epsilon, const mine::MIEstimator& rating_estimator,
                              const mine::MIEstimator& feature_estimator);

}  // namespace mmi::rewards
