#include "mmi/rewards.hpp"

#include "mmi/core/math.hpp"

#include <cmath>

namespace mmi::rewards {

namespace {

void check_tag(const mine::MIEstimator& est, mine::Target kind) {
  if (est.tag() != kind)
    throw std::invalid_argument("estimator trained for " + mine::to_string(est.tag()) + " used for " +
                                mine::to_string(kind) + " rewards");
}

void check_epsilon(Real eps) {
  if (!(eps >= 0 && eps <= 1)) throw std::invalid_argument("epsilon must lie in [0, 1]");
}

}  // namespace

Real mi_reward(const Vector& embedding, const Vector& target, const mine::MIEstimator& est, mine::Target kind) {
  check_tag(est, kind);
  return est.score(embedding, target) - est.log_ema_denominator();
}

RowVector mi_rewards(const Matrix& embeddings, const Matrix& targets, const mine::MIEstimator& est,
                     mine::Target kind) {
  check_tag(est, kind);
  return (est.scores(embeddings, targets).array() - est.log_ema_denominator()).matrix();
}

Real kl_reward(const backbone::GeneratedSample& s, KlDirection direction) {
  if (s.ref_dist.size() != s.step_dist.size()) throw std::invalid_argument("sample has no reference distributions");
  Real total = 0;
  for (std::size_t t = 0; t < s.step_dist.size(); ++t) {
    total += direction == KlDirection::reference_to_current ? kl_divergence(s.ref_dist[t], s.step_dist[t])
                                                            : kl_divergence(s.step_dist[t], s.ref_dist[t]);
  }
  return -total;
}

Real entropy_reward(const backbone::GeneratedSample& s) {
  Real total = 0;
  for (const auto& p : s.step_dist) total += entropy(p);
  return total;
}

Real static_total(const RewardBreakdown& b, Real alpha, Real beta) { return b.mi + alpha * b.kl + beta * b.entropy; }

Real static_total(RewardBreakdown& b, Real alpha, Real beta) {
  b.weights = {1, alpha, beta};
  b.total = static_total(static_cast<const RewardBreakdown&>(b), alpha, beta);
  return b.total;
}

void DWAState::push(const Vector& epoch_means) {
  if (epoch_means.size() != kChannels) throw std::invalid_argument("DWA expects three channel means");
  prev2 = prev;
  prev = epoch_means;
}

Vector dwa_ratios(const Vector& prev2, const Vector& prev) {
  Vector h(prev.size());
  for (Index k = 0; k < prev.size(); ++k) {
    const Real num = std::max(std::abs(prev2(k)), 1e-8);
    const Real den = std::max(std::abs(prev(k)), 1e-8);
    h(k) = std::clamp(num / den, 0.1, 10.0);
  }
  return h;
}

Weights dwa_weights(const DWAState& state) {
  if (!(state.tau > 0)) throw std::invalid_argument("DWA temperature must be positive");
  if (!state.prev || !state.prev2) return {};
  const Vector h = dwa_ratios(*state.prev2, *state.prev);
  const Vector scaled = h / state.tau;
  const Vector e = (scaled.array() - scaled.maxCoeff()).exp().matrix();
  const Vector g = static_cast<Real>(DWAState::kChannels) * e / e.sum();
  return {g(0), g(1), g(2)};
}

Real dwa_total(const RewardBreakdown& b, const Weights& w) {
  return w.mi * b.mi + w.kl * b.kl + w.entropy * b.entropy;
}

Real dwa_total(RewardBreakdown& b, const Weights& w) {
  b.weights = w;
  b.total = dwa_total(static_cast<const RewardBreakdown&>(b), w);
  return b.total;
}

Real combined_mi_reward(const Vector& embedding, const Vector& rating_target, const Vector& feature_target,
                        Real epsilon, const mine::MIEstimator& rating_est, const mine::MIEstimator& feature_est) {
  check_epsilon(epsilon);
  return (1 - epsilon) * mi_reward(embedding, rating_target, rating_est, mine::Target::rating) +
         epsilon * mi_reward(embedding, feature_target, feature_est, mine::Target::feature);
}

RowVector combined_mi_rewards(const Matrix& embeddings, const Matrix& rating_targets, const Matrix& feature_targets,
                              Real epsilon, const mine::MIEstimator& rating_est, const mine::MIEstimator& feature_est) {
  check_epsilon(epsilon);
  return (1 - epsilon) * mi_rewards(embeddings, rating_targets, rating_est, mine::Target::rating) +
         epsilon * mi_rewards(embeddings, feature_targets, feature_est, mine::Target::feature);
}

}  // namespace mmi::rewards
