#include "mmi/rewards.hpp"

#include "support.hpp"

using namespace mmi;
using namespace mmi::rewards;

namespace {

backbone::GeneratedSample two_step_sample() {
  backbone::GeneratedSample s;
  s.tokens = {4, 1};
  s.step_logprob = {std::log(0.5), 0.0};
  s.step_dist = {Vector{{0.5, 0.5}}, Vector{{1.0, 0.0}}};
  s.ref_dist = {Vector{{1.0, 0.0}}, Vector{{1.0, 0.0}}};
  return s;
}

}  // namespace

TEST(Kl, MatchesHandValue) {
  const auto s = two_step_sample();
  EXPECT_NEAR(kl_reward(s), -std::log(2.0), 1e-12);
  // the reverse direction sees 0.5 ln(0.5/1) + 0.5 ln(0.5/0), infinite
  EXPECT_FALSE(std::isfinite(kl_reward(s, KlDirection::current_to_reference)));
  auto bare = s;
  bare.ref_dist.clear();
  EXPECT_THROW(kl_reward(bare), std::invalid_argument);
}

TEST(Entropy, SumsOverSteps) {
  EXPECT_NEAR(entropy_reward(two_step_sample()), std::log(2.0), 1e-12);
  backbone::GeneratedSample det;
  det.step_dist = {Vector{{0, 1, 0}}, Vector{{1, 0, 0}}};
  EXPECT_EQ(entropy_reward(det), 0.0);
  backbone::GeneratedSample uni;
  uni.step_dist.assign(4, Vector::Constant(6, 1.0 / 6));
  EXPECT_NEAR(entropy_reward(uni), 4 * std::log(6.0), 1e-12);
}

TEST(StaticTotal, WeightsTheChannels) {
  RewardBreakdown b{.mi = 1, .kl = -2, .entropy = 3};
  EXPECT_EQ(static_total(b, 1, 1), 2.0);
  EXPECT_EQ(b.total, 2.0);
  EXPECT_EQ(b.weights.kl, 1.0);
  EXPECT_NEAR(static_total(std::as_const(b), 0.5, 0.01), 1 - 1 + 0.03, 1e-12);
}

TEST(Dwa, FrozenValuesForUnevenRatios) {
  DWAState st{.tau = 2.0};
  st.push(Vector{{2, 1, 1}});
  st.push(Vector{{1, 1, 1}});
  const auto w = dwa_weights(st);
  EXPECT_NEAR(w.mi, 1.355588, 1e-6);
  EXPECT_NEAR(w.kl, 0.822206, 1e-6);
  EXPECT_NEAR(w.entropy, 0.822206, 1e-6);
}

TEST(Dwa, UnitWeightsBeforeTwoEpochsAndAtTheFixedPoint) {
  DWAState st;
  const auto w0 = dwa_weights(st);
  EXPECT_EQ(w0.as_vector(), Vector::Ones(3));
  st.push(Vector{{0.3, -4, 12}});
  EXPECT_EQ(dwa_weights(st).as_vector(), Vector::Ones(3));
  st.push(Vector{{0.3, -4, 12}});
  EXPECT_LT((dwa_weights(st).as_vector() - Vector::Ones(3)).norm(), 1e-12);
}

TEST(Dwa, WeightsSumToChannelCount) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    DWAState st{.tau = 0.5 + 4 * uniform01(rng)};
    for (int e = 0; e < 2; ++e) {
      Vector m(3);
      for (Index k = 0; k < 3; ++k) m(k) = (uniform01(rng) - 0.5) * std::pow(10.0, 6 * uniform01(rng) - 3);
      if (trial % 7 == 0) m(trial % 3) = 0;
      st.push(m);
    }
    const Vector w = dwa_weights(st).as_vector();
    EXPECT_NEAR(w.sum(), 3.0, 1e-9);
    EXPECT_TRUE((w.array() > 0).all());
  }
}

TEST(Dwa, RatiosAreGuardedAndClamped) {
  const Vector h = dwa_ratios(Vector{{0, 100, 1}}, Vector{{0, 1, 1e-12}});
  EXPECT_EQ(h(0), 1.0);
  EXPECT_EQ(h(1), 10.0);
  EXPECT_EQ(h(2), 10.0);
  EXPECT_EQ(dwa_ratios(Vector{{1e-3}}, Vector{{1}})(0), 0.1);
  DWAState bad{.tau = 0};
  EXPECT_THROW(dwa_weights(bad), std::invalid_argument);
}

TEST(MiReward, ZeroEstimatorAndTagCheck) {
  mine::MIEstimator est(mine::Target::rating, 2, 5, mine::MineConfig{});
  const Vector e{{0.4, -1.0}};
  Vector y = Vector::Zero(5);
  y(2) = 1;
  EXPECT_EQ(mi_reward(e, y, est, mine::Target::rating), 0.0);
  EXPECT_THROW(mi_reward(e, y, est, mine::Target::feature), std::invalid_argument);
  const RowVector batch = mi_rewards(Matrix::Random(2, 3), Matrix::Zero(5, 3), est, mine::Target::rating);
  EXPECT_EQ(batch, RowVector::Zero(3));
}

TEST(CombinedMi, EpsilonBounds) {
  mine::MIEstimator r(mine::Target::rating, 2, 5, mine::MineConfig{});
  mine::MIEstimator f(mine::Target::feature, 2, 2, mine::MineConfig{});
  const Vector e{{0.1, 0.2}}, yr = Vector::Zero(5), yf = Vector::Zero(2);
  EXPECT_EQ(combined_mi_reward(e, yr, yf, 0.0, r, f), 0.0);
  EXPECT_EQ(combined_mi_reward(e, yr, yf, 1.0, r, f), 0.0);
  EXPECT_THROW(combined_mi_reward(e, yr, yf, -0.1, r, f), std::invalid_argument);
  EXPECT_THROW(combined_mi_reward(e, yr, yf, 1.5, r, f), std::invalid_argument);
  EXPECT_THROW(combined_mi_reward(e, yr, yf, 0.5, f, r), std::invalid_argument);
}
