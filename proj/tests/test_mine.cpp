#include "mmi/mine.hpp"

#include "support.hpp"

#include <numeric>

using namespace mmi;
using namespace mmi::mine;

namespace {

PairSampler gaussian(double rho) {
  return [rho](Index b, Rng& rng) {
    PairBatch p{Matrix(1, b), Matrix(1, b)};
    for (Index i = 0; i < b; ++i) {
      const double x = standard_normal(rng);
      p.x(0, i) = x;
      p.y(0, i) = rho * x + std::sqrt(1 - rho * rho) * standard_normal(rng);
    }
    return p;
  };
}

MineConfig quick(long steps) {
  MineConfig c;
  c.hidden = 32;
  c.steps = steps;
  c.min_steps = steps / 2;
  c.lr = 3e-3;
  return c;
}

}  // namespace

TEST(DV, HandComputedValues) {
  const std::vector<Real> j{0.0}, m{10.0};
  EXPECT_DOUBLE_EQ(dv_objective(j, m), -10.0);
  const std::vector<Real> j2{1.0, 3.0}, m2{0.0, std::log(3.0)};
  EXPECT_NEAR(dv_objective(j2, m2), 2.0 - std::log(2.0), 1e-12);
  EXPECT_NEAR(dv_objective(RowVector{{1.0, 3.0}}, RowVector{{0.0, std::log(3.0)}}), 2.0 - std::log(2.0), 1e-12);
}

TEST(Marginal, IsAColumnPermutation) {
  Rng rng(4);
  Matrix y(1, 6);
  y << 0, 1, 2, 3, 4, 5;
  const Matrix m = make_marginal_batch(y, rng);
  std::vector<double> v(m.data(), m.data() + m.size());
  std::sort(v.begin(), v.end());
  EXPECT_EQ(v, (std::vector<double>{0, 1, 2, 3, 4, 5}));
  EXPECT_THROW(make_marginal_batch(Matrix::Zero(1, 1), rng), std::invalid_argument);
}

TEST(StatisticsNet, StartsAtZero) {
  StatisticsNet net(3, 2, 8, Activation::elu, 1);
  Rng rng(2);
  Matrix x = Matrix::Random(3, 5), y = Matrix::Random(2, 5);
  EXPECT_EQ(net.forward(x, y).cwiseAbs().maxCoeff(), 0.0);
  MIEstimator est(Target::rating, 3, 2, MineConfig{});
  EXPECT_EQ(est.log_ema_denominator(), 0.0);
  EXPECT_EQ(est.ema_denominator(), 1.0);
}

class StatisticsNetGradient : public ::testing::TestWithParam<Activation> {};

TEST_P(StatisticsNetGradient, MatchesFiniteDifference) {
  StatisticsNet net(3, 2, 6, GetParam(), 7);
  Rng rng(8);
  // move the output layer off zero so every layer gets gradient
  for (auto* p : net.params()) nn::init_uniform(*p, 0.5, rng);
  Matrix x(3, 4), y(2, 4);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
  for (Index i = 0; i < y.size(); ++i) y.data()[i] = standard_normal(rng);
  const RowVector g{{0.3, -1.0, 0.7, 0.2}};
  auto loss = [&] { return net.forward(x, y).dot(g); };
  auto backward = [&] {
    StatisticsNet::Trace t;
    net.forward(x, y, &t);
    net.backward(t, g);
  };
  EXPECT_LT(support::max_grad_error(net.params(), loss, backward), 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Activations, StatisticsNetGradient, ::testing::Values(Activation::relu, Activation::elu));

TEST(Mine, CorrelatedGaussianIsClose) {
  const double truth = -0.5 * std::log(1 - 0.64);
  TrainingCurve curve;
  auto est = train_mine(Target::rating, 1, 1, gaussian(0.8), quick(2000), &curve);
  EXPECT_GE(curve.steps, 1000);
  EXPECT_LE(curve.steps, 2000);
  Rng rng(99);
  const auto pairs = gaussian(0.8)(20000, rng);
  EXPECT_NEAR(estimate_mi(est, pairs.x, pairs.y, 5, rng), truth, 0.1);
}

TEST(Mine, IndependentPairsStayNearZero) {
  auto est = train_mine(Target::rating, 1, 1, gaussian(0.0), quick(1000));
  Rng rng(5);
  const auto pairs = gaussian(0.0)(20000, rng);
  EXPECT_LT(std::abs(estimate_mi(est, pairs.x, pairs.y, 5, rng)), 0.05);
}

TEST(Mine, DeterministicForFixedSeed) {
  auto a = train_mine(Target::rating, 1, 1, gaussian(0.5), quick(200));
  auto b = train_mine(Target::rating, 1, 1, gaussian(0.5), quick(200));
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

TEST(Mine, CheckpointRoundTrip) {
  auto est = train_mine(Target::feature, 1, 1, gaussian(0.5), quick(100));
  est.encoder_hash = "enc";
  const auto back = MIEstimator::from_json(est.to_json());
  EXPECT_EQ(back.tag(), Target::feature);
  EXPECT_EQ(back.encoder_hash, "enc");
  EXPECT_EQ(back.log_ema_denominator(), est.log_ema_denominator());
  const Matrix x{{0.1, -2.0}}, y{{1.0, 0.4}};
  EXPECT_EQ(back.scores(x, y), est.scores(x, y));
}

TEST(Entropy, OneHotColumns) {
  Matrix uniform = Matrix::Zero(5, 10);
  for (Index c = 0; c < 10; ++c) uniform(c % 5, c) = 1;
  EXPECT_NEAR(onehot_entropy(uniform), std::log(5.0), 1e-12);
  Matrix single = Matrix::Zero(5, 4);
  single.row(2).setOnes();
  EXPECT_EQ(onehot_entropy(single), 0.0);
  MIEstimator est(Target::rating, 1, 5, MineConfig{});
  Rng rng(1);
  EXPECT_THROW(normalized_mi(est, Matrix::Zero(1, 4), single, 2, rng), std::domain_error);
  const auto n = normalized_mi(est, Matrix::Zero(1, 10), uniform, 2, rng);
  EXPECT_EQ(n.raw_mi, 0.0);
  EXPECT_EQ(n.clamped, 0.0);
}

TEST(Mine, CopiesTrainTheirOwnParameters) {
  auto original = train_mine(Target::rating, 1, 1, gaussian(0.5), quick(50));
  const auto before = original.to_json().dump();
  auto copy = original;
  auto moved = std::move(copy);
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto b = gaussian(0.5)(64, rng);
    moved.train_step(b.x, b.y, rng);
  }
  EXPECT_EQ(original.to_json().dump(), before);
  EXPECT_NE(moved.to_json().dump(), before);
  // the copy continues from the same optimiser state as the original would
  auto again = original;
  Rng r1(9), r2(9);
  const auto b = gaussian(0.5)(64, r1);
  const auto b2 = gaussian(0.5)(64, r2);
  again.train_step(b.x, b.y, r1);
  original.train_step(b2.x, b2.y, r2);
  EXPECT_EQ(again.to_json().dump(), original.to_json().dump());
}
