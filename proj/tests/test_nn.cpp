#include "mmi/core/math.hpp"
#include "mmi/core/random.hpp"
#include "mmi/nn/embedding.hpp"
#include "mmi/nn/gru.hpp"
#include "mmi/nn/linear.hpp"
#include "mmi/nn/serialize.hpp"

#include "support.hpp"

using namespace mmi;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

}  // namespace

TEST(Math, LogMeanExpIsStableForLargeScores) {
  Vector x{{1000.0, 1000.0}};
  EXPECT_NEAR(log_mean_exp(x), 1000.0, 1e-12);
  Vector y{{0.0, std::log(3.0)}};
  EXPECT_NEAR(log_mean_exp(y), std::log(2.0), 1e-12);
}

TEST(Math, EntropyAndKl) {
  Vector u = Vector::Constant(4, 0.25);
  EXPECT_NEAR(entropy(u), std::log(4.0), 1e-12);
  Vector q{{1.0, 0.0}}, p{{0.5, 0.5}};
  EXPECT_NEAR(kl_divergence(q, p), std::log(2.0), 1e-12);
  EXPECT_EQ(kl_divergence(p, p), 0.0);
}

TEST(Math, SoftmaxColumnsSumToOne) {
  Rng rng(3);
  const Matrix s = softmax_columns(random_matrix(5, 4, rng) * 10);
  for (Index c = 0; c < s.cols(); ++c) EXPECT_NEAR(s.col(c).sum(), 1.0, 1e-12);
}

TEST(Random, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  EXPECT_EQ(derive_seed(7, 9), derive_seed(7, 9));
}

TEST(Random, UniformIndexStaysInRange) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(uniform_index(rng, 7), 7u);
}

TEST(Linear, GradientMatchesFiniteDifference) {
  Rng rng(11);
  nn::Linear<Real> lin("l", 4, 3);
  lin.init(rng);
  const Matrix x = random_matrix(4, 5, rng);
  const Matrix g = random_matrix(3, 5, rng);
  nn::ParamList<Real> params;
  lin.collect(params);
  auto loss = [&] { return (lin.forward(x).array() * g.array()).sum(); };
  EXPECT_LT(support::max_grad_error(params, loss, [&] { lin.backward(g, x); }), 1e-6);
}

TEST(Gru, GradientMatchesFiniteDifferenceWithMask) {
  Rng rng(12);
  nn::GruCell<Real> cell("g", 3, 4);
  cell.init(rng);
  const Matrix x1 = random_matrix(3, 2, rng), x2 = random_matrix(3, 2, rng);
  const Matrix h0 = random_matrix(4, 2, rng) * 0.5;
  const Matrix g = random_matrix(4, 2, rng);
  const RowVector mask{{1.0, 0.0}};
  nn::ParamList<Real> params{&cell.w, &cell.u, &cell.bw, &cell.bu};
  auto loss = [&] {
    const Matrix h1 = cell.forward(x1, h0);
    const Matrix h2 = cell.forward(x2, h1, nullptr, &mask);
    return (h2.array() * g.array()).sum();
  };
  auto backward = [&] {
    nn::GruCell<Real>::Cache c1, c2;
    const Matrix h1 = cell.forward(x1, h0, &c1);
    cell.forward(x2, h1, &c2, &mask);
    Matrix gh1, gh0;
    cell.backward(c2, g, gh1);
    cell.backward(c1, gh1, gh0);
  };
  EXPECT_LT(support::max_grad_error(params, loss, backward), 1e-6);
}

TEST(Embedding, BackwardScattersIntoRows) {
  Rng rng(1);
  nn::Embedding<Real> emb("e", 5, 3);
  emb.init(rng, 0.1);
  const std::vector<int> ids{1, 1, 4};
  const Matrix g = Matrix::Ones(3, 3);
  emb.backward(ids, g);
  EXPECT_DOUBLE_EQ(emb.table.grad(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(emb.table.grad(0, 4), 1.0);
  EXPECT_DOUBLE_EQ(emb.table.grad(0, 0), 0.0);
}

TEST(Adam, MinimisesAQuadratic) {
  nn::Param<Real> p("p", 2, 1);
  p.value << 3.0, -2.0;
  nn::Adam<Real> opt({&p}, {.lr = 0.05});
  for (int i = 0; i < 2000; ++i) {
    p.grad = 2 * p.value;
    opt.step();
  }
  EXPECT_LT(p.value.norm(), 1e-2);
}

TEST(Adam, ClipsTheGlobalNorm) {
  nn::Param<Real> p("p", 1, 1);
  nn::Adam<Real> opt({&p}, {.lr = 0.1, .clip_norm = 1.0});
  p.grad(0, 0) = 1e6;
  opt.step();
  EXPECT_NEAR(p.value(0, 0), -0.1, 1e-6);
}

TEST(Serialize, RoundTripAndShapeCheck) {
  nn::Param<Real> a("a", 2, 2);
  a.value << 1, 2, 3, 4;
  const auto j = nn::params_to_json<Real>({&a});
  nn::Param<Real> b("a", 2, 2);
  nn::params_from_json<Real>({&b}, j);
  EXPECT_EQ(a.value, b.value);
  nn::Param<Real> c("a", 3, 2);
  EXPECT_THROW(nn::params_from_json<Real>({&c}, j), DataError);
  nn::Param<Real> d("missing", 2, 2);
  EXPECT_THROW(nn::params_from_json<Real>({&d}, j), DataError);
}
