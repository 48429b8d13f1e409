#include "mmi/backbone.hpp"
#include "mmi/rewards.hpp"

#include "support.hpp"

using namespace mmi;
using namespace mmi::backbone;

namespace {

BackboneConfig tiny(Arch arch, bool feature = true) {
  BackboneConfig c;
  c.arch = arch;
  c.use_feature = feature;
  c.attr_dim = 3;
  c.word_dim = 4;
  c.hidden = 5;
  c.rating_hidden = 4;
  c.max_len = 6;
  return c;
}

Generator model(Arch arch, bool feature = true) {
  return Generator(tiny(arch, feature), 9, "vh", IdMap({"u0", "u1"}), IdMap({"i0", "i1", "i2"}), 3);
}

const std::vector<Context> kCtx{{.user = 0, .item = 1, .rating = 5, .feature = 2},
                                {.user = 1, .item = 2, .rating = 1, .feature = -1},
                                {.user = 2, .item = 3, .rating = 3, .feature = 0}};
const std::vector<TokenSeq> kTargets{{4, 5, 1}, {6, 1}, {7, 8, 4, 5}};

}  // namespace

TEST(IdMap, UnknownIdsShareTheLastRow) {
  IdMap m({"a", "b"});
  EXPECT_EQ(m.lookup("a"), 0);
  EXPECT_EQ(m.lookup("zzz"), 2);
  EXPECT_EQ(m.table_size(), 3);
}

TEST(MakeTarget, KeepsEosWhenTruncating) {
  EXPECT_EQ(make_target({4, 5}, 5), (TokenSeq{4, 5, 1}));
  EXPECT_EQ(make_target({4, 5, 6, 7, 8}, 3), (TokenSeq{4, 5, 1}));
}

class GeneratorGradient : public ::testing::TestWithParam<Arch> {};

TEST_P(GeneratorGradient, SequenceLogprobMatchesFiniteDifference) {
  auto g = model(GetParam());
  const std::vector<Real> w{0.5, -1.0, 2.0};
  auto loss = [&] {
    const auto lp = g.step_logprobs(kCtx, kTargets);
    Real s = 0;
    for (std::size_t b = 0; b < lp.size(); ++b)
      for (Real v : lp[b]) s -= w[b] * v;
    return s;
  };
  const double err = support::max_grad_error(g.params(), loss, [&] { g.sequence_logprob_backward(kCtx, kTargets, w); });
  EXPECT_LT(err, 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Arches, GeneratorGradient, ::testing::Values(Arch::posthoc, Arch::multitask));

TEST(Generator, WeightedSumEqualsForcedLogprobs) {
  auto g = model(Arch::posthoc);
  const std::vector<Real> w{1, 1, 1};
  const Real total = g.sequence_logprob_backward(kCtx, kTargets, w);
  const auto lp = g.step_logprobs(kCtx, kTargets);
  Real s = 0;
  std::size_t n = 0;
  for (const auto& row : lp) {
    for (Real v : row) s -= v;
    n += row.size();
  }
  EXPECT_NEAR(total, s, 1e-10);
  EXPECT_NEAR(g.nll(kCtx, kTargets), s / static_cast<Real>(n), 1e-10);
}

TEST(Generator, RatingHeadGradientAndPosthocGuard) {
  auto g = model(Arch::multitask);
  const std::vector<double> r{5, 1, 3};
  auto loss = [&] {
    const RowVector p = g.predict_ratings(kCtx);
    Real s = 0;
    for (Index i = 0; i < p.size(); ++i) s += (p(i) - r[static_cast<std::size_t>(i)]) * (p(i) - r[static_cast<std::size_t>(i)]);
    return s / 3;
  };
  EXPECT_LT(support::max_grad_error(g.params(), loss, [&] { g.rating_backward(kCtx, r, 1.0); }), 1e-5);
  auto p = model(Arch::posthoc);
  EXPECT_FALSE(p.has_rating_head());
  EXPECT_THROW(p.predict_ratings(kCtx), UsageError);
}

TEST(Generator, GreedyDecodingIsDeterministicAndBounded) {
  const auto g = model(Arch::posthoc);
  const auto a = g.generate(kCtx, DecodeMode::greedy);
  const auto b = g.generate(kCtx, DecodeMode::greedy);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_LE(static_cast<Index>(a[i].tokens.size()), g.max_len());
    EXPECT_EQ(a[i].step_dist.size(), a[i].tokens.size());
    EXPECT_EQ(a[i].step_logprob.size(), a[i].tokens.size());
  }
}

TEST(Generator, SamplingFollowsTheSeedAndReferenceCoincides) {
  const auto g = model(Arch::multitask);
  Rng r1(3), r2(3);
  const auto a = g.generate(kCtx, DecodeMode::sample, &r1, &g);
  const auto b = g.generate(kCtx, DecodeMode::sample, &r2, &g);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    ASSERT_TRUE(a[i].predicted_rating.has_value());
    // a frozen copy of the current policy gives zero KL
    EXPECT_EQ(rewards::kl_reward(a[i]), 0.0);
  }
}

TEST(Generator, CheckpointRoundTripAndVocabularyGuard) {
  auto g = model(Arch::multitask);
  const auto j = g.to_json();
  const auto back = Generator::from_json(j, "vh");
  EXPECT_EQ(back.checkpoint_hash(), g.checkpoint_hash());
  EXPECT_EQ(back.predict_ratings(kCtx), g.predict_ratings(kCtx));
  EXPECT_EQ(back.users().ids(), g.users().ids());
  EXPECT_THROW(Generator::from_json(j, "other"), DataError);
}

TEST(Pretrain, PosthocReducesTrainNll) {
  std::vector<Example> train;
  for (int i = 0; i < 60; ++i) {
    Example e;
    e.ctx = {.user = i % 2, .item = i % 3, .rating = 1 + i % 5, .feature = i % 3};
    e.rating = e.ctx.rating;
    e.target = make_target({4 + i % 5, 8}, 6);
    train.push_back(e);
  }
  auto cfg = tiny(Arch::posthoc);
  cfg.epochs = 4;
  cfg.lr = 1e-2;
  const auto res = pretrain_posthoc(train, train, cfg, 9, "vh", IdMap({"u0", "u1"}), IdMap({"i0", "i1", "i2"}), 3);
  ASSERT_EQ(res.curve.size(), 5u);
  EXPECT_EQ(res.curve.front().epoch, 0);
  EXPECT_LT(res.curve.back().train_nll, res.curve.front().train_nll);
}
