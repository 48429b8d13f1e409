#include "mmi/metrics.hpp"

#include "support.hpp"

using namespace mmi;
using namespace mmi::metrics;

namespace {

Sentence words(const std::string& s) { return corpus::tokenize(s); }

}  // namespace

TEST(Bleu, IdenticalCorpusScoresHundred) {
  const std::vector<Sentence> c{words("the soup was great"), words("the staff were kind and quick")};
  EXPECT_NEAR(bleu(c, c, 1), 100.0, 1e-9);
  EXPECT_NEAR(bleu(c, c, 4), 100.0, 1e-9);
}

TEST(Bleu, ClipsRepeatedUnigrams) {
  EXPECT_NEAR(bleu({words("the the the")}, {words("the cat")}, 1), 100.0 / 3, 1e-9);
}

TEST(Bleu, ShortCandidatesPayBrevity) {
  EXPECT_NEAR(bleu({words("the cat")}, {words("the cat sat down")}, 1), 100.0 * std::exp(-1.0), 1e-9);
  EXPECT_EQ(bleu({words("a b")}, {words("c d")}, 1), 0.0);
  EXPECT_EQ(bleu({words("a b")}, {words("a c")}, 2), 0.0);
  EXPECT_THROW(bleu({}, {}, 1), std::invalid_argument);
}

TEST(Rouge, LcsAndUnigramF1) {
  EXPECT_EQ(lcs_length(words("a b c d"), words("a c d")), 3u);
  EXPECT_NEAR(rouge({words("a b c")}, {words("a b c d")}, Rouge::lcs), 600.0 / 7, 1e-9);
  EXPECT_NEAR(rouge({words("c b a")}, {words("a b c d")}, Rouge::unigram), 600.0 / 7, 1e-9);
  EXPECT_NEAR(rouge({words("c b a")}, {words("a b c d")}, Rouge::lcs), 2 * (1.0 / 3) * 0.25 / (1.0 / 3 + 0.25) * 100,
              1e-9);
  EXPECT_EQ(rouge({Sentence{}}, {words("a")}, Rouge::lcs), 0.0);
}

TEST(Fmr, ShareOfExplanationsNamingTheirFeature) {
  const std::vector<Sentence> e{words("the soup was hot"), words("great service"), words("the pasta")};
  EXPECT_NEAR(fmr(e, {"soup", "pasta", "pasta"}), 200.0 / 3, 1e-9);
  EXPECT_THROW(fmr(e, {"soup"}), std::invalid_argument);
}

TEST(Sentiment, CoarseAccuracyNeverBelowFine) {
  EXPECT_EQ(coarse_class(1), 0);
  EXPECT_EQ(coarse_class(2), 0);
  EXPECT_EQ(coarse_class(3), 1);
  EXPECT_EQ(coarse_class(5), 2);
  const std::vector<int> pred{1, 2, 4, 5, 3, 3}, gold{2, 2, 5, 5, 3, 1};
  EXPECT_NEAR(sentiment_accuracy(pred, gold, 5), 50.0, 1e-9);
  EXPECT_NEAR(sentiment_accuracy(pred, gold, 3), 500.0 / 6, 1e-9);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> p(20), g(20);
    for (int i = 0; i < 20; ++i) {
      p[i] = 1 + static_cast<int>(uniform_index(rng, 5));
      g[i] = 1 + static_cast<int>(uniform_index(rng, 5));
    }
    EXPECT_GE(sentiment_accuracy(p, g, 3), sentiment_accuracy(p, g, 5));
  }
  EXPECT_THROW(sentiment_accuracy(pred, gold, 4), std::invalid_argument);
}

TEST(Report, CsvHeaderIsFixed) {
  EXPECT_EQ(EvaluationReport::csv_header(), "I(R;E)/H(R),5-class,3-class,I(F;E),FMR,B-1,B-4,R-1,R-L,n_samples");
  EvaluationReport r;
  r.nmi = 0.5;
  r.n_samples = 7;
  const auto row = r.csv_row();
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 9);
  EXPECT_FALSE(r.to_json().contains("rmse"));
  r.rmse = 1.0;
  EXPECT_EQ(r.to_json()["rmse"], 1.0);
}
