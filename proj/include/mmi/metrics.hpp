#pragma once

// Explanation quality and alignment metrics. Percentages are on a 0-100 scale.

#include "mmi/backbone.hpp"
#include "mmi/encoder.hpp"
#include "mmi/mine.hpp"

#include <optional>

#include <json.hpp>

namespace mmi::metrics {

using Sentence = std::vector<std::string>;

/// Share of explanations containing their feature token.
double fmr(const std::vector<Sentence>& explanations, const std::vector<std::string>& features);

/// 0 negative (1-2), 1 neutral (3), 2 positive (4-5).
int coarse_class(int rating);

/// Agreement between predicted and target rating classes at 5 or 3 levels.
double sentiment_accuracy(const std::vector<int>& predicted, const std::vector<int>& targets, int granularity);
double sentiment_accuracy(const std::vector<TokenSeq>& explanations, const std::vector<int>& targets,
                          const encoder::SentenceEncoder& classifier, int granularity);

/// Corpus BLEU with uniform weights over orders 1..n, no smoothing.
double bleu(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references, int n);

enum class Rouge { unigram, lcs };
/// Mean per-pair F1.
double rouge(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references, Rouge variant);

std::size_t lcs_length(const Sentence& a, const Sentence& b);

struct EvaluationReport {
  double nmi = 0;      // clamped to [0, 1]
  double nmi_raw = 0;
  double mi_rating = 0;  // nats, before normalisation
  double rating_entropy = 0;
  double mi_feature = 0;  // nats
  double fmr = 0;
  double sent_acc_5 = 0;
  double sent_acc_3 = 0;
  double bleu1 = 0, bleu4 = 0;
  double rouge1 = 0, rougeL = 0;
  std::size_t n_samples = 0;
  std::optional<double> rmse, mae;

  nlohmann::json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

struct GenerationRecord {
  std::string user, item;
  Sentence explanation;
  Sentence reference;
  int target_rating = 0;
  std::optional<double> predicted_rating;
  std::string assigned_feature;

  nlohmann::json to_json() const;
};

struct EvaluateOptions {
  mine::MineConfig mine;
  bool rating_mi = true;
  bool feature_mi = true;
  bool sentiment = true;
  std::uint64_t seed = 1;
};

/// Greedy generation over the split followed by every metric. The MI
/// columns come from estimators trained from scratch on the generations.
EvaluationReport evaluate(const backbone::Generator& model, const std::vector<backbone::Example>& split,
                          const encoder::SentenceEncoder& encoder, const encoder::FeatureTable& features,
                          const corpus::Vocabulary& vocab, const std::vector<std::string>& feature_names,
                          const EvaluateOptions& options, std::vector<GenerationRecord>* dump = nullptr);

/// Rating used as the alignment target: the model's prediction when it has a
/// rating head, the ground truth otherwise.
std::vector<int> target_ratings(const backbone::Generator& model, const std::vector<backbone::Example>& split);

}  // namespace mmi::metrics
