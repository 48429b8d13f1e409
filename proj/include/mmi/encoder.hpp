#pragma once

// Sentence encoder: token embedding -> bidirectional GRU -> masked mean pool.
// A 5-way rating head on top doubles as the sentiment classifier.

#include "mmi/corpus.hpp"
#include "mmi/nn/embedding.hpp"
#include "mmi/nn/gru.hpp"
#include "mmi/nn/linear.hpp"

#include <json.hpp>

namespace mmi::encoder {

/// One-hot of a real rating: clamp to [1, 5], round half up.
Vector rating_onehot(double rating);
/// Integer rating class 1..5 under the same rule.
int rating_class(double rating);

struct EncoderConfig {
  Index embed_dim = 64;     // d_F, also the feature embedding size
  Index sentence_dim = 64;  // d_E, split evenly across the two directions
  int epochs = 6;
  Index batch = 32;
  double lr = 2e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

class SentenceEncoder {
 public:
  SentenceEncoder() = default;
  SentenceEncoder(Index vocab_size, std::string vocab_hash, const EncoderConfig& config);

  Vector encode(const TokenSeq& tokens) const;
  /// Column c is the embedding of seqs[c].
  Matrix encode_batch(const std::vector<TokenSeq>& seqs) const;

  /// Token-embedding row of a vocabulary id (the frozen feature embedding F).
  Vector token_embedding(TokenId id) const;

  /// Rating-class probabilities (5 x B).
  Matrix class_probabilities(const std::vector<TokenSeq>& seqs) const;
  /// Predicted rating 1..5 per sequence.
  std::vector<int> classify(const std::vector<TokenSeq>& seqs) const;

  Index sentence_dim() const { return 2 * fwd_.hidden(); }
  Index embed_dim() const { return embed_.dim(); }
  Index vocab_size() const { return embed_.count(); }
  const std::string& vocab_hash() const { return vocab_hash_; }
  bool trained() const { return trained_; }

  nlohmann::json to_json() const;
  /// Refuses checkpoints built against a different vocabulary.
  static SentenceEncoder from_json(const nlohmann::json& j, const std::string& expected_vocab_hash);
  std::string checkpoint_hash() const;

 private:
  friend struct EncoderTrainer;

  struct Batch {
    std::vector<std::vector<int>> steps;  // steps[t][b]
    std::vector<RowVector> masks;         // masks[t](b)
    RowVector lengths;
  };
  struct Trace {
    std::vector<nn::GruCell<Real>::Cache> fwd, bwd;
    std::vector<Matrix> hf, hb;
  };

  static Batch make_batch(const std::vector<TokenSeq>& seqs);
  Matrix forward(const Batch& batch, Trace* trace) const;
  void backward(const Batch& batch, const Trace& trace, const Matrix& grad_pooled);
  nn::ParamList<Real> params();
  nn::ParamList<Real> params() const { return const_cast<SentenceEncoder*>(this)->params(); }

  nn::Embedding<Real> embed_;
  nn::GruCell<Real> fwd_, bwd_;
  nn::Linear<Real> head_;
  std::string vocab_hash_;
  EncoderConfig config_;
  bool trained_ = false;
};

struct EncoderReport {
  SentenceEncoder encoder;
  double heldout_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

/// Trains the encoder jointly with the rating head on labelled sequences
/// (ratings 1..5). Accuracy is measured on the held-out set.
EncoderReport train_encoder(const std::vector<TokenSeq>& train, const std::vector<int>& train_ratings,
                            const std::vector<TokenSeq>& heldout, const std::vector<int>& heldout_ratings,
                            Index vocab_size, const std::string& vocab_hash, const EncoderConfig& config);

EncoderReport train_encoder(const std::vector<corpus::ReviewRecord>& train,
                            const std::vector<corpus::ReviewRecord>& heldout, const corpus::Vocabulary& vocab,
                            const EncoderConfig& config);

/// Feature embedding rows for a feature list; words missing from the vocabulary fall back to UNK.
struct FeatureTable {
  Matrix rows;  // embed_dim x K
  std::vector<std::string> missing;
};
FeatureTable feature_embeddings(const SentenceEncoder& enc, const corpus::Vocabulary& vocab,
                                const std::vector<std::string>& features);

/// Feature row by index; out-of-range indices throw.
Vector feature_embedding(const FeatureTable& table, Index feature);

}  // namespace mmi::encoder
