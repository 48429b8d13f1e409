#pragma once

// Toy explanation generators. Both share a GRU decoder initialised from the
// attribute context; the multi-task variant adds a rating regressor on the
// shared user/item embeddings.

#include "mmi/corpus.hpp"
#include "mmi/nn/embedding.hpp"
#include "mmi/nn/gru.hpp"
#include "mmi/nn/linear.hpp"

#include <optional>
#include <span>

#include <json.hpp>

namespace mmi::backbone {

enum class Arch { posthoc, multitask };
enum class DecodeMode { greedy, sample };

std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);

/// String id -> table row. Unknown ids share the final row.
class IdMap {
 public:
  IdMap() = default;
  explicit IdMap(std::vector<std::string> ids);
  Index lookup(const std::string& id) const;
  Index table_size() const { return static_cast<Index>(ids_.size()) + 1; }
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, Index> index_;
};

struct Context {
  Index user = 0;
  Index item = 0;
  int rating = 3;      // read only by post-hoc models conditioned on rating
  Index feature = -1;  // -1 means no feature; read only by feature-conditioned models
};

struct Example {
  Context ctx;
  TokenSeq target;  // words followed by EOS, truncated to max_len
  int rating = 3;
  Index annotated_feature = -1;
  Index assigned_feature = -1;
};

struct GeneratedSample {
  TokenSeq tokens;  // includes the EOS when one was produced
  std::vector<Real> step_logprob;
  std::vector<Vector> step_dist;
  std::vector<Vector> ref_dist;  // empty without a reference model
  std::optional<Real> predicted_rating;

  /// Tokens before the first EOS.
  TokenSeq words() const;
};

struct BackboneConfig {
  Arch arch = Arch::posthoc;
  bool use_rating = true;    // post-hoc only
  bool use_feature = false;
  Index attr_dim = 16;
  Index word_dim = 32;
  Index hidden = 64;
  Index rating_hidden = 32;
  Index max_len = 20;
  int epochs = 8;
  Index batch = 32;
  double lr = 3e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
};

class Generator {
 public:
  Generator() = default;
  Generator(const BackboneConfig& config, Index vocab_size, std::string vocab_hash, IdMap users, IdMap items,
            Index n_features);

  /// Accumulates gradients of sum_b weights[b] * (-log p(targets[b] | ctx[b]))
  /// and returns that weighted sum. Targets are scored with teacher forcing
  /// from BOS; a target need not end in EOS.
  Real sequence_logprob_backward(const std::vector<Context>& ctx, const std::vector<TokenSeq>& targets,
                                 std::span<const Real> weights);

  /// Per-step log-probabilities of forced targets (no gradients).
  std::vector<std::vector<Real>> step_logprobs(const std::vector<Context>& ctx,
                                               const std::vector<TokenSeq>& targets) const;

  /// Mean per-token NLL of the targets.
  Real nll(const std::vector<Context>& ctx, const std::vector<TokenSeq>& targets) const;

  /// Autoregressive decoding in lockstep over the batch. With a reference
  /// model, its step distributions along the same prefix are recorded too.
  std::vector<GeneratedSample> generate(const std::vector<Context>& ctx, DecodeMode mode, Rng* rng = nullptr,
                                        const Generator* reference = nullptr) const;

  bool has_rating_head() const { return config_.arch == Arch::multitask; }
  /// Raw regression output; throws for post-hoc models.
  Real predict_rating(Index user, Index item) const;
  RowVector predict_ratings(const std::vector<Context>& ctx) const;
  /// Accumulates scale * grad of the batch MSE and returns the MSE.
  Real rating_backward(const std::vector<Context>& ctx, std::span<const double> ratings, Real scale);

  const BackboneConfig& config() const { return config_; }
  Index vocab_size() const { return out_.out_dim(); }
  Index n_features() const { return n_features_; }
  const std::string& vocab_hash() const { return vocab_hash_; }
  const IdMap& users() const { return users_; }
  const IdMap& items() const { return items_; }
  Index max_len() const { return config_.max_len; }

  nn::ParamList<Real> params();
  nn::ParamList<Real> params() const { return const_cast<Generator*>(this)->params(); }

  nlohmann::json to_json() const;
  static Generator from_json(const nlohmann::json& j, const std::string& expected_vocab_hash);
  std::string checkpoint_hash() const;

 private:
  struct Trace {
    Matrix ctx, h0;
    std::vector<std::vector<int>> inputs, targets;
    std::vector<RowVector> masks;
    std::vector<nn::GruCell<Real>::Cache> cells;
    std::vector<Matrix> hs, logp;
  };

  Matrix context_matrix(const std::vector<Context>& ctx) const;
  void context_backward(const std::vector<Context>& ctx, const Matrix& grad);
  Matrix initial_state(const Matrix& ctx) const;
  Matrix step_input(const std::vector<int>& prev, const Matrix& ctx) const;
  void teacher_forward(const std::vector<Context>& ctx, const std::vector<TokenSeq>& targets, Trace& trace) const;
  Matrix rating_hidden(const std::vector<Context>& ctx, Matrix* input) const;

  BackboneConfig config_;
  std::string vocab_hash_;
  IdMap users_, items_;
  Index n_features_ = 0;
  nn::Embedding<Real> user_emb_, item_emb_, rating_emb_, feature_emb_, word_emb_;
  nn::Linear<Real> init_, out_;
  nn::GruCell<Real> cell_;
  nn::Linear<Real> rate1_, rate2_;
};

/// Targets for a token sequence: words plus EOS, cut to max_len with the EOS kept.
TokenSeq make_target(const TokenSeq& words, Index max_len);

struct CurveRow {
  int epoch = 0;
  double train_nll = 0, valid_nll = 0;
  double valid_rmse = 0, valid_mae = 0;  // multi-task only
};

struct PretrainResult {
  Generator model;
  std::vector<CurveRow> curve;
};

/// Batch loss for the backbone objective: per-token NLL, plus MSE for
/// multi-task models. Gradients are scaled by `scale`.
struct BackboneLoss {
  Real nll = 0, mse = 0;
  Real total() const { return nll + mse; }
};
BackboneLoss backbone_backward(Generator& model, const std::vector<const Example*>& batch, Real scale);

PretrainResult pretrain_posthoc(const std::vector<Example>& train, const std::vector<Example>& valid,
                                const BackboneConfig& config, Index vocab_size, const std::string& vocab_hash,
                                IdMap users, IdMap items, Index n_features);

PretrainResult pretrain_multitask(const std::vector<Example>& train, const std::vector<Example>& valid,
                                  const BackboneConfig& config, Index vocab_size, const std::string& vocab_hash,
                                  IdMap users, IdMap items, Index n_features);

struct RatingError {
  double rmse = 0, mae = 0;
};
RatingError rating_error(const Generator& model, const std::vector<Example>& examples);

std::vector<Context> contexts_of(const std::vector<Example>& examples);

}  // namespace mmi::backbone
