#pragma once

// Policy-gradient fine-tuning with MI/KL/entropy rewards, alternating
// estimator refreshes and the multi-task loss mix.

#include "mmi/backbone.hpp"
#include "mmi/encoder.hpp"
#include "mmi/metrics.hpp"
#include "mmi/mine.hpp"
#include "mmi/rewards.hpp"

#include <concepts>
#include <functional>
#include <optional>
#include <span>

#include <json.hpp>

namespace mmi::finetune {

enum class Task { rating, feature, both };
enum class Baseline { none, batch_mean };
enum class Weighting { fixed, dwa };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct FinetuneConfig {
  Task task = Task::rating;
  int epochs = 8;
  Index batch = 64;
  Index samples_per_epoch = 1024;
  double lr = 1e-3;
  double clip_norm = 5.0;
  Baseline baseline = Baseline::batch_mean;
  Weighting weighting = Weighting::fixed;
  double alpha = 0.5;
  double beta = 0.01;
  double tau = 2.0;
  bool use_kl = true;
  bool use_entropy = true;
  rewards::KlDirection kl_direction = rewards::KlDirection::reference_to_current;
  double lambda = 0.5;  // multi-task backbones only
  double epsilon = 0.2;  // task both only
  int refresh_every = 1;  // generator epochs per estimator epoch; 0 disables
  long refresh_steps = 200;
  Index refresh_batch = 128;
  double refresh_generated_share = 0.5;
  long valid_mine_steps = 300;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static FinetuneConfig from_json(const nlohmann::json& j);
};

/// Anything that can accumulate gradients of weighted sequence NLL.
template <class P, class Ctx>
concept Policy = requires(P& p, const std::vector<Ctx>& ctx, const std::vector<TokenSeq>& seqs,
                          std::span<const Real> w) {
  { p.sequence_logprob_backward(ctx, seqs, w) } -> std::convertible_to<Real>;
  { p.params() } -> std::convertible_to<nn::ParamList<Real>>;
};

/// Batch mean computed relative to the first reward, so a constant batch
/// yields exactly that constant.
Real batch_baseline(std::span<const Real> rewards, Baseline mode);

struct RLStats {
  Real loss = 0;  // batch mean of (reward - baseline) * (-log p)
  Real mean_reward = 0;
  Real baseline = 0;
};

/// Accumulates scale * grad of mean_b -(r_b - baseline) log p(seq_b): the
/// REINFORCE estimate with a terminal reward.
template <class Ctx, Policy<Ctx> P>
RLStats rl_gradient(P& policy, const std::vector<Ctx>& ctx, const std::vector<TokenSeq>& seqs,
                    std::span<const Real> rewards, Baseline baseline, Real scale = 1) {
  if (rewards.size() != seqs.size() || ctx.size() != seqs.size())
    throw std::invalid_argument("rl_gradient: batch size mismatch");
  RLStats st;
  if (seqs.empty()) return st;
  const Real B = static_cast<Real>(seqs.size());
  st.baseline = batch_baseline(rewards, baseline);
  for (Real r : rewards) st.mean_reward += r;
  st.mean_reward /= B;
  std::vector<Real> w(seqs.size());
  bool any = false;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    w[i] = (rewards[i] - st.baseline) / B;
    any = any || w[i] != 0;
  }
  if (!any || scale == 0) return st;
  std::vector<Real> scaled(w);
  for (auto& v : scaled) v *= scale;
  st.loss = policy.sequence_logprob_backward(ctx, seqs, scaled) / scale;
  return st;
}

/// One optimiser step of rl_gradient. Non-finite gradients throw TrainingError.
template <class Ctx, Policy<Ctx> P>
RLStats rl_step(P& policy, nn::Adam<Real>& opt, const std::vector<Ctx>& ctx, const std::vector<TokenSeq>& seqs,
                std::span<const Real> rewards, Baseline baseline) {
  auto params = policy.params();
  nn::zero_grads(params);
  const auto st = rl_gradient(policy, ctx, seqs, rewards, baseline);
  if (!nn::grads_finite(params)) {
    std::string dump;
    for (std::size_t i = 0; i < std::min<std::size_t>(seqs.size(), 4); ++i) {
      dump += "\n  sample " + std::to_string(i) + ":";
      for (TokenId t : seqs[i]) dump += " " + std::to_string(t);
      dump += " reward " + std::to_string(rewards[i]);
    }
    throw TrainingError("policy gradient became non-finite" + dump);
  }
  opt.step();
  return st;
}

/// Position-wise categorical policy over a small vocabulary and fixed
/// length. Small enough to enumerate every sequence exactly.
class TabularPolicy {
 public:
  struct Context {};

  TabularPolicy(Index vocab, Index length);

  std::vector<TokenSeq> sample(std::size_t n, Rng& rng) const;
  Real log_prob(const TokenSeq& seq) const;
  Matrix probabilities() const;  // vocab x length
  Real sequence_logprob_backward(const std::vector<Context>& ctx, const std::vector<TokenSeq>& seqs,
                                 std::span<const Real> weights);
  nn::ParamList<Real> params() { return {&logits}; }

  /// Every sequence of the policy's length.
  std::vector<TokenSeq> enumerate() const;

  nn::Param<Real> logits;  // vocab x length
};

/// d/dlogits of sum_seq p(seq) reward(seq), by enumeration.
Matrix exact_reward_gradient(const TabularPolicy& policy, const std::function<Real(const TokenSeq&)>& reward);

struct RefreshConfig {
  long steps = 200;
  Index batch = 128;
  double generated_share = 0.5;
};

/// Continues estimator training on batches mixing ground-truth pairs with
/// pairs built from fresh generations.
void refresh_estimator(mine::MIEstimator& estimator, const mine::PairSampler& ground_truth, const Matrix& gen_x,
                       const Matrix& gen_y, const RefreshConfig& config, Rng& rng);

/// lambda * rl + (1 - lambda) * backbone; lambda outside [0, 1] throws.
Real combined_objective(Real rl_loss, Real backbone_loss, Real lambda);

struct Estimators {
  std::optional<mine::MIEstimator> rating, feature;
};

struct FinetuneInputs {
  const encoder::SentenceEncoder* encoder = nullptr;
  const encoder::FeatureTable* features = nullptr;
  const corpus::Vocabulary* vocab = nullptr;
  std::vector<std::string> feature_names;
  std::vector<backbone::Example> train;  // contexts carry the annotated feature
  std::vector<backbone::Example> valid;  // contexts carry the assigned feature
};

struct StepLog {
  int epoch = 0;
  long step = 0;
  Real mi_mean = 0, kl_mean = 0, entropy_mean = 0;
  rewards::Weights weights;
  Real total_mean = 0;
  Real rl_loss = 0;
  Real backbone_loss = 0;
};

struct EpochLog {
  int epoch = 0;
  Real mi_mean = 0, kl_mean = 0, entropy_mean = 0, total_mean = 0;
  rewards::Weights weights;
  Real rl_loss = 0;
  Real backbone_loss = 0;
  bool refreshed = false;
  Real valid_nmi = 0, valid_fmr = 0, valid_bleu1 = 0, valid_rmse = 0;
  Real mean_length = 0;

  Real weighted_entropy() const { return weights.entropy * entropy_mean; }
};

struct FinetuneResult {
  backbone::Generator final_model;
  backbone::Generator best_model;
  int best_epoch = 0;
  std::vector<EpochLog> epochs;
  std::vector<StepLog> steps;
  Estimators estimators;
  std::vector<double> wall_seconds;  // kept apart from the comparable logs
};

/// Throws DataError when backbone, encoder and estimators were not built
/// against the same vocabulary and encoder.
void check_lineage(const backbone::Generator& model, const encoder::SentenceEncoder& encoder,
                   const Estimators& estimators);

FinetuneResult finetune(const backbone::Generator& pretrained, Estimators estimators, const FinetuneInputs& inputs,
                        const FinetuneConfig& config);

/// Backbone-loss-only continuation with the same batch order as finetune.
/// Returns the per-step backbone losses.
std::vector<Real> backbone_only_run(backbone::Generator& model, const FinetuneInputs& inputs,
                                    const FinetuneConfig& config);

std::string training_log_csv(const FinetuneResult& result);
std::string reward_log_csv(const FinetuneResult& result);

}  // namespace mmi::finetune
