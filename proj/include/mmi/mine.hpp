#pragma once

// Mutual information neural estimation with the Donsker-Varadhan bound
//   I(X;Y) >= E_P[T] - log E_{P_X x P_Y}[e^T].

#include "mmi/core/random.hpp"
#include "mmi/nn/linear.hpp"

#include <functional>
#include <optional>
#include <span>

#include <json.hpp>

namespace mmi::mine {

enum class Activation { relu, elu };
enum class Target { rating, feature };

std::string to_string(Target t);
Target target_from_string(const std::string& s);

/// mean(joint) - log(mean(exp(marginal))), the latter computed stably.
Real dv_objective(std::span<const Real> joint_scores, std::span<const Real> marginal_scores);

template <class DerivedJ, class DerivedM>
Real dv_objective(const Eigen::MatrixBase<DerivedJ>& joint, const Eigen::MatrixBase<DerivedM>& marginal) {
  const Eigen::Ref<const Vector> j = joint.derived().reshaped();
  const Eigen::Ref<const Vector> m = marginal.derived().reshaped();
  return dv_objective(std::span<const Real>(j.data(), static_cast<std::size_t>(j.size())),
                      std::span<const Real>(m.data(), static_cast<std::size_t>(m.size())));
}

/// Columns of y permuted by a plain uniform shuffle; x is left alone.
Matrix make_marginal_batch(const Matrix& y, Rng& rng);
std::vector<Index> marginal_permutation(Index n, Rng& rng);

/// Three-layer MLP scoring concatenated (x, y) columns. The output layer
/// starts at zero so an untrained network is exactly T = 0.
class StatisticsNet {
 public:
  struct Trace {
    Matrix input, a1, h1, a2, h2;
  };

  StatisticsNet() = default;
  StatisticsNet(Index x_dim, Index y_dim, Index hidden, Activation act, std::uint64_t seed);

  RowVector forward(const Matrix& x, const Matrix& y, Trace* trace = nullptr) const;
  void backward(const Trace& trace, const RowVector& grad_scores);

  Index x_dim() const { return x_dim_; }
  Index y_dim() const { return y_dim_; }
  Index hidden() const { return l1_.out_dim(); }
  Activation activation() const { return act_; }
  nn::ParamList<Real> params();
  nn::ParamList<Real> params() const { return const_cast<StatisticsNet*>(this)->params(); }

 private:
  Matrix activate(const Matrix& a) const;
  Matrix activate_grad(const Matrix& a, const Matrix& h) const;

  Index x_dim_ = 0, y_dim_ = 0;
  Activation act_ = Activation::elu;
  nn::Linear<Real> l1_, l2_, l3_;
};

struct MineConfig {
  Index hidden = 128;
  Activation activation = Activation::elu;
  long steps = 5000;      // hard cap
  long min_steps = 1000;  // no convergence test before this
  Index batch = 256;
  double lr = 1e-3;
  double ema_decay = 0.99;
  long window = 50;
  double rel_tol = 1e-3;
  int eval_shuffles = 10;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static MineConfig from_json(const nlohmann::json& j);
};

class MIEstimator {
 public:
  MIEstimator() = default;
  MIEstimator(Target tag, Index x_dim, Index y_dim, const MineConfig& config);
  // Copies and moves carry the optimiser state over to the new parameters.
  MIEstimator(const MIEstimator& other);
  MIEstimator(MIEstimator&& other) noexcept;
  MIEstimator& operator=(const MIEstimator& other);
  MIEstimator& operator=(MIEstimator&& other) noexcept;

  RowVector scores(const Matrix& x, const Matrix& y) const { return net_.forward(x, y); }
  Real score(const Vector& x, const Vector& y) const;

  /// One optimisation step on a joint batch with its in-batch shuffle as the
  /// marginal sample. The denominator gradient is scaled by the moving average
  /// so the update is not biased by the minibatch estimate of E[e^T].
  Real train_step(const Matrix& x, const Matrix& y, Rng& rng);

  Target tag() const { return tag_; }
  Real ema_denominator() const { return std::exp(log_ema_); }
  Real log_ema_denominator() const { return log_ema_; }
  Real ema_decay() const { return decay_; }
  const StatisticsNet& net() const { return net_; }
  StatisticsNet& net() { return net_; }

  std::string encoder_hash;

  nlohmann::json to_json() const;
  static MIEstimator from_json(const nlohmann::json& j);

  /// Resets the optimiser (learning rate from the given options).
  void reset_optimizer(const nn::AdamOptions& opts);

 private:
  Target tag_ = Target::rating;
  StatisticsNet net_;
  Real log_ema_ = 0.0;  // log of the moving average of E[e^T]; starts at log 1
  Real decay_ = 0.99;
  MineConfig config_;
  std::optional<nn::Adam<Real>> opt_;
};

struct PairBatch {
  Matrix x, y;  // columns are paired samples
};

using PairSampler = std::function<PairBatch(Index batch, Rng& rng)>;

/// Samples with replacement from a fixed paired data set.
PairSampler dataset_sampler(Matrix x, Matrix y);

struct TrainingCurve {
  std::vector<Real> bounds;  // per-step minibatch DV value
  long steps = 0;
  bool converged = false;
};

/// Trains a fresh estimator until the moving-average bound settles or the
/// step cap is hit. NaN scores raise TrainingError.
MIEstimator train_mine(Target tag, Index x_dim, Index y_dim, const PairSampler& sampler, const MineConfig& config,
                       TrainingCurve* curve = nullptr);

/// Continues training an existing estimator for a fixed number of steps.
void continue_training(MIEstimator& est, const PairSampler& sampler, long steps, Index batch, Rng& rng,
                       TrainingCurve* curve = nullptr);

/// DV value on a full evaluation set, averaging the marginal term over
/// `shuffles` independent permutations.
Real estimate_mi(const MIEstimator& est, const Matrix& x, const Matrix& y, int shuffles, Rng& rng);

/// Entropy of the empirical class distribution of one-hot columns.
Real onehot_entropy(const Matrix& onehots);

struct NormalizedMI {
  Real raw_mi = 0;
  Real entropy = 0;
  Real raw = 0;      // raw_mi / entropy
  Real clamped = 0;  // raw clamped to [0, 1]
};

/// estimate_mi / H(R). A single-valued rating distribution throws.
NormalizedMI normalized_mi(const MIEstimator& est, const Matrix& x, const Matrix& rating_onehots, int shuffles, Rng& rng);

}  // namespace mmi::mine
