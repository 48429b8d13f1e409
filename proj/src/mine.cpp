#include "mmi/mine.hpp"

#include "mmi/core/math.hpp"
#include "mmi/nn/serialize.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace mmi::mine {

std::string to_string(Target t) { return t == Target::rating ? "rating" : "feature"; }

Target target_from_string(const std::string& s) {
  if (s == "rating") return Target::rating;
  if (s == "feature") return Target::feature;
  throw UsageError("unknown estimator target '" + s + "'");
}

Real dv_objective(std::span<const Real> joint, std::span<const Real> marginal) {
  if (joint.empty() || marginal.empty()) throw std::invalid_argument("dv_objective: empty score batch");
  const Eigen::Map<const Vector> j(joint.data(), static_cast<Index>(joint.size()));
  const Eigen::Map<const Vector> m(marginal.data(), static_cast<Index>(marginal.size()));
  return j.mean() - log_mean_exp(m);
}

std::vector<Index> marginal_permutation(Index n, Rng& rng) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  shuffle(perm, rng);
  return perm;
}

Matrix make_marginal_batch(const Matrix& y, Rng& rng) {
  if (y.cols() < 2) throw std::invalid_argument("make_marginal_batch: need at least two pairs");
  const auto perm = marginal_permutation(y.cols(), rng);
  Matrix out(y.rows(), y.cols());
  for (Index c = 0; c < y.cols(); ++c) out.col(c) = y.col(perm[static_cast<std::size_t>(c)]);
  return out;
}

// ---------------------------------------------------------------------------

StatisticsNet::StatisticsNet(Index x_dim, Index y_dim, Index hidden, Activation act, std::uint64_t seed)
    : x_dim_(x_dim), y_dim_(y_dim), act_(act), l1_("t.l1", x_dim + y_dim, hidden), l2_("t.l2", hidden, hidden),
      l3_("t.l3", hidden, 1) {
  Rng rng(derive_seed(seed, 0x4d494e45));
  l1_.init(rng);
  l2_.init(rng);
  l3_.weight.value.setZero();
  l3_.bias.value.setZero();
}

nn::ParamList<Real> StatisticsNet::params() {
  nn::ParamList<Real> out;
  l1_.collect(out);
  l2_.collect(out);
  l3_.collect(out);
  return out;
}

Matrix StatisticsNet::activate(const Matrix& a) const {
  if (act_ == Activation::relu) return a.cwiseMax(0.0);
  return a.unaryExpr([](Real v) { return v > 0 ? v : std::expm1(v); });
}

Matrix StatisticsNet::activate_grad(const Matrix& a, const Matrix& h) const {
  if (act_ == Activation::relu) return (a.array() > 0).cast<Real>().matrix();
  return (a.array() > 0).select(Matrix::Ones(a.rows(), a.cols()), (h.array() + 1.0).matrix());
}

RowVector StatisticsNet::forward(const Matrix& x, const Matrix& y, Trace* trace) const {
  if (x.rows() != x_dim_ || y.rows() != y_dim_ || x.cols() != y.cols())
    throw std::invalid_argument("StatisticsNet: input shape mismatch");
  Matrix input(x_dim_ + y_dim_, x.cols());
  input << x, y;
  Matrix a1 = l1_.forward(input);
  Matrix h1 = activate(a1);
  Matrix a2 = l2_.forward(h1);
  Matrix h2 = activate(a2);
  RowVector out = l3_.forward(h2);
  if (trace) {
    trace->input = std::move(input);
    trace->a1 = std::move(a1);
    trace->h1 = std::move(h1);
    trace->a2 = std::move(a2);
    trace->h2 = std::move(h2);
  }
  return out;
}

void StatisticsNet::backward(const Trace& t, const RowVector& grad_scores) {
  Matrix g3 = grad_scores;
  Matrix dh2 = l3_.backward(g3, t.h2);
  Matrix da2 = dh2.cwiseProduct(activate_grad(t.a2, t.h2));
  Matrix dh1 = l2_.backward(da2, t.h1);
  Matrix da1 = dh1.cwiseProduct(activate_grad(t.a1, t.h1));
  l1_.backward(da1, t.input);
}

// ---------------------------------------------------------------------------

nlohmann::json MineConfig::to_json() const {
  return {{"hidden", hidden}, {"activation", activation == Activation::relu ? "relu" : "elu"}, {"steps", steps},
          {"min_steps", min_steps}, {"batch", batch}, {"lr", lr}, {"ema_decay", ema_decay}, {"window", window},
          {"rel_tol", rel_tol}, {"eval_shuffles", eval_shuffles}, {"seed", seed}};
}

MineConfig MineConfig::from_json(const nlohmann::json& j) {
  MineConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.activation = j.value("activation", std::string("elu")) == "relu" ? Activation::relu : Activation::elu;
  c.steps = j.value("steps", c.steps);
  c.min_steps = j.value("min_steps", c.min_steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.window = j.value("window", c.window);
  c.rel_tol = j.value("rel_tol", c.rel_tol);
  c.eval_shuffles = j.value("eval_shuffles", c.eval_shuffles);
  c.seed = j.value("seed", c.seed);
  return c;
}

MIEstimator::MIEstimator(Target tag, Index x_dim, Index y_dim, const MineConfig& config)
    : tag_(tag), net_(x_dim, y_dim, config.hidden, config.activation, config.seed), decay_(config.ema_decay),
      config_(config) {
  if (!(decay_ > 0 && decay_ < 1)) throw UsageError("ema_decay must lie in (0, 1)");
  reset_optimizer({.lr = config.lr});
}

MIEstimator::MIEstimator(const MIEstimator& o)
    : encoder_hash(o.encoder_hash), tag_(o.tag_), net_(o.net_), log_ema_(o.log_ema_), decay_(o.decay_),
      config_(o.config_), opt_(o.opt_) {
  if (opt_) opt_->rebind(net_.params());
}

MIEstimator::MIEstimator(MIEstimator&& o) noexcept
    : encoder_hash(std::move(o.encoder_hash)), tag_(o.tag_), net_(std::move(o.net_)), log_ema_(o.log_ema_),
      decay_(o.decay_), config_(o.config_), opt_(std::move(o.opt_)) {
  if (opt_) opt_->rebind(net_.params());
}

MIEstimator& MIEstimator::operator=(const MIEstimator& o) {
  if (this != &o) *this = MIEstimator(o);
  return *this;
}

MIEstimator& MIEstimator::operator=(MIEstimator&& o) noexcept {
  encoder_hash = std::move(o.encoder_hash);
  tag_ = o.tag_;
  net_ = std::move(o.net_);
  log_ema_ = o.log_ema_;
  decay_ = o.decay_;
  config_ = o.config_;
  opt_ = std::move(o.opt_);
  if (opt_) opt_->rebind(net_.params());
  return *this;
}

void MIEstimator::reset_optimizer(const nn::AdamOptions& opts) { opt_.emplace(net_.params(), opts); }

Real MIEstimator::score(const Vector& x, const Vector& y) const { return net_.forward(x, y)(0); }

Real MIEstimator::train_step(const Matrix& x, const Matrix& y, Rng& rng) {
  const Index B = x.cols();
  const Matrix y_marg = make_marginal_batch(y, rng);
  StatisticsNet::Trace tj, tm;
  const RowVector joint = net_.forward(x, y, &tj);
  const RowVector marg = net_.forward(x, y_marg, &tm);
  if (!all_finite(joint) || !all_finite(marg)) throw TrainingError("MINE scores became non-finite");

  const Real batch_log_denom = log_mean_exp(marg);
  const Real bound = joint.mean() - batch_log_denom;
  // log-space moving average of E[e^T]
  const Real a = std::log(decay_) + log_ema_;
  const Real b = std::log1p(-decay_) + batch_log_denom;
  const Real hi = std::max(a, b);
  log_ema_ = hi + std::log(std::exp(a - hi) + std::exp(b - hi));

  // loss = -(mean T_joint) + mean(e^{T_marg}) / ema
  const RowVector g_joint = RowVector::Constant(B, -1.0 / static_cast<Real>(B));
  const RowVector g_marg = ((marg.array() - log_ema_).exp() / static_cast<Real>(B)).matrix();
  auto params = net_.params();
  nn::zero_grads(params);
  net_.backward(tj, g_joint);
  net_.backward(tm, g_marg);
  if (!nn::grads_finite(params)) throw TrainingError("MINE gradient became non-finite");
  opt_->step();
  return bound;
}

nlohmann::json MIEstimator::to_json() const {
  return {{"kind", "mine_estimator"}, {"tag", to_string(tag_)}, {"x_dim", net_.x_dim()}, {"y_dim", net_.y_dim()},
          {"log_ema", log_ema_}, {"ema_decay", decay_}, {"encoder_hash", encoder_hash},
          {"config", config_.to_json()}, {"params", nn::params_to_json(net_.params())}};
}

MIEstimator MIEstimator::from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "mine_estimator") throw DataError("not an estimator checkpoint");
  MIEstimator e(target_from_string(j.at("tag").get<std::string>()), j.at("x_dim").get<Index>(),
                j.at("y_dim").get<Index>(), MineConfig::from_json(j.at("config")));
  nn::params_from_json(e.net_.params(), j.at("params"));
  e.log_ema_ = j.at("log_ema").get<Real>();
  e.decay_ = j.at("ema_decay").get<Real>();
  e.encoder_hash = j.value("encoder_hash", "");
  return e;
}

// ---------------------------------------------------------------------------

PairSampler dataset_sampler(Matrix x, Matrix y) {
  if (x.cols() != y.cols() || x.cols() < 2) throw std::invalid_argument("dataset_sampler: need >= 2 aligned pairs");
  return [x = std::move(x), y = std::move(y)](Index batch, Rng& rng) {
    PairBatch b{Matrix(x.rows(), batch), Matrix(y.rows(), batch)};
    for (Index c = 0; c < batch; ++c) {
      const auto i = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(x.cols())));
      b.x.col(c) = x.col(i);
      b.y.col(c) = y.col(i);
    }
    return b;
  };
}

void continue_training(MIEstimator& est, const PairSampler& sampler, long steps, Index batch, Rng& rng,
                       TrainingCurve* curve) {
  for (long s = 0; s < steps; ++s) {
    auto b = sampler(batch, rng);
    const Real bound = est.train_step(b.x, b.y, rng);
    if (curve) {
      curve->bounds.push_back(bound);
      ++curve->steps;
    }
  }
}

MIEstimator train_mine(Target tag, Index x_dim, Index y_dim, const PairSampler& sampler, const MineConfig& cfg,
                       TrainingCurve* curve) {
  MIEstimator est(tag, x_dim, y_dim, cfg);
  Rng rng(derive_seed(cfg.seed, 0x545241494e));
  TrainingCurve local;
  TrainingCurve& c = curve ? *curve : local;
  c = TrainingCurve{};
  double prev_window = 0, window_sum = 0;
  bool have_prev = false;
  for (long step = 1; step <= cfg.steps; ++step) {
    auto b = sampler(cfg.batch, rng);
    Real bound;
    try {
      bound = est.train_step(b.x, b.y, rng);
    } catch (const TrainingError& e) {
      std::ostringstream msg;
      msg << e.what() << " (seed " << cfg.seed << ", step " << step << ")";
      throw TrainingError(msg.str());
    }
    c.bounds.push_back(bound);
    c.steps = step;
    window_sum += bound;
    if (step % cfg.window == 0) {
      const double mean = window_sum / static_cast<double>(cfg.window);
      window_sum = 0;
      if (have_prev && step >= cfg.min_steps) {
        const double rel = std::abs(mean - prev_window) / std::max(std::abs(prev_window), 1e-8);
        if (rel < cfg.rel_tol) {
          c.converged = true;
          break;
        }
      }
      prev_window = mean;
      have_prev = true;
    }
  }
  return est;
}

Real estimate_mi(const MIEstimator& est, const Matrix& x, const Matrix& y, int shuffles, Rng& rng) {
  if (x.cols() < 2) throw std::invalid_argument("estimate_mi: need at least two pairs");
  const RowVector joint = est.scores(x, y);
  const Real joint_mean = joint.mean();
  Real log_denom = 0;
  const int m = std::max(1, shuffles);
  for (int k = 0; k < m; ++k) log_denom += log_mean_exp(est.scores(x, make_marginal_batch(y, rng)));
  return joint_mean - log_denom / m;
}

Real onehot_entropy(const Matrix& onehots) {
  const Vector counts = onehots.rowwise().sum();
  const Real total = counts.sum();
  if (total <= 0) return 0;
  return entropy(Vector(counts / total));
}

NormalizedMI normalized_mi(const MIEstimator& est, const Matrix& x, const Matrix& rating_onehots, int shuffles,
                           Rng& rng) {
  NormalizedMI out;
  out.entropy = onehot_entropy(rating_onehots);
  if (!(out.entropy > 0)) throw std::domain_error("NMI undefined: rating distribution has zero entropy");
  out.raw_mi = estimate_mi(est, x, rating_onehots, shuffles, rng);
  out.raw = out.raw_mi / out.entropy;
  out.clamped = std::clamp(out.raw, 0.0, 1.0);
  return out;
}

}  // namespace mmi::mine
