#include "mmi/finetune.hpp"

#include "mmi/core/math.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace mmi::finetune {

using backbone::Context;
using backbone::Example;
using backbone::Generator;

std::string to_string(Task t) {
  switch (t) {
    case Task::rating: return "rating";
    case Task::feature: return "feature";
    case Task::both: return "both";
  }
  return "rating";
}

Task task_from_string(const std::string& s) {
  if (s == "rating") return Task::rating;
  if (s == "feature") return Task::feature;
  if (s == "both") return Task::both;
  throw UsageError("unknown fine-tuning task '" + s + "'");
}

nlohmann::json FinetuneConfig::to_json() const {
  return {{"task", to_string(task)},
          {"epochs", epochs},
          {"batch", batch},
          {"samples_per_epoch", samples_per_epoch},
          {"lr", lr},
          {"clip_norm", clip_norm},
          {"baseline", baseline == Baseline::none ? "none" : "batch-mean"},
          {"weighting", weighting == Weighting::dwa ? "dwa" : "static"},
          {"alpha", alpha},
          {"beta", beta},
          {"tau", tau},
          {"use_kl", use_kl},
          {"use_entropy", use_entropy},
          {"kl_direction", kl_direction == rewards::KlDirection::reference_to_current ? "q||p" : "p||q"},
          {"lambda", lambda},
          {"epsilon", epsilon},
          {"refresh_every", refresh_every},
          {"refresh_steps", refresh_steps},
          {"refresh_batch", refresh_batch},
          {"refresh_generated_share", refresh_generated_share},
          {"valid_mine_steps", valid_mine_steps},
          {"seed", seed}};
}

FinetuneConfig FinetuneConfig::from_json(const nlohmann::json& j) {
  FinetuneConfig c;
  c.task = task_from_string(j.value("task", std::string("rating")));
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.samples_per_epoch = j.value("samples_per_epoch", c.samples_per_epoch);
  c.lr = j.value("lr", c.lr);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  const auto baseline = j.value("baseline", std::string("batch-mean"));
  if (baseline == "none") c.baseline = Baseline::none;
  else if (baseline == "batch-mean") c.baseline = Baseline::batch_mean;
  else throw UsageError("unknown baseline '" + baseline + "'");
  const auto weighting = j.value("weighting", std::string("auto"));
  if (weighting == "auto") c.weighting = c.task == Task::rating ? Weighting::fixed : Weighting::dwa;
  else if (weighting == "dwa") c.weighting = Weighting::dwa;
  else if (weighting == "static") c.weighting = Weighting::fixed;
  else throw UsageError("unknown reward weighting '" + weighting + "'");
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.tau = j.value("tau", c.tau);
  c.use_kl = j.value("use_kl", c.use_kl);
  c.use_entropy = j.value("use_entropy", c.use_entropy);
  const auto dir = j.value("kl_direction", std::string("q||p"));
  if (dir == "q||p") c.kl_direction = rewards::KlDirection::reference_to_current;
  else if (dir == "p||q") c.kl_direction = rewards::KlDirection::current_to_reference;
  else throw UsageError("unknown kl_direction '" + dir + "'");
  c.lambda = j.value("lambda", c.lambda);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.refresh_every = j.value("refresh_every", c.refresh_every);
  c.refresh_steps = j.value("refresh_steps", c.refresh_steps);
  c.refresh_batch = j.value("refresh_batch", c.refresh_batch);
  c.refresh_generated_share = j.value("refresh_generated_share", c.refresh_generated_share);
  c.valid_mine_steps = j.value("valid_mine_steps", c.valid_mine_steps);
  c.seed = j.value("seed", c.seed);
  if (c.epochs < 0 || c.batch < 1 || c.samples_per_epoch < 1) throw UsageError("invalid fine-tuning schedule");
  if (!(c.tau > 0)) throw UsageError("tau must be positive");
  if (!(c.lambda >= 0 && c.lambda <= 1)) throw UsageError("lambda must lie in [0, 1]");
  if (!(c.epsilon >= 0 && c.epsilon <= 1)) throw UsageError("epsilon must lie in [0, 1]");
  return c;
}

Real batch_baseline(std::span<const Real> rewards, Baseline mode) {
  if (mode == Baseline::none || rewards.empty()) return 0;
  const Real anchor = rewards[0];
  Real shift = 0;
  for (Real r : rewards) shift += r - anchor;
  return anchor + shift / static_cast<Real>(rewards.size());
}

// ---------------------------------------------------------------------------

TabularPolicy::TabularPolicy(Index vocab, Index length) : logits("tab.logits", vocab, length) {
  if (vocab < 2 || length < 1) throw std::invalid_argument("tabular policy needs vocab >= 2 and length >= 1");
}

Matrix TabularPolicy::probabilities() const { return softmax_columns(logits.value); }

std::vector<TokenSeq> TabularPolicy::sample(std::size_t n, Rng& rng) const {
  const Matrix p = probabilities();
  std::vector<TokenSeq> out(n, TokenSeq(static_cast<std::size_t>(p.cols())));
  for (auto& seq : out) {
    for (Index t = 0; t < p.cols(); ++t) {
      const double u = uniform01(rng);
      double acc = 0;
      Index tok = p.rows() - 1;
      for (Index k = 0; k < p.rows(); ++k) {
        acc += p(k, t);
        if (u < acc) {
          tok = k;
          break;
        }
      }
      seq[static_cast<std::size_t>(t)] = static_cast<TokenId>(tok);
    }
  }
  return out;
}

Real TabularPolicy::log_prob(const TokenSeq& seq) const {
  const Matrix lp = log_softmax_columns(logits.value);
  Real total = 0;
  for (std::size_t t = 0; t < seq.size(); ++t) total += lp(seq[t], static_cast<Index>(t));
  return total;
}

Real TabularPolicy::sequence_logprob_backward(const std::vector<Context>&, const std::vector<TokenSeq>& seqs,
                                              std::span<const Real> weights) {
  const Matrix lp = log_softmax_columns(logits.value);
  const Matrix p = lp.array().exp().matrix();
  Real loss = 0;
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const Real w = weights[b];
    if (w == 0) continue;
    for (std::size_t t = 0; t < seqs[b].size(); ++t) {
      const Index col = static_cast<Index>(t);
      loss -= w * lp(seqs[b][t], col);
      logits.grad.col(col) += w * p.col(col);
      logits.grad(seqs[b][t], col) -= w;
    }
  }
  return loss;
}

std::vector<TokenSeq> TabularPolicy::enumerate() const {
  const Index V = logits.value.rows(), T = logits.value.cols();
  std::vector<TokenSeq> out;
  TokenSeq cur(static_cast<std::size_t>(T), 0);
  while (true) {
    out.push_back(cur);
    Index t = 0;
    while (t < T && ++cur[static_cast<std::size_t>(t)] == V) cur[static_cast<std::size_t>(t++)] = 0;
    if (t == T) break;
  }
  return out;
}

Matrix exact_reward_gradient(const TabularPolicy& policy, const std::function<Real(const TokenSeq&)>& reward) {
  const Matrix p = policy.probabilities();
  Matrix grad = Matrix::Zero(p.rows(), p.cols());
  for (const auto& seq : policy.enumerate()) {
    const Real weight = std::exp(policy.log_prob(seq)) * reward(seq);
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const Index col = static_cast<Index>(t);
      grad.col(col) -= weight * p.col(col);
      grad(seq[t], col) += weight;
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------

void refresh_estimator(mine::MIEstimator& est, const mine::PairSampler& ground_truth, const Matrix& gen_x,
                       const Matrix& gen_y, const RefreshConfig& cfg, Rng& rng) {
  if (cfg.steps <= 0) return;
  if (cfg.batch < 2) throw std::invalid_argument("refresh batch must hold at least two pairs");
  const bool have_gen = gen_x.cols() > 0;
  const Index n_gen = have_gen ? static_cast<Index>(std::llround(static_cast<double>(cfg.batch) * cfg.generated_share)) : 0;
  const Index n_gt = cfg.batch - n_gen;
  if (n_gt > 0 && !ground_truth) throw std::invalid_argument("refresh needs a ground-truth sampler");
  for (long s = 0; s < cfg.steps; ++s) {
    Matrix x(est.net().x_dim(), cfg.batch), y(est.net().y_dim(), cfg.batch);
    if (n_gt > 0) {
      auto gt = ground_truth(n_gt, rng);
      x.leftCols(n_gt) = gt.x;
      y.leftCols(n_gt) = gt.y;
    }
    for (Index c = 0; c < n_gen; ++c) {
      const auto i = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(gen_x.cols())));
      x.col(n_gt + c) = gen_x.col(i);
      y.col(n_gt + c) = gen_y.col(i);
    }
    est.train_step(x, y, rng);
  }
}

Real combined_objective(Real rl_loss, Real backbone_loss, Real lambda) {
  if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("lambda must lie in [0, 1]");
  return lambda * rl_loss + (1 - lambda) * backbone_loss;
}

void check_lineage(const Generator& model, const encoder::SentenceEncoder& enc, const Estimators& est) {
  if (model.vocab_hash() != enc.vocab_hash())
    throw DataError("backbone vocabulary " + model.vocab_hash() + " does not match encoder vocabulary " +
                    enc.vocab_hash());
  const auto enc_hash = enc.checkpoint_hash();
  for (const auto* e : {est.rating ? &*est.rating : nullptr, est.feature ? &*est.feature : nullptr}) {
    if (e && e->encoder_hash != enc_hash)
      throw DataError(mine::to_string(e->tag()) + " estimator was trained against encoder " + e->encoder_hash +
                      ", not " + enc_hash);
  }
}

// ---------------------------------------------------------------------------

namespace {

struct Prepared {
  Matrix gt_embeddings, gt_ratings, gt_features;
};

Matrix feature_columns(const encoder::FeatureTable& table, const std::vector<Index>& ids) {
  Matrix out(table.rows.rows(), static_cast<Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i)
    out.col(static_cast<Index>(i)) = encoder::feature_embedding(table, std::max<Index>(0, ids[i]));
  return out;
}

Matrix rating_columns(const std::vector<double>& ratings) {
  Matrix out(5, static_cast<Index>(ratings.size()));
  for (std::size_t i = 0; i < ratings.size(); ++i) out.col(static_cast<Index>(i)) = encoder::rating_onehot(ratings[i]);
  return out;
}

std::vector<TokenSeq> words_of(const std::vector<Example>& ex) {
  std::vector<TokenSeq> out;
  for (const auto& e : ex) {
    TokenSeq w;
    for (TokenId t : e.target) {
      if (t == corpus::Vocabulary::kEos) break;
      w.push_back(t);
    }
    out.push_back(std::move(w));
  }
  return out;
}

rewards::Weights epoch_weights(const FinetuneConfig& cfg, const rewards::DWAState& dwa) {
  rewards::Weights w = cfg.weighting == Weighting::dwa ? rewards::dwa_weights(dwa)
                                                         : rewards::Weights{1.0, cfg.alpha, cfg.beta};
  if (!cfg.use_kl) w.kl = 0;
  if (!cfg.use_entropy) w.entropy = 0;
  return w;
}

Real alignment_score(Task task, const metrics::EvaluationReport& r) {
  switch (task) {
    case Task::rating: return r.nmi;
    case Task::feature: return r.fmr;
    case Task::both: return r.nmi + r.fmr / 100.0;
  }
  return 0;
}

std::vector<std::size_t> epoch_order(std::vector<std::size_t>& order, Rng& rng, Index limit) {
  shuffle(order, rng);
  const std::size_t n = std::min(order.size(), static_cast<std::size_t>(limit));
  return std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
}

constexpr std::uint64_t kOrderStream = 0x4f52444552;

}  // namespace

FinetuneResult finetune(const Generator& pretrained, Estimators est, const FinetuneInputs& in,
                        const FinetuneConfig& cfg) {
  if (!in.encoder || !in.vocab) throw UsageError("fine-tuning needs an encoder and a vocabulary");
  const bool need_rating = cfg.task != Task::feature;
  const bool need_feature = cfg.task != Task::rating;
  if (need_rating && !est.rating) throw DataError("task " + to_string(cfg.task) + " needs a rating estimator");
  if (need_feature && (!est.feature || !in.features))
    throw DataError("task " + to_string(cfg.task) + " needs a feature estimator and feature embeddings");
  if (!(cfg.lambda >= 0 && cfg.lambda <= 1)) throw UsageError("lambda must lie in [0, 1]");
  check_lineage(pretrained, *in.encoder, est);
  if (in.train.empty()) throw DataError("fine-tuning needs training examples");

  const auto& enc = *in.encoder;
  const bool multitask = pretrained.has_rating_head();
  const Real lambda = multitask ? cfg.lambda : 1.0;

  FinetuneResult res;
  res.final_model = pretrained;
  res.best_model = pretrained;
  const Generator reference = pretrained;
  Generator& model = res.final_model;
  auto params = model.params();
  nn::Adam<Real> opt(params, {.lr = cfg.lr, .clip_norm = cfg.clip_norm});

  Rng order_rng(derive_seed(cfg.seed, kOrderStream));
  Rng sample_rng(derive_seed(cfg.seed, 0x53414d504c45));
  Rng refresh_rng(derive_seed(cfg.seed, 0x52454652));

  // Ground-truth pairs for estimator refreshes.
  Prepared gt;
  if (cfg.epochs > 0 && cfg.refresh_every > 0 && cfg.refresh_steps > 0) {
    gt.gt_embeddings = enc.encode_batch(words_of(in.train));
    std::vector<double> ratings;
    std::vector<Index> feats;
    for (const auto& e : in.train) {
      ratings.push_back(e.rating);
      feats.push_back(e.annotated_feature);
    }
    gt.gt_ratings = rating_columns(ratings);
    if (need_feature) gt.gt_features = feature_columns(*in.features, feats);
  }
  const RefreshConfig refresh{cfg.refresh_steps, cfg.refresh_batch, cfg.refresh_generated_share};

  rewards::DWAState dwa{.tau = cfg.tau};
  Real best = -std::numeric_limits<Real>::infinity();
  std::vector<std::size_t> order(in.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Vector> pool_e, pool_r, pool_f;
  long step = 0;

  mine::MineConfig quick;
  quick.steps = cfg.valid_mine_steps;
  quick.min_steps = cfg.valid_mine_steps;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto ids = epoch_order(order, order_rng, cfg.samples_per_epoch);
    const rewards::Weights w = epoch_weights(cfg, dwa);
    EpochLog row{.epoch = epoch, .weights = w};
    std::size_t seen = 0, tokens = 0, batches = 0;

    for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(ids.size(), start + static_cast<std::size_t>(cfg.batch));
      std::vector<const Example*> batch;
      std::vector<Context> ctx;
      for (std::size_t k = start; k < end; ++k) {
        const Example& e = in.train[ids[k]];
        batch.push_back(&e);
        Context c = e.ctx;
        if (model.config().use_feature) c.feature = e.assigned_feature;
        ctx.push_back(c);
      }
      const Index B = static_cast<Index>(batch.size());
      auto samples = model.generate(ctx, backbone::DecodeMode::sample, &sample_rng, &reference);
      std::vector<TokenSeq> words, seqs;
      for (const auto& s : samples) {
        words.push_back(s.words());
        seqs.push_back(s.tokens);
        tokens += s.tokens.size();
      }
      const Matrix E = enc.encode_batch(words);

      Matrix rt, ft;
      if (need_rating) {
        std::vector<double> r;
        for (Index b = 0; b < B; ++b) {
          const auto& s = samples[static_cast<std::size_t>(b)];
          r.push_back(s.predicted_rating ? *s.predicted_rating : batch[static_cast<std::size_t>(b)]->rating);
        }
        rt = rating_columns(r);
      }
      if (need_feature) {
        std::vector<Index> f;
        for (const auto* e : batch) f.push_back(e->assigned_feature);
        ft = feature_columns(*in.features, f);
      }
      RowVector mi;
      switch (cfg.task) {
        case Task::rating: mi = rewards::mi_rewards(E, rt, *est.rating, mine::Target::rating); break;
        case Task::feature: mi = rewards::mi_rewards(E, ft, *est.feature, mine::Target::feature); break;
        case Task::both:
          mi = rewards::combined_mi_rewards(E, rt, ft, cfg.epsilon, *est.rating, *est.feature);
          break;
      }

      std::vector<Real> totals(static_cast<std::size_t>(B));
      StepLog sl{.epoch = epoch, .step = ++step, .weights = w};
      for (Index b = 0; b < B; ++b) {
        rewards::RewardBreakdown br;
        const auto& s = samples[static_cast<std::size_t>(b)];
        br.mi = mi(b);
        br.kl = rewards::kl_reward(s, cfg.kl_direction);
        br.entropy = rewards::entropy_reward(s);
        totals[static_cast<std::size_t>(b)] = rewards::dwa_total(br, w);
        sl.mi_mean += br.mi;
        sl.kl_mean += br.kl;
        sl.entropy_mean += br.entropy;
        sl.total_mean += br.total;
      }
      sl.mi_mean /= static_cast<Real>(B);
      sl.kl_mean /= static_cast<Real>(B);
      sl.entropy_mean /= static_cast<Real>(B);
      sl.total_mean /= static_cast<Real>(B);

      nn::zero_grads(params);
      if (lambda > 0) sl.rl_loss = rl_gradient(model, ctx, seqs, totals, cfg.baseline, lambda).loss;
      if (multitask && lambda < 1) sl.backbone_loss = backbone::backbone_backward(model, batch, 1 - lambda).total();
      if (!nn::grads_finite(params)) {
        std::string dump;
        for (std::size_t i = 0; i < std::min<std::size_t>(seqs.size(), 4); ++i) {
          dump += "\n  sample " + std::to_string(i) + ": " + corpus::join_tokens(in.vocab->decode(seqs[i])) +
                  " reward " + std::to_string(totals[i]);
        }
        throw TrainingError("policy gradient became non-finite at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step) + dump);
      }
      opt.step();

      for (Index b = 0; b < B; ++b) {
        pool_e.push_back(E.col(b));
        if (need_rating) pool_r.push_back(rt.col(b));
        if (need_feature) pool_f.push_back(ft.col(b));
      }
      row.mi_mean += sl.mi_mean * static_cast<Real>(B);
      row.kl_mean += sl.kl_mean * static_cast<Real>(B);
      row.entropy_mean += sl.entropy_mean * static_cast<Real>(B);
      row.total_mean += sl.total_mean * static_cast<Real>(B);
      row.rl_loss += sl.rl_loss;
      row.backbone_loss += sl.backbone_loss;
      seen += static_cast<std::size_t>(B);
      ++batches;
      res.steps.push_back(sl);
    }
    const Real n = static_cast<Real>(std::max<std::size_t>(seen, 1));
    row.mi_mean /= n;
    row.kl_mean /= n;
    row.entropy_mean /= n;
    row.total_mean /= n;
    row.rl_loss /= static_cast<Real>(std::max<std::size_t>(batches, 1));
    row.backbone_loss /= static_cast<Real>(std::max<std::size_t>(batches, 1));
    row.mean_length = static_cast<Real>(tokens) / n;

    if (cfg.refresh_every > 0 && epoch % cfg.refresh_every == 0 && cfg.refresh_steps > 0) {
      Matrix ge(enc.sentence_dim(), static_cast<Index>(pool_e.size()));
      for (std::size_t i = 0; i < pool_e.size(); ++i) ge.col(static_cast<Index>(i)) = pool_e[i];
      auto refresh_one = [&](mine::MIEstimator& e, const Matrix& gt_y, const std::vector<Vector>& pool) {
        Matrix gy(gt_y.rows(), static_cast<Index>(pool.size()));
        for (std::size_t i = 0; i < pool.size(); ++i) gy.col(static_cast<Index>(i)) = pool[i];
        refresh_estimator(e, mine::dataset_sampler(gt.gt_embeddings, gt_y), ge, gy, refresh, refresh_rng);
      };
      if (need_rating) refresh_one(*est.rating, gt.gt_ratings, pool_r);
      if (need_feature) refresh_one(*est.feature, gt.gt_features, pool_f);
      pool_e.clear();
      pool_r.clear();
      pool_f.clear();
      row.refreshed = true;
    }
    dwa.push(Vector{{row.mi_mean, row.kl_mean, row.entropy_mean}});

    if (!in.valid.empty()) {
      metrics::EvaluateOptions vo{.mine = quick, .rating_mi = need_rating, .feature_mi = false, .sentiment = false,
                                  .seed = derive_seed(cfg.seed, 0x56414c00 + static_cast<std::uint64_t>(epoch))};
      const auto rep = metrics::evaluate(model, in.valid, enc, in.features ? *in.features : encoder::FeatureTable{},
                                         *in.vocab, in.feature_names, vo);
      row.valid_nmi = rep.nmi;
      row.valid_fmr = rep.fmr;
      row.valid_bleu1 = rep.bleu1;
      row.valid_rmse = rep.rmse.value_or(0.0);
      const Real score = alignment_score(cfg.task, rep);
      if (score > best) {
        best = score;
        res.best_model = model;
        res.best_epoch = epoch;
      }
    } else {
      res.best_model = model;
      res.best_epoch = epoch;
    }
    res.epochs.push_back(row);
    res.wall_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  res.estimators = std::move(est);
  return res;
}

std::vector<Real> backbone_only_run(Generator& model, const FinetuneInputs& in, const FinetuneConfig& cfg) {
  auto params = model.params();
  nn::Adam<Real> opt(params, {.lr = cfg.lr, .clip_norm = cfg.clip_norm});
  Rng order_rng(derive_seed(cfg.seed, kOrderStream));
  std::vector<std::size_t> order(in.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Real> losses;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto ids = epoch_order(order, order_rng, cfg.samples_per_epoch);
    for (std::size_t start = 0; start < ids.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(ids.size(), start + static_cast<std::size_t>(cfg.batch));
      std::vector<const Example*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(&in.train[ids[k]]);
      nn::zero_grads(params);
      losses.push_back(backbone::backbone_backward(model, batch, 1.0).total());
      if (!nn::grads_finite(params)) throw TrainingError("backbone gradient became non-finite");
      opt.step();
    }
  }
  return losses;
}

std::string training_log_csv(const FinetuneResult& r) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "epoch,mi_mean,kl_mean,entropy_mean,total_mean,gamma_mi,gamma_kl,gamma_entropy,weighted_entropy,rl_loss,"
         "backbone_loss,refreshed,valid_nmi,valid_fmr,valid_bleu1,valid_rmse,mean_length\n";
  for (const auto& e : r.epochs) {
    out << e.epoch << ',' << e.mi_mean << ',' << e.kl_mean << ',' << e.entropy_mean << ',' << e.total_mean << ','
        << e.weights.mi << ',' << e.weights.kl << ',' << e.weights.entropy << ',' << e.weighted_entropy() << ','
        << e.rl_loss << ',' << e.backbone_loss << ',' << (e.refreshed ? 1 : 0) << ',' << e.valid_nmi << ','
        << e.valid_fmr << ',' << e.valid_bleu1 << ',' << e.valid_rmse << ',' << e.mean_length << '\n';
  }
  return out.str();
}

std::string reward_log_csv(const FinetuneResult& r) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "epoch,step,mi_mean,kl_mean,entropy_mean,gamma_mi,gamma_kl,gamma_entropy,total_mean\n";
  for (const auto& s : r.steps) {
    out << s.epoch << ',' << s.step << ',' << s.mi_mean << ',' << s.kl_mean << ',' << s.entropy_mean << ','
        << s.weights.mi << ',' << s.weights.kl << ',' << s.weights.entropy << ',' << s.total_mean << '\n';
  }
  return out.str();
}

}  // namespace mmi::finetune
