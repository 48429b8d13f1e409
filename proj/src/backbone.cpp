#include "mmi/backbone.hpp"

#include "mmi/core/hash.hpp"
#include "mmi/core/math.hpp"
#include "mmi/nn/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mmi::backbone {

using corpus::Vocabulary;

std::string to_string(Arch a) { return a == Arch::posthoc ? "posthoc" : "multitask"; }

Arch arch_from_string(const std::string& s) {
  if (s == "posthoc") return Arch::posthoc;
  if (s == "multitask") return Arch::multitask;
  throw UsageError("unknown backbone architecture '" + s + "'");
}

IdMap::IdMap(std::vector<std::string> ids) : ids_(std::move(ids)) {
  for (std::size_t i = 0; i < ids_.size(); ++i) index_.emplace(ids_[i], static_cast<Index>(i));
}

Index IdMap::lookup(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? static_cast<Index>(ids_.size()) : it->second;
}

TokenSeq GeneratedSample::words() const {
  TokenSeq out;
  for (TokenId t : tokens) {
    if (t == Vocabulary::kEos) break;
    out.push_back(t);
  }
  return out;
}

TokenSeq make_target(const TokenSeq& words, Index max_len) {
  TokenSeq out(words.begin(), words.begin() + std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(words.size()),
                                                                      std::max<Index>(0, max_len - 1)));
  out.push_back(Vocabulary::kEos);
  return out;
}

std::vector<Context> contexts_of(const std::vector<Example>& examples) {
  std::vector<Context> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.ctx);
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json BackboneConfig::to_json() const {
  return {{"arch", to_string(arch)}, {"use_rating", use_rating}, {"use_feature", use_feature},
          {"attr_dim", attr_dim}, {"word_dim", word_dim}, {"hidden", hidden}, {"rating_hidden", rating_hidden},
          {"max_len", max_len}, {"epochs", epochs}, {"batch", batch}, {"lr", lr}, {"clip_norm", clip_norm},
          {"seed", seed}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.arch = arch_from_string(j.value("arch", std::string("posthoc")));
  c.use_rating = j.value("use_rating", c.use_rating);
  c.use_feature = j.value("use_feature", c.use_feature);
  c.attr_dim = j.value("attr_dim", c.attr_dim);
  c.word_dim = j.value("word_dim", c.word_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.rating_hidden = j.value("rating_hidden", c.rating_hidden);
  c.max_len = j.value("max_len", c.max_len);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  if (c.max_len < 1) throw UsageError("max_len must be at least 1");
  return c;
}

namespace {

Index context_slots(const BackboneConfig& c) {
  Index k = 2;
  if (c.arch == Arch::posthoc && c.use_rating) ++k;
  if (c.use_feature) ++k;
  return k;
}

}  // namespace

Generator::Generator(const BackboneConfig& config, Index vocab_size, std::string vocab_hash, IdMap users, IdMap items,
                     Index n_features)
    : config_(config), vocab_hash_(std::move(vocab_hash)), users_(std::move(users)), items_(std::move(items)),
      n_features_(n_features) {
  const Index A = config.attr_dim;
  const Index C = A * context_slots(config);
  user_emb_ = nn::Embedding<Real>("bb.user", users_.table_size(), A);
  item_emb_ = nn::Embedding<Real>("bb.item", items_.table_size(), A);
  rating_emb_ = nn::Embedding<Real>("bb.rating", 5, A);
  feature_emb_ = nn::Embedding<Real>("bb.feature", n_features + 1, A);
  word_emb_ = nn::Embedding<Real>("bb.word", vocab_size, config.word_dim);
  init_ = nn::Linear<Real>("bb.init", C, config.hidden);
  cell_ = nn::GruCell<Real>("bb.gru", config.word_dim + C, config.hidden);
  out_ = nn::Linear<Real>("bb.out", config.hidden, vocab_size);
  rate1_ = nn::Linear<Real>("bb.rate1", 2 * A, config.rating_hidden);
  rate2_ = nn::Linear<Real>("bb.rate2", config.rating_hidden, 1);

  Rng rng(derive_seed(config.seed, 0x4242));
  user_emb_.init(rng, 0.1);
  item_emb_.init(rng, 0.1);
  rating_emb_.init(rng, 0.1);
  feature_emb_.init(rng, 0.1);
  word_emb_.init(rng, 0.1);
  init_.init(rng);
  cell_.init(rng);
  out_.init(rng);
  rate1_.init(rng);
  rate2_.init(rng);
}

nn::ParamList<Real> Generator::params() {
  nn::ParamList<Real> out;
  user_emb_.collect(out);
  item_emb_.collect(out);
  if (config_.arch == Arch::posthoc && config_.use_rating) rating_emb_.collect(out);
  if (config_.use_feature) feature_emb_.collect(out);
  word_emb_.collect(out);
  init_.collect(out);
  cell_.collect(out);
  out_.collect(out);
  if (has_rating_head()) {
    rate1_.collect(out);
    rate2_.collect(out);
  }
  return out;
}

Matrix Generator::context_matrix(const std::vector<Context>& ctx) const {
  const Index A = config_.attr_dim;
  const Index B = static_cast<Index>(ctx.size());
  Matrix out(A * context_slots(config_), B);
  const bool rating = config_.arch == Arch::posthoc && config_.use_rating;
  for (Index b = 0; b < B; ++b) {
    const auto& c = ctx[static_cast<std::size_t>(b)];
    if (c.user < 0 || c.user >= user_emb_.count() || c.item < 0 || c.item >= item_emb_.count())
      throw std::out_of_range("context user/item outside the embedding tables");
    Index row = 0;
    out.col(b).segment(row, A) = user_emb_.table.value.col(c.user);
    row += A;
    out.col(b).segment(row, A) = item_emb_.table.value.col(c.item);
    row += A;
    if (rating) {
      if (c.rating < 1 || c.rating > 5) throw std::out_of_range("context rating outside 1..5");
      out.col(b).segment(row, A) = rating_emb_.table.value.col(c.rating - 1);
      row += A;
    }
    if (config_.use_feature) {
      const Index f = c.feature < 0 ? n_features_ : c.feature;
      if (f > n_features_) throw std::out_of_range("context feature outside the feature table");
      out.col(b).segment(row, A) = feature_emb_.table.value.col(f);
    }
  }
  return out;
}

void Generator::context_backward(const std::vector<Context>& ctx, const Matrix& grad) {
  const Index A = config_.attr_dim;
  const bool rating = config_.arch == Arch::posthoc && config_.use_rating;
  for (Index b = 0; b < grad.cols(); ++b) {
    const auto& c = ctx[static_cast<std::size_t>(b)];
    Index row = 0;
    user_emb_.table.grad.col(c.user) += grad.col(b).segment(row, A);
    row += A;
    item_emb_.table.grad.col(c.item) += grad.col(b).segment(row, A);
    row += A;
    if (rating) {
      rating_emb_.table.grad.col(c.rating - 1) += grad.col(b).segment(row, A);
      row += A;
    }
    if (config_.use_feature) {
      const Index f = c.feature < 0 ? n_features_ : c.feature;
      feature_emb_.table.grad.col(f) += grad.col(b).segment(row, A);
    }
  }
}

Matrix Generator::initial_state(const Matrix& ctx) const { return init_.forward(ctx).array().tanh().matrix(); }

Matrix Generator::step_input(const std::vector<int>& prev, const Matrix& ctx) const {
  Matrix x(config_.word_dim + ctx.rows(), ctx.cols());
  x.topRows(config_.word_dim) = word_emb_.forward(prev);
  x.bottomRows(ctx.rows()) = ctx;
  return x;
}

void Generator::teacher_forward(const std::vector<Context>& ctx, const std::vector<TokenSeq>& targets,
                                Trace& tr) const {
  if (ctx.size() != targets.size()) throw std::invalid_argument("context/target count mismatch");
  const Index B = static_cast<Index>(ctx.size());
  std::size_t T = 0;
  for (const auto& t : targets) T = std::max(T, t.size());
  tr.ctx = context_matrix(ctx);
  tr.h0 = initial_state(tr.ctx);
  tr.inputs.assign(T, std::vector<int>(static_cast<std::size_t>(B), Vocabulary::kPad));
  tr.targets.assign(T, std::vector<int>(static_cast<std::size_t>(B), Vocabulary::kPad));
  tr.masks.assign(T, RowVector::Zero(B));
  for (Index b = 0; b < B; ++b) {
    const auto& seq = targets[static_cast<std::size_t>(b)];
    for (std::size_t t = 0; t < seq.size(); ++t) {
      tr.inputs[t][static_cast<std::size_t>(b)] = t == 0 ? Vocabulary::kBos : seq[t - 1];
      tr.targets[t][static_cast<std::size_t>(b)] = seq[t];
      tr.masks[t](b) = 1.0;
    }
  }
  tr.cells.resize(T);
  tr.hs.resize(T);
  tr.logp.resize(T);
  Matrix h = tr.h0;
  for (std::size_t t = 0; t < T; ++t) {
    h = cell_.forward(step_input(tr.inputs[t], tr.ctx), h, &tr.cells[t], &tr.masks[t]);
    tr.hs[t] = h;
    tr.logp[t] = log_softmax_columns(out_.forward(h));
  }
}

Real Generator::sequence_logprob_backward(const std::vector<Context>& ctx, const std::vector<TokenSeq>& targets,
                                          std::span<const Real> weights) {
  if (weights.size() != ctx.size()) throw std::invalid_argument("weight count mismatch");
  Trace tr;
  teacher_forward(ctx, targets, tr);
  const std::size_t T = tr.logp.size();
  const Index B = static_cast<Index>(ctx.size());
  const Index W = config_.word_dim;

  Real loss = 0;
  Matrix dh_next = Matrix::Zero(config_.hidden, B), dprev;
  Matrix dctx = Matrix::Zero(tr.ctx.rows(), B);
  for (std::size_t t = T; t-- > 0;) {
    Matrix dlogits = tr.logp[t].array().exp().matrix();
    for (Index b = 0; b < B; ++b) {
      const Real w = weights[static_cast<std::size_t>(b)];
      if (tr.masks[t](b) == 0) {
        dlogits.col(b).setZero();
        continue;
      }
      const int y = tr.targets[t][static_cast<std::size_t>(b)];
      loss -= w * tr.logp[t](y, b);
      dlogits.col(b) *= w;
      dlogits(y, b) -= w;
    }
    Matrix dh = out_.backward(dlogits, tr.hs[t]);
    dh += dh_next;
    Matrix dx = cell_.backward(tr.cells[t], dh, dprev);
    dh_next = dprev;
    word_emb_.backward(tr.inputs[t], dx.topRows(W));
    dctx += dx.bottomRows(dctx.rows());
  }
  const Matrix dpre = (dh_next.array() * (1 - tr.h0.array().square())).matrix();
  dctx += init_.backward(dpre, tr.ctx);
  context_backward(ctx, dctx);
  return loss;
}

std::vector<std::vector<Real>> Generator::step_logprobs(const std::vector<Context>& ctx,
                                                        const std::vector<TokenSeq>& targets) const {
  Trace tr;
  teacher_forward(ctx, targets, tr);
  std::vector<std::vector<Real>> out(ctx.size());
  for (std::size_t b = 0; b < ctx.size(); ++b)
    for (std::size_t t = 0; t < targets[b].size(); ++t)
      out[b].push_back(tr.logp[t](tr.targets[t][b], static_cast<Index>(b)));
  return out;
}

Real Generator::nll(const std::vector<Context>& ctx, const std::vector<TokenSeq>& targets) const {
  if (ctx.empty()) return 0;
  Real sum = 0;
  std::size_t tokens = 0;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < ctx.size(); start += chunk) {
    const std::size_t end = std::min(ctx.size(), start + chunk);
    std::vector<Context> c(ctx.begin() + start, ctx.begin() + end);
    std::vector<TokenSeq> t(targets.begin() + start, targets.begin() + end);
    for (const auto& row : step_logprobs(c, t)) {
      for (Real v : row) sum -= v;
      tokens += row.size();
    }
  }
  return tokens ? sum / static_cast<Real>(tokens) : 0;
}

std::vector<GeneratedSample> Generator::generate(const std::vector<Context>& ctx, DecodeMode mode, Rng* rng,
                                                 const Generator* reference) const {
  if (mode == DecodeMode::sample && !rng) throw std::invalid_argument("sample mode needs an rng");
  const Index B = static_cast<Index>(ctx.size());
  std::vector<GeneratedSample> out(ctx.size());
  if (B == 0) return out;
  const Matrix c = context_matrix(ctx);
  Matrix h = initial_state(c);
  Matrix rc, rh;
  if (reference) {
    rc = reference->context_matrix(ctx);
    rh = reference->initial_state(rc);
  }
  std::vector<int> prev(ctx.size(), Vocabulary::kBos);
  std::vector<char> done(ctx.size(), 0);
  Index remaining = B;
  for (Index t = 0; t < config_.max_len && remaining > 0; ++t) {
    h = cell_.forward(step_input(prev, c), h);
    const Matrix logp = log_softmax_columns(out_.forward(h));
    Matrix rlogp;
    if (reference) {
      rh = reference->cell_.forward(reference->step_input(prev, rc), rh);
      rlogp = log_softmax_columns(reference->out_.forward(rh));
    }
    for (Index b = 0; b < B; ++b) {
      auto& s = out[static_cast<std::size_t>(b)];
      if (done[static_cast<std::size_t>(b)]) {
        prev[static_cast<std::size_t>(b)] = Vocabulary::kPad;
        continue;
      }
      Vector p = logp.col(b).array().exp().matrix();
      Index tok = 0;
      if (mode == DecodeMode::greedy) {
        logp.col(b).maxCoeff(&tok);
      } else {
        const double u = uniform01(*rng) * p.sum();
        double acc = 0;
        tok = p.size() - 1;
        for (Index k = 0; k < p.size(); ++k) {
          acc += p(k);
          if (u < acc) {
            tok = k;
            break;
          }
        }
      }
      s.tokens.push_back(static_cast<TokenId>(tok));
      s.step_logprob.push_back(logp(tok, b));
      s.step_dist.push_back(std::move(p));
      if (reference) s.ref_dist.push_back(rlogp.col(b).array().exp().matrix());
      prev[static_cast<std::size_t>(b)] = static_cast<int>(tok);
      if (tok == Vocabulary::kEos) {
        done[static_cast<std::size_t>(b)] = 1;
        --remaining;
      }
    }
  }
  if (has_rating_head()) {
    const RowVector r = predict_ratings(ctx);
    for (Index b = 0; b < B; ++b) out[static_cast<std::size_t>(b)].predicted_rating = r(b);
  }
  return out;
}

Matrix Generator::rating_hidden(const std::vector<Context>& ctx, Matrix* input) const {
  const Index A = config_.attr_dim;
  Matrix in(2 * A, static_cast<Index>(ctx.size()));
  for (std::size_t b = 0; b < ctx.size(); ++b) {
    if (ctx[b].user < 0 || ctx[b].user >= user_emb_.count() || ctx[b].item < 0 || ctx[b].item >= item_emb_.count())
      throw std::out_of_range("context user/item outside the embedding tables");
    in.col(static_cast<Index>(b)) << user_emb_.table.value.col(ctx[b].user), item_emb_.table.value.col(ctx[b].item);
  }
  Matrix hidden = rate1_.forward(in).array().tanh().matrix();
  if (input) *input = std::move(in);
  return hidden;
}

RowVector Generator::predict_ratings(const std::vector<Context>& ctx) const {
  if (!has_rating_head()) throw UsageError("no rating head");
  return rate2_.forward(rating_hidden(ctx, nullptr));
}

Real Generator::predict_rating(Index user, Index item) const {
  return predict_ratings({Context{.user = user, .item = item}})(0);
}

Real Generator::rating_backward(const std::vector<Context>& ctx, std::span<const double> ratings, Real scale) {
  if (!has_rating_head()) throw UsageError("no rating head");
  const Index B = static_cast<Index>(ctx.size());
  Matrix in;
  const Matrix hidden = rating_hidden(ctx, &in);
  const RowVector pred = rate2_.forward(hidden);
  RowVector diff(B);
  for (Index b = 0; b < B; ++b) diff(b) = pred(b) - ratings[static_cast<std::size_t>(b)];
  const Real mse = diff.squaredNorm() / static_cast<Real>(B);
  const Matrix dpred = diff * (2.0 * scale / static_cast<Real>(B));
  const Matrix dh = rate2_.backward(dpred, hidden);
  const Matrix da = (dh.array() * (1 - hidden.array().square())).matrix();
  const Matrix din = rate1_.backward(da, in);
  const Index A = config_.attr_dim;
  for (Index b = 0; b < B; ++b) {
    user_emb_.table.grad.col(ctx[static_cast<std::size_t>(b)].user) += din.col(b).head(A);
    item_emb_.table.grad.col(ctx[static_cast<std::size_t>(b)].item) += din.col(b).tail(A);
  }
  return mse;
}

nlohmann::json Generator::to_json() const {
  const auto cfg = config_.to_json();
  return {{"kind", "backbone"}, {"arch", to_string(config_.arch)}, {"config", cfg},
          {"config_digest", hash_string(cfg.dump())}, {"vocab_hash", vocab_hash_}, {"vocab_size", vocab_size()},
          {"users", users_.ids()}, {"items", items_.ids()}, {"n_features", n_features_},
          {"params", nn::params_to_json(params())}};
}

Generator Generator::from_json(const nlohmann::json& j, const std::string& expected_vocab_hash) {
  if (j.value("kind", "") != "backbone") throw DataError("not a backbone checkpoint");
  const auto hash = j.at("vocab_hash").get<std::string>();
  if (hash != expected_vocab_hash)
    throw DataError("backbone checkpoint vocabulary hash " + hash + " does not match " + expected_vocab_hash);
  Generator g(BackboneConfig::from_json(j.at("config")), j.at("vocab_size").get<Index>(), hash,
              IdMap(j.at("users").get<std::vector<std::string>>()), IdMap(j.at("items").get<std::vector<std::string>>()),
              j.at("n_features").get<Index>());
  nn::params_from_json(g.params(), j.at("params"));
  return g;
}

std::string Generator::checkpoint_hash() const { return hash_string(to_json().dump()); }

// ---------------------------------------------------------------------------

BackboneLoss backbone_backward(Generator& model, const std::vector<const Example*>& batch, Real scale) {
  BackboneLoss loss;
  if (batch.empty()) return loss;
  std::vector<Context> ctx;
  std::vector<TokenSeq> targets;
  std::vector<double> ratings;
  std::size_t tokens = 0;
  for (const auto* e : batch) {
    ctx.push_back(e->ctx);
    targets.push_back(e->target);
    ratings.push_back(e->rating);
    tokens += e->target.size();
  }
  const std::vector<Real> weights(batch.size(), scale / static_cast<Real>(tokens));
  const Real weighted = model.sequence_logprob_backward(ctx, targets, weights);
  loss.nll = scale != 0 ? weighted / scale : model.nll(ctx, targets);
  if (model.has_rating_head()) loss.mse = model.rating_backward(ctx, ratings, scale);
  return loss;
}

RatingError rating_error(const Generator& model, const std::vector<Example>& examples) {
  RatingError err;
  if (examples.empty()) return err;
  const RowVector pred = model.predict_ratings(contexts_of(examples));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const double d = pred(static_cast<Index>(i)) - examples[i].rating;
    err.rmse += d * d;
    err.mae += std::abs(d);
  }
  err.rmse = std::sqrt(err.rmse / static_cast<double>(examples.size()));
  err.mae /= static_cast<double>(examples.size());
  return err;
}

namespace {

std::vector<TokenSeq> targets_of(const std::vector<Example>& examples) {
  std::vector<TokenSeq> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.target);
  return out;
}

PretrainResult pretrain(Generator model, const std::vector<Example>& train, const std::vector<Example>& valid,
                        const BackboneConfig& cfg) {
  if (train.empty()) throw DataError("backbone pretraining needs training examples");
  PretrainResult res;
  if (model.has_rating_head()) {
    // Start the regressor at the global mean rating.
    double mean = 0;
    for (const auto& e : train) mean += e.rating;
    mean /= static_cast<double>(train.size());
    for (auto* p : model.params())
      if (p->name == "bb.rate2.bias") p->value.setConstant(mean);
  }
  auto params = model.params();
  nn::Adam<Real> opt(params, {.lr = cfg.lr, .clip_norm = cfg.clip_norm});
  Rng rng(derive_seed(cfg.seed, 0x5052455452));

  const auto train_ctx = contexts_of(train);
  const auto train_tgt = targets_of(train);
  const auto valid_ctx = contexts_of(valid);
  const auto valid_tgt = targets_of(valid);
  auto record = [&](int epoch, double train_nll) {
    CurveRow row{.epoch = epoch, .train_nll = train_nll, .valid_nll = model.nll(valid_ctx, valid_tgt)};
    if (model.has_rating_head() && !valid.empty()) {
      const auto err = rating_error(model, valid);
      row.valid_rmse = err.rmse;
      row.valid_mae = err.mae;
    }
    res.curve.push_back(row);
  };
  record(0, model.nll(train_ctx, train_tgt));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double nll_sum = 0;
    std::size_t tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      std::vector<const Example*> batch;
      std::size_t batch_tokens = 0;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(&train[order[k]]);
        batch_tokens += train[order[k]].target.size();
      }
      nn::zero_grads(params);
      const auto loss = backbone_backward(model, batch, 1.0);
      ++step;
      if (!std::isfinite(loss.total()) || !nn::grads_finite(params)) {
        std::ostringstream msg;
        msg << "backbone training diverged (seed " << cfg.seed << ", step " << step << ")";
        throw TrainingError(msg.str());
      }
      opt.step();
      nll_sum += loss.nll * static_cast<double>(batch_tokens);
      tokens += batch_tokens;
    }
    record(epoch, nll_sum / static_cast<double>(tokens));
  }
  res.model = std::move(model);
  return res;
}

}  // namespace

PretrainResult pretrain_posthoc(const std::vector<Example>& train, const std::vector<Example>& valid,
                                const BackboneConfig& config, Index vocab_size, const std::string& vocab_hash,
                                IdMap users, IdMap items, Index n_features) {
  BackboneConfig cfg = config;
  cfg.arch = Arch::posthoc;
  return pretrain(Generator(cfg, vocab_size, vocab_hash, std::move(users), std::move(items), n_features), train,
                  valid, cfg);
}

PretrainResult pretrain_multitask(const std::vector<Example>& train, const std::vector<Example>& valid,
                                  const BackboneConfig& config, Index vocab_size, const std::string& vocab_hash,
                                  IdMap users, IdMap items, Index n_features) {
  BackboneConfig cfg = config;
  cfg.arch = Arch::multitask;
  return pretrain(Generator(cfg, vocab_size, vocab_hash, std::move(users), std::move(items), n_features), train,
                  valid, cfg);
}

}  // namespace mmi::backbone
