#include "mmi/encoder.hpp"

#include "mmi/core/hash.hpp"
#include "mmi/core/math.hpp"
#include "mmi/nn/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mmi::encoder {

using corpus::Vocabulary;

int rating_class(double rating) {
  if (!std::isfinite(rating)) throw std::invalid_argument("rating is not finite");
  const double clamped = std::clamp(rating, 1.0, 5.0);
  return static_cast<int>(std::clamp(std::floor(clamped + 0.5), 1.0, 5.0));
}

Vector rating_onehot(double rating) {
  Vector v = Vector::Zero(5);
  v(rating_class(rating) - 1) = 1.0;
  return v;
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"embed_dim", embed_dim}, {"sentence_dim", sentence_dim}, {"epochs", epochs}, {"batch", batch},
          {"lr", lr}, {"clip_norm", clip_norm}, {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.sentence_dim = j.value("sentence_dim", c.sentence_dim);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  return c;
}

SentenceEncoder::SentenceEncoder(Index vocab_size, std::string vocab_hash, const EncoderConfig& config)
    : embed_("enc.embed", vocab_size, config.embed_dim),
      fwd_("enc.fwd", config.embed_dim, config.sentence_dim / 2),
      bwd_("enc.bwd", config.embed_dim, config.sentence_dim / 2),
      head_("enc.head", 2 * (config.sentence_dim / 2), 5),
      vocab_hash_(std::move(vocab_hash)),
      config_(config) {
  if (config.sentence_dim < 2 || config.sentence_dim % 2) throw UsageError("sentence_dim must be even and positive");
  Rng rng(derive_seed(config.seed, 0x454e43));
  embed_.init(rng, 0.3);
  fwd_.init(rng);
  bwd_.init(rng);
  head_.init(rng);
}

nn::ParamList<Real> SentenceEncoder::params() {
  nn::ParamList<Real> out;
  embed_.collect(out);
  fwd_.collect(out);
  bwd_.collect(out);
  head_.collect(out);
  return out;
}

SentenceEncoder::Batch SentenceEncoder::make_batch(const std::vector<TokenSeq>& seqs) {
  Batch b;
  const Index B = static_cast<Index>(seqs.size());
  std::size_t T = 1;
  for (const auto& s : seqs) T = std::max(T, s.size());
  b.steps.assign(T, std::vector<int>(static_cast<std::size_t>(B), Vocabulary::kPad));
  b.masks.assign(T, RowVector::Zero(B));
  b.lengths = RowVector::Zero(B);
  for (Index c = 0; c < B; ++c) {
    const auto& s = seqs[static_cast<std::size_t>(c)];
    bool any = false;
    for (std::size_t t = 0; t < s.size(); ++t) {
      if (s[t] == Vocabulary::kPad) continue;
      b.steps[t][static_cast<std::size_t>(c)] = s[t];
      b.masks[t](c) = 1.0;
      b.lengths(c) += 1.0;
      any = true;
    }
    if (!any) {
      // An empty sentence encodes as the lone EOS token.
      b.steps[0][static_cast<std::size_t>(c)] = Vocabulary::kEos;
      b.masks[0](c) = 1.0;
      b.lengths(c) = 1.0;
    }
  }
  return b;
}

Matrix SentenceEncoder::forward(const Batch& batch, Trace* trace) const {
  const std::size_t T = batch.steps.size();
  const Index B = batch.lengths.size();
  const Index H = fwd_.hidden();
  std::vector<Matrix> xs(T);
  for (std::size_t t = 0; t < T; ++t) xs[t] = embed_.forward(batch.steps[t]);

  Matrix pooled = Matrix::Zero(2 * H, B);
  std::vector<Matrix> hf(T), hb(T);
  if (trace) {
    trace->fwd.resize(T);
    trace->bwd.resize(T);
  }
  Matrix h = Matrix::Zero(H, B);
  for (std::size_t t = 0; t < T; ++t) {
    h = fwd_.forward(xs[t], h, trace ? &trace->fwd[t] : nullptr, &batch.masks[t]);
    hf[t] = h;
  }
  h = Matrix::Zero(H, B);
  for (std::size_t k = T; k-- > 0;) {
    h = bwd_.forward(xs[k], h, trace ? &trace->bwd[k] : nullptr, &batch.masks[k]);
    hb[k] = h;
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (Index c = 0; c < B; ++c) {
      if (batch.masks[t](c) == 0) continue;
      pooled.col(c).head(H) += hf[t].col(c);
      pooled.col(c).tail(H) += hb[t].col(c);
    }
  }
  for (Index c = 0; c < B; ++c) pooled.col(c) /= batch.lengths(c);
  if (trace) {
    trace->hf = std::move(hf);
    trace->hb = std::move(hb);
  }
  return pooled;
}

void SentenceEncoder::backward(const Batch& batch, const Trace& trace, const Matrix& grad_pooled) {
  const std::size_t T = batch.steps.size();
  const Index B = batch.lengths.size();
  const Index H = fwd_.hidden();

  Matrix g_top = grad_pooled.topRows(H);
  Matrix g_bot = grad_pooled.bottomRows(H);
  for (Index c = 0; c < B; ++c) {
    g_top.col(c) /= batch.lengths(c);
    g_bot.col(c) /= batch.lengths(c);
  }
  auto masked = [&](const Matrix& g, std::size_t t) {
    Matrix out = g;
    for (Index c = 0; c < B; ++c)
      if (batch.masks[t](c) == 0) out.col(c).setZero();
    return out;
  };

  std::vector<Matrix> dx(T);
  Matrix dh = Matrix::Zero(H, B), dprev;
  for (std::size_t k = T; k-- > 0;) {
    dh += masked(g_top, k);
    dx[k] = fwd_.backward(trace.fwd[k], dh, dprev);
    dh = dprev;
  }
  dh.setZero();
  for (std::size_t t = 0; t < T; ++t) {
    dh += masked(g_bot, t);
    dx[t] += bwd_.backward(trace.bwd[t], dh, dprev);
    dh = dprev;
  }
  for (std::size_t t = 0; t < T; ++t) embed_.backward(batch.steps[t], dx[t]);
}

Vector SentenceEncoder::encode(const TokenSeq& tokens) const {
  return forward(make_batch({tokens}), nullptr).col(0);
}

Matrix SentenceEncoder::encode_batch(const std::vector<TokenSeq>& seqs) const {
  // One sequence at a time, so an embedding never depends on its batch neighbours.
  const Index d = sentence_dim();
  Matrix out(d, static_cast<Index>(seqs.size()));
  for (std::size_t i = 0; i < seqs.size(); ++i) out.col(static_cast<Index>(i)) = encode(seqs[i]);
  return out;
}

Vector SentenceEncoder::token_embedding(TokenId id) const {
  if (id < 0 || id >= static_cast<TokenId>(vocab_size())) throw std::out_of_range("token id out of range");
  return embed_.table.value.col(id);
}

Matrix SentenceEncoder::class_probabilities(const std::vector<TokenSeq>& seqs) const {
  return softmax_columns(head_.forward(encode_batch(seqs)));
}

std::vector<int> SentenceEncoder::classify(const std::vector<TokenSeq>& seqs) const {
  const Matrix probs = class_probabilities(seqs);
  std::vector<int> out(seqs.size());
  for (Index c = 0; c < probs.cols(); ++c) {
    Index best;
    probs.col(c).maxCoeff(&best);
    out[static_cast<std::size_t>(c)] = static_cast<int>(best) + 1;
  }
  return out;
}

nlohmann::json SentenceEncoder::to_json() const {
  return {{"kind", "sentence_encoder"}, {"vocab_hash", vocab_hash_}, {"vocab_size", vocab_size()},
          {"embed_dim", embed_dim()}, {"sentence_dim", sentence_dim()}, {"trained", trained_},
          {"config", config_.to_json()}, {"params", nn::params_to_json(params())}};
}

SentenceEncoder SentenceEncoder::from_json(const nlohmann::json& j, const std::string& expected_vocab_hash) {
  if (j.value("kind", "") != "sentence_encoder") throw DataError("not an encoder checkpoint");
  const auto hash = j.at("vocab_hash").get<std::string>();
  if (hash != expected_vocab_hash)
    throw DataError("encoder checkpoint vocabulary hash " + hash + " does not match " + expected_vocab_hash);
  auto cfg = EncoderConfig::from_json(j.at("config"));
  cfg.embed_dim = j.at("embed_dim").get<Index>();
  cfg.sentence_dim = j.at("sentence_dim").get<Index>();
  SentenceEncoder enc(j.at("vocab_size").get<Index>(), hash, cfg);
  nn::params_from_json(enc.params(), j.at("params"));
  enc.trained_ = j.value("trained", false);
  return enc;
}

std::string SentenceEncoder::checkpoint_hash() const { return hash_string(to_json().dump()); }

// ---------------------------------------------------------------------------

struct EncoderTrainer {
  static double accuracy(const SentenceEncoder& enc, const std::vector<TokenSeq>& seqs, const std::vector<int>& labels) {
    if (seqs.empty()) return 0.0;
    const auto pred = enc.classify(seqs);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
  }

  static EncoderReport run(const std::vector<TokenSeq>& train, const std::vector<int>& labels,
                           const std::vector<TokenSeq>& heldout, const std::vector<int>& heldout_labels,
                           Index vocab_size, const std::string& vocab_hash, const EncoderConfig& cfg) {
    if (train.size() != labels.size() || heldout.size() != heldout_labels.size())
      throw std::invalid_argument("train_encoder: sequence/label count mismatch");
    EncoderReport rep;
    rep.encoder = SentenceEncoder(vocab_size, vocab_hash, cfg);
    SentenceEncoder& enc = rep.encoder;
    auto params = enc.params();
    nn::Adam<Real> opt(params, {.lr = cfg.lr, .clip_norm = cfg.clip_norm});
    Rng rng(derive_seed(cfg.seed, 0x454e43545231));

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      shuffle(order, rng);
      double loss_sum = 0;
      std::size_t seen = 0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
        std::vector<TokenSeq> seqs;
        std::vector<int> y;
        for (std::size_t k = start; k < end; ++k) {
          seqs.push_back(train[order[k]]);
          y.push_back(labels[order[k]]);
        }
        const Index B = static_cast<Index>(seqs.size());
        nn::zero_grads(params);
        auto batch = SentenceEncoder::make_batch(seqs);
        SentenceEncoder::Trace trace;
        Matrix pooled = enc.forward(batch, &trace);
        Matrix logits = enc.head_.forward(pooled);
        Matrix logp = log_softmax_columns(logits);
        Matrix dlogits = logp.array().exp().matrix();
        double loss = 0;
        for (Index c = 0; c < B; ++c) {
          const Index cls = y[static_cast<std::size_t>(c)] - 1;
          loss -= logp(cls, c);
          dlogits(cls, c) -= 1.0;
        }
        dlogits /= static_cast<Real>(B);
        loss /= static_cast<double>(B);
        ++step;
        if (!std::isfinite(loss)) {
          std::ostringstream msg;
          msg << "encoder training diverged (seed " << cfg.seed << ", step " << step << ")";
          throw TrainingError(msg.str());
        }
        Matrix dpooled = enc.head_.backward(dlogits, pooled);
        enc.backward(batch, trace, dpooled);
        opt.step();
        loss_sum += loss * static_cast<double>(B);
        seen += static_cast<std::size_t>(B);
      }
      rep.epoch_loss.push_back(seen ? loss_sum / static_cast<double>(seen) : 0.0);
    }
    enc.trained_ = true;
    rep.heldout_accuracy = accuracy(enc, heldout, heldout_labels);
    return rep;
  }
};

EncoderReport train_encoder(const std::vector<TokenSeq>& train, const std::vector<int>& train_ratings,
                            const std::vector<TokenSeq>& heldout, const std::vector<int>& heldout_ratings,
                            Index vocab_size, const std::string& vocab_hash, const EncoderConfig& config) {
  return EncoderTrainer::run(train, train_ratings, heldout, heldout_ratings, vocab_size, vocab_hash, config);
}

EncoderReport train_encoder(const std::vector<corpus::ReviewRecord>& train,
                            const std::vector<corpus::ReviewRecord>& heldout, const corpus::Vocabulary& vocab,
                            const EncoderConfig& config) {
  std::vector<TokenSeq> xs, hx;
  std::vector<int> ys, hy;
  for (const auto& r : train) {
    xs.push_back(vocab.encode(r.text));
    ys.push_back(r.rating);
  }
  for (const auto& r : heldout) {
    hx.push_back(vocab.encode(r.text));
    hy.push_back(r.rating);
  }
  return train_encoder(xs, ys, hx, hy, vocab.size(), vocab.hash(), config);
}

FeatureTable feature_embeddings(const SentenceEncoder& enc, const corpus::Vocabulary& vocab,
                                const std::vector<std::string>& features) {
  FeatureTable t;
  t.rows.resize(enc.embed_dim(), static_cast<Index>(features.size()));
  for (std::size_t k = 0; k < features.size(); ++k) {
    if (!vocab.contains(features[k])) t.missing.push_back(features[k]);
    t.rows.col(static_cast<Index>(k)) = enc.token_embedding(vocab.id(features[k]));
  }
  return t;
}

Vector feature_embedding(const FeatureTable& table, Index feature) {
  if (feature < 0 || feature >= table.rows.cols()) throw std::out_of_range("feature index out of range");
  return table.rows.col(feature);
}

}  // namespace mmi::encoder
