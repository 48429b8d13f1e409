#include "mmi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

namespace mmi::metrics {

namespace {

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": candidate/reference count mismatch");
  if (a == 0) throw std::invalid_argument(std::string(what) + ": empty evaluation set");
}

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<Ngram, std::size_t> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[Ngram(s.begin() + i, s.begin() + i + n)];
  return out;
}

double f1(double overlap, double cand_len, double ref_len) {
  if (overlap <= 0 || cand_len <= 0 || ref_len <= 0) return 0;
  const double p = overlap / cand_len, r = overlap / ref_len;
  return 2 * p * r / (p + r);
}

}  // namespace

double fmr(const std::vector<Sentence>& explanations, const std::vector<std::string>& features) {
  if (explanations.size() != features.size()) throw std::invalid_argument("fmr: length mismatch");
  if (explanations.empty()) return 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < explanations.size(); ++i)
    hits += std::find(explanations[i].begin(), explanations[i].end(), features[i]) != explanations[i].end();
  return 100.0 * static_cast<double>(hits) / static_cast<double>(explanations.size());
}

int coarse_class(int rating) { return rating <= 2 ? 0 : (rating == 3 ? 1 : 2); }

double sentiment_accuracy(const std::vector<int>& predicted, const std::vector<int>& targets, int granularity) {
  if (predicted.size() != targets.size()) throw std::invalid_argument("sentiment_accuracy: length mismatch");
  if (granularity != 5 && granularity != 3) throw std::invalid_argument("granularity must be 5 or 3");
  if (predicted.empty()) return 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    hits += granularity == 5 ? predicted[i] == targets[i] : coarse_class(predicted[i]) == coarse_class(targets[i]);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double sentiment_accuracy(const std::vector<TokenSeq>& explanations, const std::vector<int>& targets,
                          const encoder::SentenceEncoder& classifier, int granularity) {
  if (!classifier.trained()) throw std::invalid_argument("sentiment classifier is untrained");
  return sentiment_accuracy(classifier.classify(explanations), targets, granularity);
}

double bleu(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references, int n) {
  check_aligned(candidates.size(), references.size(), "bleu");
  if (n < 1) throw std::invalid_argument("bleu: order must be positive");
  double log_prec = 0;
  double cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<double>(candidates[i].size());
    ref_len += static_cast<double>(references[i].size());
  }
  for (int order = 1; order <= n; ++order) {
    double matched = 0, total = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto cand = ngram_counts(candidates[i], static_cast<std::size_t>(order));
      const auto ref = ngram_counts(references[i], static_cast<std::size_t>(order));
      for (const auto& [gram, count] : cand) {
        total += static_cast<double>(count);
        auto it = ref.find(gram);
        if (it != ref.end()) matched += static_cast<double>(std::min(count, it->second));
      }
    }
    if (matched == 0 || total == 0) return 0.0;
    log_prec += std::log(matched / total);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return 100.0 * bp * std::exp(log_prec / n);
}

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> row(b.size() + 1, 0), prev(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      row[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], row[j - 1]);
    std::swap(row, prev);
  }
  return prev[b.size()];
}

double rouge(const std::vector<Sentence>& candidates, const std::vector<Sentence>& references, Rouge variant) {
  check_aligned(candidates.size(), references.size(), "rouge");
  double sum = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& r = references[i];
    double overlap;
    if (variant == Rouge::lcs) {
      overlap = static_cast<double>(lcs_length(c, r));
    } else {
      const auto cc = ngram_counts(c, 1), rc = ngram_counts(r, 1);
      overlap = 0;
      for (const auto& [gram, count] : cc) {
        auto it = rc.find(gram);
        if (it != rc.end()) overlap += static_cast<double>(std::min(count, it->second));
      }
    }
    sum += f1(overlap, static_cast<double>(c.size()), static_cast<double>(r.size()));
  }
  return 100.0 * sum / static_cast<double>(candidates.size());
}

// ---------------------------------------------------------------------------

nlohmann::json EvaluationReport::to_json() const {
  nlohmann::json j{{"nmi", nmi}, {"nmi_raw", nmi_raw}, {"mi_rating", mi_rating}, {"rating_entropy", rating_entropy},
                   {"mi_feature", mi_feature}, {"fmr", fmr}, {"sent_acc_5", sent_acc_5}, {"sent_acc_3", sent_acc_3},
                   {"bleu1", bleu1}, {"bleu4", bleu4}, {"rouge1_f", rouge1}, {"rougeL_f", rougeL},
                   {"n_samples", n_samples}, {"meteor", "omitted"}};
  if (rmse) j["rmse"] = *rmse;
  if (mae) j["mae"] = *mae;
  return j;
}

std::string EvaluationReport::csv_header() { return "I(R;E)/H(R),5-class,3-class,I(F;E),FMR,B-1,B-4,R-1,R-L,n_samples"; }

std::string EvaluationReport::csv_row() const {
  std::ostringstream out;
  out << std::setprecision(17) << nmi << ',' << sent_acc_5 << ',' << sent_acc_3 << ',' << mi_feature << ',' << fmr
      << ',' << bleu1 << ',' << bleu4 << ',' << rouge1 << ',' << rougeL << ',' << n_samples;
  return out.str();
}

nlohmann::json GenerationRecord::to_json() const {
  nlohmann::json j{{"user", user}, {"item", item}, {"explanation", corpus::join_tokens(explanation)},
                   {"reference", corpus::join_tokens(reference)}, {"target_rating", target_rating},
                   {"assigned_feature", assigned_feature}};
  j["predicted_rating"] = predicted_rating ? nlohmann::json(*predicted_rating) : nlohmann::json(nullptr);
  return j;
}

std::vector<int> target_ratings(const backbone::Generator& model, const std::vector<backbone::Example>& split) {
  std::vector<int> out;
  out.reserve(split.size());
  if (model.has_rating_head()) {
    const RowVector pred = model.predict_ratings(backbone::contexts_of(split));
    for (Index i = 0; i < pred.size(); ++i) out.push_back(encoder::rating_class(pred(i)));
  } else {
    for (const auto& e : split) out.push_back(e.rating);
  }
  return out;
}

EvaluationReport evaluate(const backbone::Generator& model, const std::vector<backbone::Example>& split,
                          const encoder::SentenceEncoder& enc, const encoder::FeatureTable& features,
                          const corpus::Vocabulary& vocab, const std::vector<std::string>& feature_names,
                          const EvaluateOptions& opt, std::vector<GenerationRecord>* dump) {
  if (split.empty()) throw DataError("evaluation split is empty");
  EvaluationReport rep;
  rep.n_samples = split.size();

  std::vector<backbone::GeneratedSample> samples;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < split.size(); start += chunk) {
    std::vector<backbone::Context> ctx;
    for (std::size_t i = start; i < std::min(split.size(), start + chunk); ++i) ctx.push_back(split[i].ctx);
    auto part = model.generate(ctx, backbone::DecodeMode::greedy);
    for (auto& s : part) samples.push_back(std::move(s));
  }

  std::vector<TokenSeq> words;
  std::vector<Sentence> cands, refs;
  std::vector<std::string> assigned;
  for (std::size_t i = 0; i < split.size(); ++i) {
    words.push_back(samples[i].words());
    cands.push_back(vocab.decode(words.back()));
    refs.push_back(vocab.decode(split[i].target));
    const Index f = split[i].assigned_feature;
    assigned.push_back(f >= 0 && f < static_cast<Index>(feature_names.size()) ? feature_names[static_cast<std::size_t>(f)]
                                                                               : std::string());
  }
  const auto targets = target_ratings(model, split);

  rep.fmr = fmr(cands, assigned);
  rep.bleu1 = bleu(cands, refs, 1);
  rep.bleu4 = bleu(cands, refs, 4);
  rep.rouge1 = rouge(cands, refs, Rouge::unigram);
  rep.rougeL = rouge(cands, refs, Rouge::lcs);
  if (opt.sentiment) {
    const auto predicted = enc.classify(words);
    rep.sent_acc_5 = sentiment_accuracy(predicted, targets, 5);
    rep.sent_acc_3 = sentiment_accuracy(predicted, targets, 3);
  }

  const Index n = static_cast<Index>(split.size());
  const Matrix embeddings = (opt.rating_mi || opt.feature_mi) ? enc.encode_batch(words) : Matrix();
  if (opt.rating_mi && n >= 2) {
    Matrix r(5, n);
    for (Index i = 0; i < n; ++i) r.col(i) = encoder::rating_onehot(targets[static_cast<std::size_t>(i)]);
    rep.rating_entropy = mine::onehot_entropy(r);
    if (rep.rating_entropy > 0) {
      auto cfg = opt.mine;
      cfg.seed = derive_seed(opt.seed, 0x4e4d49);
      const auto est =
          mine::train_mine(mine::Target::rating, embeddings.rows(), 5, mine::dataset_sampler(embeddings, r), cfg);
      Rng rng(derive_seed(opt.seed, 0x4e4d4945));
      const auto nmi = mine::normalized_mi(est, embeddings, r, cfg.eval_shuffles, rng);
      rep.nmi = nmi.clamped;
      rep.nmi_raw = nmi.raw;
      rep.mi_rating = nmi.raw_mi;
    }
  }
  if (opt.feature_mi && n >= 2 && features.rows.cols() > 0) {
    Matrix f(features.rows.rows(), n);
    for (Index i = 0; i < n; ++i) {
      const Index k = std::max<Index>(0, split[static_cast<std::size_t>(i)].assigned_feature);
      f.col(i) = encoder::feature_embedding(features, k);
    }
    auto cfg = opt.mine;
    cfg.seed = derive_seed(opt.seed, 0x4d4946);
    const auto est = mine::train_mine(mine::Target::feature, embeddings.rows(), f.rows(),
                                      mine::dataset_sampler(embeddings, f), cfg);
    Rng rng(derive_seed(opt.seed, 0x4d494645));
    rep.mi_feature = mine::estimate_mi(est, embeddings, f, cfg.eval_shuffles, rng);
  }
  if (model.has_rating_head()) {
    const auto err = backbone::rating_error(model, split);
    rep.rmse = err.rmse;
    rep.mae = err.mae;
  }

  if (dump) {
    dump->clear();
    for (std::size_t i = 0; i < split.size(); ++i) {
      GenerationRecord g;
      const auto& c = split[i].ctx;
      g.user = c.user < static_cast<Index>(model.users().ids().size()) ? model.users().ids()[static_cast<std::size_t>(c.user)] : "<unknown>";
      g.item = c.item < static_cast<Index>(model.items().ids().size()) ? model.items().ids()[static_cast<std::size_t>(c.item)] : "<unknown>";
      g.explanation = cands[i];
      g.reference = refs[i];
      g.target_rating = targets[i];
      g.predicted_rating = samples[i].predicted_rating;
      g.assigned_feature = assigned[i];
      dump->push_back(std::move(g));
    }
  }
  return rep;
}

}  // namespace mmi::metrics
