#include "mmi/corpus.hpp"

#include "mmi/core/hash.hpp"
#include "mmi/core/math.hpp"
#include "mmi/core/random.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

namespace mmi::corpus {

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw DataError("unknown split tag '" + s + "'");
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':') {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else if (c == '"' || c == '(' || c == ')') {
      flush();
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

ReviewRecord parse_record(const nlohmann::json& obj, bool* clamped) {
  if (!obj.is_object()) throw DataError("line is not a JSON object");
  for (const char* key : {"user", "item", "rating", "text"})
    if (!obj.contains(key)) throw DataError(std::string("missing key '") + key + "'");
  if (!obj["user"].is_string() || !obj["item"].is_string() || !obj["text"].is_string())
    throw DataError("user, item and text must be strings");
  if (!obj["rating"].is_number()) throw DataError("rating must be a number");

  ReviewRecord r;
  r.user_id = obj["user"].get<std::string>();
  r.item_id = obj["item"].get<std::string>();
  const double raw = obj["rating"].get<double>();
  if (!std::isfinite(raw)) throw DataError("rating is not finite");
  const double rounded = std::floor(raw + 0.5);
  const double bounded = std::clamp(rounded, 1.0, 5.0);
  if (clamped) *clamped = bounded != rounded;
  r.rating = static_cast<int>(bounded);
  r.text = tokenize(obj["text"].get<std::string>());
  if (obj.contains("feature") && obj["feature"].is_string() && !obj["feature"].get<std::string>().empty()) {
    auto f = tokenize(obj["feature"].get<std::string>());
    if (!f.empty()) r.feature = join_tokens(f);
  }
  if (obj.contains("assigned_feature") && obj["assigned_feature"].is_string())
    r.assigned_feature = obj["assigned_feature"].get<std::string>();
  if (obj.contains("split") && obj["split"].is_string()) r.split = split_from_string(obj["split"].get<std::string>());
  return r;
}

nlohmann::json record_to_json(const ReviewRecord& r) {
  nlohmann::json j;
  j["user"] = r.user_id;
  j["item"] = r.item_id;
  j["rating"] = r.rating;
  j["text"] = join_tokens(r.text);
  if (r.feature) j["feature"] = *r.feature;
  if (r.assigned_feature) j["assigned_feature"] = *r.assigned_feature;
  j["split"] = to_string(r.split);
  return j;
}

LoadResult load_corpus(const std::filesystem::path& path, const std::string& format) {
  if (format != "jsonl") throw UsageError("unsupported corpus format '" + format + "'");
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus file " + path.string());
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      bool clamped = false;
      auto rec = parse_record(nlohmann::json::parse(line), &clamped);
      if (clamped) ++result.clamped;
      if (rec.text.empty()) throw DataError("empty text");
      result.records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      result.errors.push_back({line_no, e.what()});
    } catch (const DataError& e) {
      result.errors.push_back({line_no, e.what()});
    }
  }
  return result;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<ReviewRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

// ---------------------------------------------------------------------------

namespace {

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words{
      "the", "a", "an", "so", "and", "but", "then", "well", "honestly", "also", "just", "really", "oh",
      "yes", "overall", "actually", "anyway", "ok", "okay", "wow", ",", ".", "!", "?", ";", ":"};
  return words;
}

const std::unordered_set<std::string>& verbs() {
  static const std::unordered_set<std::string> words{
      "was", "were", "is", "are", "am", "be", "been", "had", "have", "has", "loved", "love", "liked", "like",
      "ordered", "order", "went", "go", "came", "come", "will", "would", "got", "get", "tried", "try", "ate",
      "eat", "found", "think", "thought", "enjoyed", "enjoy", "recommend", "visited", "wanted", "want",
      "asked", "did", "do", "can", "could", "'ll", "'m", "'re", "'ve", "felt", "feel", "waited", "paid"};
  return words;
}

bool first_person_pronoun(const std::string& t) { return t == "i" || t == "we" || t == "i'm" || t == "we're"; }

}  // namespace

bool is_first_person(const std::vector<std::string>& tokens) {
  for (const auto& t : tokens) {
    if (stopwords().count(t)) continue;
    if (first_person_pronoun(t)) return true;
    break;
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (verbs().count(tokens[i])) return i > 0 && first_person_pronoun(tokens[i - 1]);
  }
  return false;
}

std::vector<ReviewRecord> filter_first_person(const std::vector<ReviewRecord>& records,
                                              const FirstPersonDetector& detector) {
  std::vector<ReviewRecord> out;
  out.reserve(records.size());
  for (const auto& r : records)
    if (!detector(r.text)) out.push_back(r);
  return out;
}

std::vector<ReviewRecord> filter_min_reviews(const std::vector<ReviewRecord>& records, std::size_t min_reviews) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& r : records) ++counts[r.user_id];
  std::vector<ReviewRecord> out;
  for (const auto& r : records)
    if (counts[r.user_id] >= min_reviews) out.push_back(r);
  return out;
}

// ---------------------------------------------------------------------------

FeatureSelection select_top_features(const std::vector<ReviewRecord>& records, std::size_t k) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records)
    if (r.feature) ++counts[*r.feature];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  FeatureSelection sel;
  sel.shortfall = ranked.size() < k;
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) sel.features.push_back(ranked[i].first);
  return sel;
}

bool mentions(const std::vector<std::string>& tokens, const std::string& word) {
  return std::find(tokens.begin(), tokens.end(), word) != tokens.end();
}

std::size_t synthesize_features(std::vector<ReviewRecord>& records, const std::vector<std::string>& lexicon) {
  std::unordered_set<std::string> lex(lexicon.begin(), lexicon.end());
  std::size_t filled = 0;
  for (auto& r : records) {
    if (r.feature) continue;
    for (const auto& t : r.text) {
      if (lex.count(t)) {
        r.feature = t;
        ++filled;
        break;
      }
    }
  }
  return filled;
}

double user_attention(double mention_count, double scale) {
  if (mention_count == 0) return 0.0;
  return 1.0 + (scale - 1.0) * (2.0 * sigmoid(mention_count) - 1.0);
}

double item_quality(double mention_count, double sentiment, double scale) {
  if (mention_count == 0) return 0.0;
  return 1.0 + (scale - 1.0) * sigmoid(mention_count * sentiment);
}

FeatureProfile build_profiles(const std::vector<ReviewRecord>& train, const std::vector<std::string>& features,
                              double scale) {
  FeatureProfile prof;
  prof.features = features;
  prof.scale = scale;
  const Index K = static_cast<Index>(features.size());
  std::unordered_map<std::string, Index> feature_index;
  for (Index k = 0; k < K; ++k) feature_index[features[static_cast<std::size_t>(k)]] = k;

  std::map<std::string, Vector> user_counts, item_counts, item_sentiment;
  for (const auto& r : train) {
    if (r.feature && !feature_index.count(*r.feature)) ++prof.ignored;
    auto& uc = user_counts.try_emplace(r.user_id, Vector::Zero(K)).first->second;
    auto& ic = item_counts.try_emplace(r.item_id, Vector::Zero(K)).first->second;
    auto& is = item_sentiment.try_emplace(r.item_id, Vector::Zero(K)).first->second;
    for (Index k = 0; k < K; ++k) {
      if (!mentions(r.text, features[static_cast<std::size_t>(k)])) continue;
      uc(k) += 1;
      ic(k) += 1;
      is(k) += (r.rating - 3) / 2.0;
    }
  }
  for (const auto& [user, counts] : user_counts) {
    Vector x(K);
    for (Index k = 0; k < K; ++k) x(k) = user_attention(counts(k), scale);
    prof.users.emplace(user, std::move(x));
  }
  for (const auto& [item, counts] : item_counts) {
    const Vector& sums = item_sentiment.at(item);
    Vector y(K);
    for (Index k = 0; k < K; ++k) y(k) = counts(k) == 0 ? 0.0 : item_quality(counts(k), sums(k) / counts(k), scale);
    prof.items.emplace(item, std::move(y));
  }
  return prof;
}

Index assign_feature(const Vector& user, const Vector& item, Index fallback) {
  if (user.size() != item.size()) throw std::invalid_argument("assign_feature: vector length mismatch");
  Index best = -1;
  double best_val = 0.0;
  for (Index k = 0; k < user.size(); ++k) {
    const double v = user(k) * item(k);
    if (v > best_val) {
      best_val = v;
      best = k;
    }
  }
  return best < 0 ? fallback : best;
}

std::string assign_pair_feature(const FeatureProfile& profile, const std::string& user, const std::string& item) {
  if (profile.features.empty()) return {};
  const Vector zero = Vector::Zero(profile.size());
  auto u = profile.users.find(user);
  auto i = profile.items.find(item);
  const Index k = assign_feature(u == profile.users.end() ? zero : u->second, i == profile.items.end() ? zero : i->second, 0);
  return profile.features[static_cast<std::size_t>(k)];
}

namespace {
nlohmann::json vectors_to_json(const std::map<std::string, Vector>& m) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [id, v] : m) out[id] = std::vector<double>(v.data(), v.data() + v.size());
  return out;
}
std::map<std::string, Vector> vectors_from_json(const nlohmann::json& j) {
  std::map<std::string, Vector> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto vals = it.value().get<std::vector<double>>();
    out.emplace(it.key(), Eigen::Map<Vector>(vals.data(), static_cast<Index>(vals.size())));
  }
  return out;
}
}  // namespace

nlohmann::json FeatureProfile::to_json() const {
  return {{"features", features}, {"N", scale}, {"users", vectors_to_json(users)}, {"items", vectors_to_json(items)}};
}

FeatureProfile FeatureProfile::from_json(const nlohmann::json& j) {
  FeatureProfile p;
  p.features = j.at("features").get<std::vector<std::string>>();
  p.scale = j.at("N").get<double>();
  p.users = vectors_from_json(j.at("users"));
  p.items = vectors_from_json(j.at("items"));
  return p;
}

// ---------------------------------------------------------------------------

SplitSets split(const std::vector<ReviewRecord>& records, std::uint64_t seed, std::array<int, 3> ratios) {
  const std::size_t n = records.size();
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (total <= 0) throw UsageError("split ratios must be positive");
  const auto n_valid = static_cast<std::size_t>(std::floor(n * ratios[1] / total + 0.5));
  const auto n_test = std::min(n - n_valid, static_cast<std::size_t>(std::floor(n * ratios[2] / total + 0.5)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(order, rng);
  std::vector<std::size_t> valid_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_valid),
                                    order.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_valid + n_test), order.end());
  for (auto* idx : {&train_idx, &valid_idx, &test_idx}) std::sort(idx->begin(), idx->end());

  SplitSets out;
  auto take = [&](const std::vector<std::size_t>& idx, std::vector<ReviewRecord>& dst, Split tag) {
    dst.reserve(idx.size());
    for (auto i : idx) {
      dst.push_back(records[i]);
      dst.back().split = tag;
    }
  };
  take(train_idx, out.train, Split::train);
  take(valid_idx, out.valid, Split::valid);
  take(test_idx, out.test, Split::test);
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* t : {"<bos>", "<eos>", "<pad>", "<unk>"}) add(t);
}

TokenId Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return index_.count(token) > 0; }

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= static_cast<TokenId>(tokens_.size())) throw std::out_of_range("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenSeq Vocabulary::encode(const std::vector<std::string>& tokens) const {
  TokenSeq out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const TokenSeq& ids, bool stop_at_eos) const {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == kEos && stop_at_eos) break;
    if (id == kBos || id == kPad || id == kEos) continue;
    out.push_back(token(id));
  }
  return out;
}

std::string Vocabulary::hash() const {
  Fnv1a h;
  for (const auto& t : tokens_) {
    h.update(t);
    h.update("\n");
  }
  return h.hex();
}

nlohmann::json Vocabulary::to_json() const { return {{"tokens", tokens_}, {"hash", hash()}}; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  const auto tokens = j.at("tokens").get<std::vector<std::string>>();
  if (tokens.size() < 4 || tokens[0] != "<bos>" || tokens[1] != "<eos>" || tokens[2] != "<pad>" || tokens[3] != "<unk>")
    throw DataError("vocabulary does not start with the reserved tokens");
  Vocabulary v;
  for (std::size_t i = 4; i < tokens.size(); ++i) v.add(tokens[i]);
  if (j.contains("hash") && j["hash"].get<std::string>() != v.hash()) throw DataError("vocabulary hash mismatch");
  return v;
}

Vocabulary build_vocab(const std::vector<ReviewRecord>& train, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : train)
    for (const auto& t : r.text) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (const auto& kv : counts)
    if (kv.second >= min_freq) ranked.push_back(kv);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, c] : ranked) v.add(tok);
  return v;
}

std::array<std::size_t, 5> rating_histogram(const std::vector<ReviewRecord>& records) {
  std::array<std::size_t, 5> h{};
  for (const auto& r : records) ++h[static_cast<std::size_t>(std::clamp(r.rating, 1, 5) - 1)];
  return h;
}

}  // namespace mmi::corpus
