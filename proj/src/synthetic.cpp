#include "mmi/synthetic.hpp"

#include "mmi/core/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mmi::synthetic {

namespace {

using Words = std::vector<std::string>;

const Words kSides{"fries", "rice", "bread", "beans", "chips", "salsa", "olives", "pickles", "noodles", "potatoes",
                   "greens", "corn", "onions", "mushrooms", "peppers", "carrots", "spinach", "cheese", "garlic",
                   "butter", "honey", "lemon", "ginger", "herbs", "pesto", "tofu", "eggs", "bacon", "ham", "shrimp"};
const Words kMeals{"lunch", "dinner", "brunch", "breakfast", "supper"};
const Words kDays{"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"};
const Words kSpots{"bar", "counter", "patio", "window", "table", "corner", "booth", "terrace", "lounge", "garden",
                   "rooftop", "kitchen"};
const Words kLandmarks{"station", "park", "river", "bridge", "market", "museum", "library", "stadium", "harbor",
                       "square", "mall", "campus"};
const Words kTimes{"morning", "afternoon", "evening", "night", "weekend", "holiday"};
const Words kCompany{"friends", "family", "kids", "parents", "wife", "husband", "boss", "team", "neighbors",
                     "cousins"};
const Words kAdverbs{"again", "today", "tonight", "yesterday", "recently", "finally", "lately", "usually",
                     "sometimes", "once"};
const Words kDescriptors{"fresh", "warm", "cold", "spicy", "sweet", "salty", "crispy", "creamy", "hot", "large",
                         "small", "house", "daily", "special", "classic", "local", "homemade", "grilled", "fried",
                         "baked"};

const std::string& pick(const Words& w, Rng& rng) { return w[uniform_index(rng, w.size())]; }

void append_phrase(Words& out, Rng& rng) {
  switch (uniform_index(rng, 8)) {
    case 0: out.insert(out.end(), {"with", pick(kSides, rng)}); break;
    case 1: out.insert(out.end(), {"for", pick(kMeals, rng)}); break;
    case 2: out.insert(out.end(), {"on", pick(kDays, rng)}); break;
    case 3: out.insert(out.end(), {"at", "the", pick(kSpots, rng)}); break;
    case 4: out.insert(out.end(), {"near", "the", pick(kLandmarks, rng)}); break;
    case 5: out.insert(out.end(), {"in", "the", pick(kTimes, rng)}); break;
    case 6: out.insert(out.end(), {"with", "my", pick(kCompany, rng)}); break;
    default: out.push_back(pick(kAdverbs, rng)); break;
  }
}

void append_tail(Words& out, Rng& rng) {
  const double u = uniform01(rng);
  const int phrases = u < 0.4 ? 0 : (u < 0.8 ? 1 : 2);
  for (int i = 0; i < phrases; ++i) append_phrase(out, rng);
}

void append_subject(Words& out, const std::string& noun, Rng& rng) {
  out.push_back("the");
  if (uniform01(rng) < 0.3) out.push_back(pick(kDescriptors, rng));
  out.push_back(noun);
}

Words first_person_review(const std::string& feature, Rng& rng) {
  Words out;
  switch (uniform_index(rng, 4)) {
    case 0: out = {"i", "loved", "the", feature}; break;
    case 1: out = {"we", "will", "come", "back"}; break;
    case 2: out = {"i", "ordered", "the", feature}; break;
    default: out = {"we", "had", "the", feature}; break;
  }
  append_tail(out, rng);
  return out;
}

}  // namespace

Kind kind_from_string(const std::string& s) {
  if (s == "rating") return Kind::rating;
  if (s == "feature") return Kind::feature;
  if (s == "sentiment") return Kind::sentiment;
  throw UsageError("unknown synthetic corpus kind '" + s + "'");
}

std::string to_string(Kind k) {
  switch (k) {
    case Kind::rating: return "rating";
    case Kind::feature: return "feature";
    case Kind::sentiment: return "sentiment";
  }
  return "rating";
}

double default_noise(Kind k) { return k == Kind::feature ? 0.6 : 0.5; }

const std::vector<std::vector<std::string>>& sentiment_words() {
  static const std::vector<std::vector<std::string>> words{{"terrible", "awful", "horrible"},
                                                           {"bland", "mediocre", "disappointing"},
                                                           {"okay", "decent", "average"},
                                                           {"good", "tasty", "nice"},
                                                           {"amazing", "excellent", "delicious"}};
  return words;
}

const std::vector<std::string>& feature_words() {
  static const Words words{"pasta", "pizza", "burger", "salad", "sauce", "coffee", "wine", "dessert", "steak", "soup"};
  return words;
}

const std::string& generic_noun() {
  static const std::string w = "food";
  return w;
}

const std::string& generic_verb() {
  static const std::string w = "served";
  return w;
}

std::vector<corpus::ReviewRecord> generate(const Config& cfg) {
  Rng rng(cfg.seed);
  const auto& features = feature_words();
  const std::size_t n_feat = features.size();

  std::vector<double> item_bias(cfg.items);
  std::vector<std::size_t> item_signature(cfg.items);
  for (std::size_t j = 0; j < cfg.items; ++j) {
    item_bias[j] = standard_normal(rng) * cfg.item_bias_sd;
    item_signature[j] = uniform_index(rng, n_feat);
  }

  const std::size_t total_users = cfg.users + cfg.sparse_users;
  std::vector<corpus::ReviewRecord> out;
  for (std::size_t u = 0; u < total_users; ++u) {
    const double user_bias = standard_normal(rng) * cfg.user_bias_sd;
    std::array<std::size_t, 3> liked{uniform_index(rng, n_feat), uniform_index(rng, n_feat), uniform_index(rng, n_feat)};
    std::size_t count;
    if (u >= cfg.users) {
      count = 4;
    } else {
      const std::size_t spread = cfg.reviews_per_user;  // uniform on [5, 2*avg - 5]
      count = 5 + uniform_index(rng, std::max<std::size_t>(1, 2 * spread - 9));
    }
    for (std::size_t n = 0; n < count; ++n) {
      const std::size_t item = uniform_index(rng, cfg.items);
      const double latent = cfg.rating_offset + user_bias + item_bias[item] + cfg.rating_noise_sd * standard_normal(rng);
      const int rating = static_cast<int>(std::clamp(std::floor(latent + 0.5), 1.0, 5.0));

      const double fu = uniform01(rng);
      const std::size_t feat = fu < 0.5 ? item_signature[item] : (fu < 0.8 ? liked[uniform_index(rng, 3)] : uniform_index(rng, n_feat));
      const std::string& feature = features[feat];
      const std::string& sentiment = pick(sentiment_words()[static_cast<std::size_t>(rating - 1)], rng);

      Words text;
      if (uniform01(rng) < cfg.first_person) {
        text = first_person_review(feature, rng);
      } else {
        const bool generic = cfg.kind != Kind::sentiment && uniform01(rng) < cfg.noise;
        if (cfg.kind == Kind::feature) {
          append_subject(text, generic ? generic_noun() : feature, rng);
          text.push_back("was");
          text.push_back(sentiment);
        } else {
          append_subject(text, feature, rng);
          text.push_back("was");
          text.push_back(generic ? generic_verb() : sentiment);
        }
        append_tail(text, rng);
      }

      corpus::ReviewRecord r;
      r.user_id = "u" + std::to_string(u);
      r.item_id = "i" + std::to_string(item);
      r.rating = rating;
      r.text = std::move(text);
      r.feature = feature;
      out.push_back(std::move(r));
    }
  }
  return out;
}

void write_raw(const std::string& path, const std::vector<corpus::ReviewRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& r : records) {
    nlohmann::json j{{"user", r.user_id}, {"item", r.item_id}, {"rating", r.rating}, {"text", corpus::join_tokens(r.text)}};
    if (r.feature) j["feature"] = *r.feature;
    out << j.dump() << '\n';
  }
}

}  // namespace mmi::synthetic
