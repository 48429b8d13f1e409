#pragma once

// Desk-scale review generators with known ground-truth structure.

#include "mmi/corpus.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mmi::synthetic {

enum class Kind {
  rating,     // sentiment word selected by the rating; a share of reviews are generic
  feature,    // feature word selected by the record's feature; a share mention a generic noun
  sentiment,  // rating corpus without generic reviews
};

Kind kind_from_string(const std::string& s);
std::string to_string(Kind k);

struct Config {
  Kind kind = Kind::rating;
  std::size_t users = 260;
  std::size_t items = 120;
  std::size_t reviews_per_user = 22;  // average; each user gets at least 5
  std::size_t sparse_users = 8;       // users with exactly 4 reviews (removed by the min-review filter)
  double noise = 0.5;                 // share of generic reviews
  double first_person = 0.08;         // share of first-person narrative reviews
  double user_bias_sd = 0.7;
  double item_bias_sd = 0.7;
  double rating_noise_sd = 0.35;
  double rating_offset = 3.4;
  std::uint64_t seed = 1;
};

/// Sentiment words by rating (index 0 is rating 1).
const std::vector<std::vector<std::string>>& sentiment_words();
const std::vector<std::string>& feature_words();
/// Noun used by generic feature-corpus reviews; never a feature.
const std::string& generic_noun();
/// Verb used by generic rating-corpus reviews; carries no sentiment.
const std::string& generic_verb();

/// Share of generic reviews used when none is configured.
double default_noise(Kind k);

std::vector<corpus::ReviewRecord> generate(const Config& config);

/// Writes raw JSONL without split tags.
void write_raw(const std::string& path, const std::vector<corpus::ReviewRecord>& records);

}  // namespace mmi::synthetic
