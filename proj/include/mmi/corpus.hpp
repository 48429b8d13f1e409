#pragma once

// Review ingestion, filtering, vocabulary and feature profiles.

#include "mmi/core/types.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace mmi::corpus {

enum class Split { train, valid, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ReviewRecord {
  std::string user_id;
  std::string item_id;
  int rating = 3;
  std::vector<std::string> text;
  std::optional<std::string> feature;
  std::optional<std::string> assigned_feature;
  Split split = Split::train;
};

/// Lowercases and splits on whitespace; sentence punctuation becomes its own token.
std::vector<std::string> tokenize(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

struct LineError {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<ReviewRecord> records;
  std::size_t clamped = 0;
  std::vector<LineError> errors;
};

/// Reads a corpus file. Only the "jsonl" format is defined. Malformed lines
/// are reported with their line number and skipped; an unreadable file
/// throws DataError.
LoadResult load_corpus(const std::filesystem::path& path, const std::string& format = "jsonl");

/// Parses one JSONL object into a record (rating clamped into 1..5).
ReviewRecord parse_record(const nlohmann::json& obj, bool* clamped = nullptr);
nlohmann::json record_to_json(const ReviewRecord& r);

void write_jsonl(const std::filesystem::path& path, const std::vector<ReviewRecord>& records);

// ---------------------------------------------------------------------------
// Filtering

using FirstPersonDetector = std::function<bool(const std::vector<std::string>&)>;

/// Rule-based main-clause subject test: the first non-stopword token is
/// "i"/"we", or "i"/"we" immediately precedes the first verb-like token.
bool is_first_person(const std::vector<std::string>& tokens);

std::vector<ReviewRecord> filter_first_person(const std::vector<ReviewRecord>& records,
                                              const FirstPersonDetector& detector = is_first_person);

/// Drops every record of users with fewer than min_reviews reviews.
std::vector<ReviewRecord> filter_min_reviews(const std::vector<ReviewRecord>& records, std::size_t min_reviews);

// ---------------------------------------------------------------------------
// Features

struct FeatureSelection {
  std::vector<std::string> features;
  bool shortfall = false;  // fewer than K distinct features were available
};

/// The K most frequent annotated features, ties broken lexicographically.
FeatureSelection select_top_features(const std::vector<ReviewRecord>& records, std::size_t k);

/// Fills missing annotations with the first lexicon token found in the text.
/// Returns how many records were annotated.
std::size_t synthesize_features(std::vector<ReviewRecord>& records, const std::vector<std::string>& lexicon);

/// Exact token membership.
bool mentions(const std::vector<std::string>& tokens, const std::string& word);

struct FeatureProfile {
  std::vector<std::string> features;
  double scale = 5.0;  // N
  std::map<std::string, Vector> users;
  std::map<std::string, Vector> items;
  std::size_t ignored = 0;  // annotations outside the feature list

  Index size() const { return static_cast<Index>(features.size()); }
  nlohmann::json to_json() const;
  static FeatureProfile from_json(const nlohmann::json& j);
};

/// User attention: 0 when count is 0, else 1 + (N-1)(2 sigmoid(count) - 1).
double user_attention(double mention_count, double scale);
/// Item quality: 0 when count is 0, else 1 + (N-1) sigmoid(count * sentiment).
double item_quality(double mention_count, double sentiment, double scale);

/// Builds user/item feature vectors from train-split records only. Item
/// sentiment per feature is the mean of (rating - 3) / 2 over mentioning reviews.
FeatureProfile build_profiles(const std::vector<ReviewRecord>& train, const std::vector<std::string>& features,
                              double scale = 5.0);

/// argmax_k x_k * y_k with lowest-index tie-break; all-zero products give fallback.
Index assign_feature(const Vector& user, const Vector& item, Index fallback = 0);

/// Feature name for a (user, item) pair; the most frequent feature is the fallback.
std::string assign_pair_feature(const FeatureProfile& profile, const std::string& user, const std::string& item);

// ---------------------------------------------------------------------------
// Splitting and vocabulary

struct SplitSets {
  std::vector<ReviewRecord> train, valid, test;
};

/// Seeded random partition with sizes round(n*b/s), round(n*c/s) for valid
/// and test; train takes the remainder. Each part keeps input order.
SplitSets split(const std::vector<ReviewRecord>& records, std::uint64_t seed, std::array<int, 3> ratios = {8, 1, 1});

class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kUnk = 3;

  Vocabulary();

  TokenId add(const std::string& token);
  TokenId id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const;
  const std::string& token(TokenId id) const;
  Index size() const { return static_cast<Index>(tokens_.size()); }

  TokenSeq encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const TokenSeq& ids, bool stop_at_eos = true) const;

  std::string hash() const;
  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Tokens with train frequency >= min_freq, ordered by descending frequency then lexicographically.
Vocabulary build_vocab(const std::vector<ReviewRecord>& train, std::size_t min_freq);

/// Rating distribution entropy helper input: histogram of ratings 1..5.
std::array<std::size_t, 5> rating_histogram(const std::vector<ReviewRecord>& records);

}  // namespace mmi::corpus
