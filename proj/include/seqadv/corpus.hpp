#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "seqadv/rng.hpp"

namespace seqadv {

using TokenSeq = std::vector<int>;

// Token ids are indices into `tokens`. The first three slots are reserved
// service tokens with fixed positions; content tokens follow, ordered by
// descending corpus frequency with ties broken lexicographically.
struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kUnk = 2;
  static constexpr int kSpecialCount = 3;

  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;

  static Vocabulary from_tokens(std::vector<std::string> content);

  int size() const { return static_cast<int>(tokens.size()); }
  int content_size() const { return size() - kSpecialCount; }
  static bool is_special(int id) { return id >= 0 && id < kSpecialCount; }

  int id_of(const std::string& tok) const;  // kUnk for unknown tokens
  const std::string& token(int id) const;

  // max_len <= 0 means no truncation.
  TokenSeq encode(const std::vector<std::string>& toks, int max_len = 0) const;
  std::vector<std::string> decode(const TokenSeq& ids) const;

  std::uint64_t hash() const;
};

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, int min_freq = 1);

struct Example {
  TokenSeq tokens;
  int label = 0;
};

struct Dataset {
  std::vector<Example> examples;
  int num_classes = 0;
  std::string split_tag;

  std::size_t size() const { return examples.size(); }
  void validate(int vocab_size) const;  // throws on malformed content
  std::vector<int> class_counts() const;
};

// Word error rate as an unnormalized edit distance (insertions + deletions +
// substitutions) between token sequences.
int exact_wer(const TokenSeq& a, const TokenSeq& b);

// Splits with per-class proportions preserved within rounding. The first part
// receives `fraction` of each class. Deterministic in (input order, seed).
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double fraction, std::uint64_t seed);

// Deterministic stratified selection of n examples (round-robin over classes
// in stored order). n greater than the dataset size returns everything.
Dataset stratified_take(const Dataset& ds, int n);

// Synthetic classification task. Each class owns a disjoint marker-token set;
// every position is a class marker with probability `signal_strength`,
// otherwise the background token assigned to that position (background tokens
// rotate with position, so the off-signal part of every sequence is fully
// predictable from position alone).
struct SyntheticSpec {
  int num_classes = 2;
  int vocab_size = 30;  // content tokens (markers + background)
  int min_len = 5;
  int max_len = 12;
  double signal_strength = 0.5;

  int markers_per_class() const;
  int background_count() const;
  void check() const;  // throws std::invalid_argument on infeasible parameters

  Vocabulary vocabulary() const;
  bool is_marker(int id, int cls) const;
  int marker_class(int id) const;  // -1 for background/special ids

  Dataset generate(int num_examples, std::uint64_t seed, std::string split_tag = "") const;
};

Dataset synth_generate(int num_classes, int num_examples, int min_len, int max_len, int vocab_size,
                       double signal_strength, std::uint64_t seed);

// --- dataset files ---

struct RawDataset {
  std::vector<std::vector<std::string>> sequences;
  std::vector<int> labels;
};

enum class DataFormat { kJsonl, kTsv };

DataFormat parse_format(const std::string& name);

RawDataset load_raw_dataset(const std::string& path, DataFormat fmt);
Dataset encode_dataset(const RawDataset& raw, const Vocabulary& vocab, int max_len);
Dataset load_dataset(const std::string& path, DataFormat fmt, const Vocabulary& vocab, int max_len);
void save_dataset(const Dataset& ds, const Vocabulary& vocab, const std::string& path, DataFormat fmt);

void save_vocab(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocab(const std::string& path);

}  // namespace seqadv
