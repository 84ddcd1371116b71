#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "seqadv/corpus.hpp"

using namespace seqadv;

namespace {

// Exhaustive three-way recursion; only usable for tiny sequences, which is
// the point: it shares no code with the DP implementation.
int slow_edit_distance(const TokenSeq& a, const TokenSeq& b, std::size_t i = 0, std::size_t j = 0) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  const int sub = slow_edit_distance(a, b, i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
  const int del = slow_edit_distance(a, b, i + 1, j) + 1;
  const int ins = slow_edit_distance(a, b, i, j + 1) + 1;
  return std::min({sub, del, ins});
}

TokenSeq random_seq(Rng& rng, int max_len, int alphabet) {
  TokenSeq s(static_cast<std::size_t>(rng.uniform_int(max_len + 1)));
  for (int& v : s) v = Vocabulary::kSpecialCount + rng.uniform_int(alphabet);
  return s;
}

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = (std::filesystem::temp_directory_path() / name).string();
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST_CASE("edit distance matches exhaustive search on random pairs") {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    TokenSeq a = random_seq(rng, 6, 4);
    TokenSeq b = random_seq(rng, 6, 4);
    CHECK(exact_wer(a, b) == slow_edit_distance(a, b));
  }
}

TEST_CASE("edit distance hand cases") {
  CHECK(exact_wer({1, 2, 3}, {1, 2, 3}) == 0);
  CHECK(exact_wer({1, 2, 3}, {1, 9, 3}) == 1);
  CHECK(exact_wer({}, {4, 5}) == 2);
  CHECK(exact_wer({4, 5, 6}, {5, 6}) == 1);
  CHECK(exact_wer({3, 4, 5, 6}, {6, 5, 4, 3}) == 4);  // full reversal keeps only one token aligned
}

TEST_CASE("edit distance is a metric") {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    TokenSeq a = random_seq(rng, 6, 4);
    TokenSeq b = random_seq(rng, 6, 4);
    TokenSeq c = random_seq(rng, 6, 4);
    const int ab = exact_wer(a, b), ba = exact_wer(b, a);
    const int bc = exact_wer(b, c), ac = exact_wer(a, c);
    CHECK(ab >= 0);
    CHECK(ab == ba);
    CHECK((ab == 0) == (a == b));
    CHECK(ac <= ab + bc);
    CHECK(ab <= static_cast<int>(std::max(a.size(), b.size())));
  }
}

TEST_CASE("vocabulary layout and ordering") {
  Vocabulary v = build_vocab({{"a", "b"}, {"a"}});
  REQUIRE(v.size() == 5);
  CHECK(v.token(Vocabulary::kPad) == "[PAD]");
  CHECK(v.token(Vocabulary::kMask) == "[MASK]");
  CHECK(v.token(Vocabulary::kUnk) == "[UNK]");
  CHECK(v.id_of("a") == 3);  // higher frequency first
  CHECK(v.id_of("b") == 4);

  // Equal frequencies resolve alphabetically.
  Vocabulary tie = build_vocab({{"zz", "mm", "aa"}});
  CHECK(tie.id_of("aa") == 3);
  CHECK(tie.id_of("mm") == 4);
  CHECK(tie.id_of("zz") == 5);
}

TEST_CASE("vocabulary frequency threshold and unknown mapping") {
  // min_freq filters rare tokens, but the dictionary always keeps at least
  // one content token (the best-ranked survivor) to stay usable.
  Vocabulary v = build_vocab({{"a", "b"}}, 2);
  CHECK(v.size() == 4);
  CHECK(v.content_size() == 1);
  CHECK(v.id_of("a") == 3);  // frequency tie, alphabetical winner survives
  CHECK(v.encode({"a", "b"}) == TokenSeq{3, Vocabulary::kUnk});

  Vocabulary w = build_vocab({{"x", "x", "y"}}, 2);
  CHECK(w.content_size() == 1);
  CHECK(w.id_of("y") == Vocabulary::kUnk);
  CHECK(build_vocab({{"x"}}).id_of("never-seen") == Vocabulary::kUnk);
}

TEST_CASE("vocabulary over many random sequences counts distinct symbols") {
  Rng rng(3);
  std::vector<std::vector<std::string>> corpus;
  std::set<std::string> distinct;
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::string> seq(static_cast<std::size_t>(1 + rng.uniform_int(8)));
    for (std::string& t : seq) {
      t = "sym" + std::to_string(rng.uniform_int(50));
      distinct.insert(t);
    }
    corpus.push_back(std::move(seq));
  }
  REQUIRE(distinct.size() == 50);  // all symbols drawn at least once
  Vocabulary v = build_vocab(corpus);
  CHECK(v.size() == static_cast<int>(distinct.size()) + Vocabulary::kSpecialCount);
  CHECK(v.size() == 53);
}

TEST_CASE("vocabulary rejects empty corpus") {
  CHECK_THROWS(build_vocab({}));
}

TEST_CASE("encode-decode identity on in-vocabulary text") {
  Vocabulary v = build_vocab({{"red", "green", "blue", "red"}});
  const std::vector<std::string> text{"blue", "red", "green", "green"};
  CHECK(v.decode(v.encode(text)) == text);
  CHECK(v.encode(text, 2).size() == 2);  // truncation
}

TEST_CASE("stratified split keeps class proportions") {
  Dataset ds;
  ds.num_classes = 2;
  for (int i = 0; i < 100; ++i) ds.examples.push_back({{3, 4}, i < 50 ? 0 : 1});
  auto [left, right] = stratified_split(ds, 0.5, 123);
  CHECK(left.size() == 50);
  CHECK(right.size() == 50);
  CHECK(left.class_counts() == std::vector<int>{25, 25});
  CHECK(right.class_counts() == std::vector<int>{25, 25});

  Dataset skew;
  skew.num_classes = 2;
  for (int i = 0; i < 100; ++i) skew.examples.push_back({{3}, i < 90 ? 0 : 1});
  auto [a, b] = stratified_split(skew, 0.5, 9);
  CHECK(a.class_counts() == std::vector<int>{45, 5});
  CHECK(b.class_counts() == std::vector<int>{45, 5});
}

TEST_CASE("stratified split is a deterministic partition") {
  Rng rng(21);
  Dataset ds;
  ds.num_classes = 3;
  for (int i = 0; i < 120; ++i)
    ds.examples.push_back({random_seq(rng, 5, 6), rng.uniform_int(3)});
  // guarantee every class has at least two members
  ds.examples.push_back({{3}, 0});
  ds.examples.push_back({{3}, 0});
  ds.examples.push_back({{4}, 1});
  ds.examples.push_back({{4}, 1});
  ds.examples.push_back({{5}, 2});
  ds.examples.push_back({{5}, 2});

  auto [a1, b1] = stratified_split(ds, 0.3, 77);
  auto [a2, b2] = stratified_split(ds, 0.3, 77);
  CHECK(a1.examples.size() == a2.examples.size());
  for (std::size_t i = 0; i < a1.examples.size(); ++i) {
    CHECK(a1.examples[i].tokens == a2.examples[i].tokens);
    CHECK(a1.examples[i].label == a2.examples[i].label);
  }

  // No example lost or duplicated.
  std::multiset<std::pair<TokenSeq, int>> before, after;
  for (const Example& e : ds.examples) before.insert({e.tokens, e.label});
  for (const Example& e : a1.examples) after.insert({e.tokens, e.label});
  for (const Example& e : b1.examples) after.insert({e.tokens, e.label});
  CHECK(before == after);
}

TEST_CASE("stratified split refuses a class that cannot be split") {
  Dataset ds;
  ds.num_classes = 2;
  ds.examples.push_back({{3}, 0});
  ds.examples.push_back({{3}, 0});
  ds.examples.push_back({{4}, 1});  // singleton class
  CHECK_THROWS(stratified_split(ds, 0.5, 1));
}

TEST_CASE("stratified take alternates classes deterministically") {
  Dataset ds;
  ds.num_classes = 2;
  for (int i = 0; i < 20; ++i) ds.examples.push_back({{3, 3}, i % 2});
  Dataset taken = stratified_take(ds, 6);
  CHECK(taken.size() == 6);
  CHECK(taken.class_counts() == std::vector<int>{3, 3});
  Dataset all = stratified_take(ds, 99);
  CHECK(all.size() == 20);
}

namespace {

// Per-class marker counting: the Bayes-style rule the synthetic task is
// built to satisfy.
double marker_rule_accuracy(const SyntheticSpec& spec, const Dataset& ds) {
  int correct = 0;
  for (const Example& ex : ds.examples) {
    std::vector<int> counts(static_cast<std::size_t>(spec.num_classes), 0);
    for (int id : ex.tokens) {
      const int cls = spec.marker_class(id);
      if (cls >= 0) ++counts[static_cast<std::size_t>(cls)];
    }
    const int guess = static_cast<int>(
        std::max_element(counts.begin(), counts.end()) - counts.begin());
    if (guess == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace

TEST_CASE("synthetic task strength controls separability") {
  SyntheticSpec spec;
  spec.signal_strength = 1.0;
  Dataset strong = spec.generate(400, 5);
  CHECK(marker_rule_accuracy(spec, strong) == 1.0);

  spec.signal_strength = 0.5;
  Dataset mid = spec.generate(1000, 6);
  CHECK(marker_rule_accuracy(spec, mid) >= 0.9);

  spec.signal_strength = 0.0;
  Dataset none = spec.generate(1000, 7);
  const double acc = marker_rule_accuracy(spec, none);
  CHECK(acc >= 0.35);
  CHECK(acc <= 0.65);
}

TEST_CASE("synthetic sequences are well-formed and reproducible") {
  SyntheticSpec spec;
  Dataset ds = spec.generate(300, 42, "train");
  const Vocabulary vocab = spec.vocabulary();
  ds.validate(vocab.size());
  for (const Example& ex : ds.examples) {
    CHECK(ex.tokens.size() >= static_cast<std::size_t>(spec.min_len));
    CHECK(ex.tokens.size() <= static_cast<std::size_t>(spec.max_len));
    for (int id : ex.tokens) {
      CHECK(!Vocabulary::is_special(id));
      const int cls = spec.marker_class(id);
      CHECK(cls <= 1);
      if (cls >= 0) CHECK((spec.is_marker(id, cls)));
    }
  }
  Dataset again = spec.generate(300, 42, "train");
  REQUIRE(again.size() == ds.size());
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    CHECK(again.examples[i].tokens == ds.examples[i].tokens);
    CHECK(again.examples[i].label == ds.examples[i].label);
  }
  CHECK_THROWS(SyntheticSpec{.num_classes = 10, .vocab_size = 5}.check());
}

TEST_CASE("dataset files round-trip in both formats") {
  SyntheticSpec spec;
  const Vocabulary vocab = spec.vocabulary();
  Dataset ds = spec.generate(40, 13, "test");
  for (DataFormat fmt : {DataFormat::kJsonl, DataFormat::kTsv}) {
    const std::string path =
        write_temp(fmt == DataFormat::kJsonl ? "seqadv_rt.jsonl" : "seqadv_rt.tsv", "");
    save_dataset(ds, vocab, path, fmt);
    Dataset back = load_dataset(path, fmt, vocab, 0);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
      CHECK(back.examples[i].tokens == ds.examples[i].tokens);
      CHECK(back.examples[i].label == ds.examples[i].label);
    }
    std::remove(path.c_str());
  }
}

TEST_CASE("jsonl loader parses the documented shape") {
  const std::string path =
      write_temp("seqadv_ok.jsonl", "{\"tokens\":[\"a\",\"b\"],\"label\":1}\n");
  RawDataset raw = load_raw_dataset(path, DataFormat::kJsonl);
  REQUIRE(raw.sequences.size() == 1);
  CHECK(raw.sequences[0] == std::vector<std::string>{"a", "b"});
  CHECK(raw.labels[0] == 1);
  std::remove(path.c_str());
}

TEST_CASE("malformed dataset lines are reported with their line number") {
  const std::string path = write_temp(
      "seqadv_bad.jsonl", "{\"tokens\":[\"a\"],\"label\":0}\nnot json at all\n");
  try {
    load_raw_dataset(path, DataFormat::kJsonl);
    FAIL("expected a parse error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  std::remove(path.c_str());

  const std::string empty = write_temp("seqadv_empty.jsonl", "");
  CHECK_THROWS(load_raw_dataset(empty, DataFormat::kJsonl));
  std::remove(empty.c_str());
}

TEST_CASE("vocabulary file round-trip preserves identity") {
  Vocabulary v = build_vocab({{"tok1", "tok2", "tok3", "tok1"}});
  const std::string path = write_temp("seqadv_vocab.json", "");
  save_vocab(v, path);
  Vocabulary back = load_vocab(path);
  CHECK(back.hash() == v.hash());
  CHECK(back.tokens == v.tokens);
  std::remove(path.c_str());
}
