#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "seqadv/corpus.hpp"
#include "seqadv/models.hpp"
#include "seqadv/train.hpp"

using namespace seqadv;

namespace {

Mat onehot(const TokenSeq& x, int vocab) {
  Mat m = Mat::Zero(static_cast<Eigen::Index>(x.size()), vocab);
  for (std::size_t i = 0; i < x.size(); ++i) m(static_cast<Eigen::Index>(i), x[i]) = 1.0;
  return m;
}

TokenSeq random_content_seq(Rng& rng, int len, int vocab) {
  TokenSeq x(static_cast<std::size_t>(len));
  for (auto& t : x) t = Vocabulary::kSpecialCount + rng.uniform_int(vocab - Vocabulary::kSpecialCount);
  return x;
}

Eigen::VectorXd softmax_vec(const Eigen::VectorXd& z) {
  Eigen::ArrayXd e = (z.array() - z.maxCoeff()).exp();
  return (e / e.sum()).matrix();
}

ClassifierConfig small_classifier(ClassifierKind kind, int vocab) {
  ClassifierConfig cfg;
  cfg.kind = kind;
  cfg.vocab = vocab;
  cfg.num_classes = 2;
  cfg.embed_dim = 16;
  cfg.hidden = 16;
  cfg.num_filters = 4;
  return cfg;
}

}  // namespace

TEST_CASE("corruption hits tokens at the configured rates") {
  const int vocab = 30, content = vocab - Vocabulary::kSpecialCount;
  const int n = 20000;
  TokenSeq x(n, 5);
  MaskingConfig cfg{0.5, 0.1};
  Rng rng(7);
  MaskResult r = mask_corrupt(x, cfg, rng, vocab);
  REQUIRE(r.corrupted.size() == x.size());

  int masked = 0, changed = 0;
  for (int i = 0; i < n; ++i) {
    const int c = r.corrupted[static_cast<std::size_t>(i)];
    CHECK((c == Vocabulary::kMask || c >= Vocabulary::kSpecialCount));
    CHECK(c < vocab);
    if (c == Vocabulary::kMask)
      ++masked;
    else if (c != 5)
      ++changed;
  }
  const double mask_frac = masked / static_cast<double>(n);
  CHECK(mask_frac >= 0.48);
  CHECK(mask_frac <= 0.52);
  // A replacement can redraw the original token, so the visible-change rate is
  // p_replace * (content-1)/content.
  const double expect_changed = 0.1 * (content - 1) / static_cast<double>(content);
  const double changed_frac = changed / static_cast<double>(n);
  CHECK(std::abs(changed_frac - expect_changed) <= 0.015);

  // The recorded positions are exactly the masked plus visibly-changed ones.
  std::set<int> recorded(r.masked_positions.begin(), r.masked_positions.end());
  CHECK(recorded.size() == r.masked_positions.size());
  for (int i = 0; i < n; ++i) {
    const bool differs = r.corrupted[static_cast<std::size_t>(i)] != x[static_cast<std::size_t>(i)];
    CHECK(recorded.count(i) == static_cast<std::size_t>(differs ? 1 : 0));
  }
}

TEST_CASE("corruption edge cases and input validation") {
  Rng rng(9);
  TokenSeq x{3, 4, 5, 6};
  MaskResult same = mask_corrupt(x, MaskingConfig{0.0, 0.0}, rng, 10);
  CHECK(same.corrupted == x);
  CHECK(same.masked_positions.empty());

  MaskResult all = mask_corrupt(x, MaskingConfig{1.0, 0.0}, rng, 10);
  for (int c : all.corrupted) CHECK(c == Vocabulary::kMask);
  CHECK(all.masked_positions.size() == x.size());

  CHECK_THROWS_AS(mask_corrupt(x, MaskingConfig{0.7, 0.5}, rng, 10), std::invalid_argument);
  CHECK_THROWS_AS(mask_corrupt(x, MaskingConfig{-0.1, 0.0}, rng, 10), std::invalid_argument);
  TokenSeq with_pad{3, Vocabulary::kPad, 5};
  CHECK_THROWS_AS(mask_corrupt(with_pad, MaskingConfig{0.5, 0.1}, rng, 10), std::invalid_argument);
  CHECK_THROWS_AS(mask_corrupt(x, MaskingConfig{0.5, 0.1}, rng, Vocabulary::kSpecialCount),
                  std::invalid_argument);
}

TEST_CASE("language model construction, shapes and parameter subsets") {
  MlmConfig cfg;
  cfg.vocab = 10;
  cfg.num_layers = 4;
  cfg.dim = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 16;
  cfg.max_len = 6;
  MlmModel m(cfg, 3);

  // 4 embedding-side tensors, 16 per encoder layer, 2 for the output head.
  CHECK(m.params().size() == 4 + 4 * 16 + 2);
  CHECK(m.subset_params(0).size() == m.params().size());
  CHECK(m.subset_params(1).size() == 2);
  CHECK(m.subset_params(2).size() == 2 + 16);
  CHECK(m.subset_params(3).size() == 2 + 32);
  CHECK_THROWS_AS(m.subset_params(-1), std::invalid_argument);
  CHECK_THROWS_AS(m.subset_params(4), std::invalid_argument);

  // Each subset nests inside the next, and all live in the full list.
  auto contains = [](const ParamList& big, const ParamList& small) {
    for (Param* p : small)
      if (std::find(big.begin(), big.end(), p) == big.end()) return false;
    return true;
  };
  MlmModel m2 = m;
  CHECK(contains(m.subset_params(2), m.subset_params(1)));
  CHECK(contains(m.subset_params(3), m.subset_params(2)));
  CHECK(contains(m.params(), m.subset_params(3)));
  (void)m2;

  TokenSeq x{3, 4, 5, 6, 7};
  Mat L = m.logits(x);
  CHECK(L.rows() == 5);
  CHECK(L.cols() == 10);
  CHECK(L.allFinite());

  TokenSeq too_long(7, 3);
  CHECK_THROWS_AS(m.logits(too_long), std::invalid_argument);
  TokenSeq at_limit(6, 3);
  CHECK(m.logits(at_limit).rows() == 6);
}

TEST_CASE("model construction is deterministic in the seed") {
  MlmConfig cfg;
  cfg.vocab = 12;
  cfg.num_layers = 2;
  cfg.dim = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 16;
  cfg.max_len = 8;
  MlmModel a(cfg, 42), b(cfg, 42), c(cfg, 43);
  CHECK(a.tok_emb.value == b.tok_emb.value);
  CHECK(a.tok_emb.value != c.tok_emb.value);
  TokenSeq x{3, 4, 5};
  CHECK(a.logits(x) == b.logits(x));

  ClassifierConfig ccfg = small_classifier(ClassifierKind::kGru, 12);
  Classifier g1(ccfg, 7), g2(ccfg, 7), g3(ccfg, 8);
  CHECK(g1.probs(x) == g2.probs(x));
  CHECK(g1.probs(x) != g3.probs(x));
}

TEST_CASE("untrained language model scores content roughly uniformly") {
  MlmConfig cfg;
  cfg.vocab = 9;  // 6 content tokens
  cfg.num_layers = 2;
  cfg.dim = 16;
  cfg.num_heads = 2;
  cfg.ffn_dim = 32;
  cfg.max_len = 8;
  MlmModel m(cfg, 11);

  Rng rng(13);
  double ce = 0.0;
  int count = 0;
  for (int rep = 0; rep < 10; ++rep) {
    TokenSeq x = random_content_seq(rng, 6, cfg.vocab);
    Mat L = m.logits(x);
    for (Eigen::Index r = 0; r < L.rows(); ++r) {
      Eigen::VectorXd content = L.row(r).tail(cfg.vocab - Vocabulary::kSpecialCount).transpose();
      Eigen::VectorXd p = softmax_vec(content);
      ce -= std::log(p(x[static_cast<std::size_t>(r)] - Vocabulary::kSpecialCount));
      ++count;
    }
  }
  ce /= count;
  // ln(6) = 1.7918 for a perfectly uniform head; random init sits nearby.
  CHECK(ce >= 1.2);
  CHECK(ce <= 2.6);
}

TEST_CASE("language model memorizes a single repeated pattern") {
  const TokenSeq pattern{3, 4, 5, 6, 7, 8};
  Dataset corpus;
  corpus.num_classes = 1;
  corpus.split_tag = "train";
  for (int i = 0; i < 8; ++i) corpus.examples.push_back({pattern, 0});

  MlmConfig mcfg;
  mcfg.vocab = 9;
  mcfg.num_layers = 2;
  mcfg.dim = 16;
  mcfg.num_heads = 2;
  mcfg.ffn_dim = 32;
  mcfg.max_len = 6;
  MaskingConfig mask{0.3, 0.1};
  TrainConfig tcfg;
  tcfg.lr = 3e-3;
  tcfg.batch_size = 8;
  tcfg.max_epochs = 120;
  tcfg.seed = 5;

  TrainedMlm tm = train_mlm(corpus, mcfg, mask, tcfg);
  REQUIRE(!tm.history.empty());
  CHECK(tm.history.back().loss < tm.history.front().loss);

  // Every token is recoverable from its position alone, so masked accuracy
  // should be near-perfect once the pattern is memorized.
  const double acc = mlm_masked_accuracy(tm.model, corpus, mask, 99);
  CHECK(acc >= 0.9);
  CHECK(tm.final_masked_accuracy >= 0.9);
}

TEST_CASE("classifier probabilities form a simplex and match logits") {
  Rng rng(17);
  for (ClassifierKind kind : {ClassifierKind::kGru, ClassifierKind::kCnn}) {
    Classifier c(small_classifier(kind, 20), 23);
    for (int rep = 0; rep < 5; ++rep) {
      TokenSeq x = random_content_seq(rng, 4 + rng.uniform_int(8), 20);
      Eigen::VectorXd p = c.probs(x);
      REQUIRE(p.size() == 2);
      CHECK(p.minCoeff() >= 0.0);
      CHECK(std::abs(p.sum() - 1.0) <= 1e-5);
      Eigen::VectorXd q = softmax_vec(c.logits_of(x));
      CHECK((p - q).cwiseAbs().maxCoeff() <= 1e-9);
      int pred = c.predict(x);
      int arg = 0;
      for (int j = 1; j < p.size(); ++j)
        if (p(j) > p(arg)) arg = j;
      CHECK(pred == arg);
    }
  }
}

TEST_CASE("one-hot and embedding surfaces agree with id-based scoring") {
  Rng rng(19);
  const int vocab = 15;
  for (ClassifierKind kind : {ClassifierKind::kGru, ClassifierKind::kCnn}) {
    Classifier c(small_classifier(kind, vocab), 29);
    TokenSeq x = random_content_seq(rng, 7, vocab);
    const Eigen::VectorXd ref = c.logits_of(x);

    ad::Tape t1;
    ad::Var soft = t1.constant(onehot(x, vocab));
    Eigen::VectorXd via_soft = c.logits_from_soft(t1, soft).val().row(0).transpose();
    CHECK((via_soft - ref).cwiseAbs().maxCoeff() <= 1e-9);

    Mat emb_rows(static_cast<Eigen::Index>(x.size()), c.cfg.embed_dim);
    for (std::size_t i = 0; i < x.size(); ++i)
      emb_rows.row(static_cast<Eigen::Index>(i)) = c.emb.value.row(x[i]);
    ad::Tape t2;
    Eigen::VectorXd via_emb =
        c.logits_from_emb(t2, t2.constant(emb_rows)).val().row(0).transpose();
    CHECK((via_emb - ref).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("batched classifier logits match per-sequence evaluation") {
  Rng rng(31);
  const int vocab = 15, len = 6;
  for (ClassifierKind kind : {ClassifierKind::kGru, ClassifierKind::kCnn}) {
    Classifier c(small_classifier(kind, vocab), 37);
    TokenSeq a = random_content_seq(rng, len, vocab);
    TokenSeq b = random_content_seq(rng, len, vocab);
    std::vector<int> flat;
    flat.insert(flat.end(), a.begin(), a.end());
    flat.insert(flat.end(), b.begin(), b.end());
    ad::Tape tape;
    Mat batched = c.logits_var(tape, flat, 2, len).val();
    REQUIRE(batched.rows() == 2);
    CHECK((batched.row(0).transpose() - c.logits_of(a)).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((batched.row(1).transpose() - c.logits_of(b)).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("edit-distance surrogate is exactly symmetric") {
  DeepLevConfig cfg;
  cfg.vocab = 14;
  cfg.embed_dim = 8;
  cfg.hidden = 8;
  cfg.head_hidden = 8;
  DeepLevModel dl(cfg, 41);
  Rng rng(43);
  for (int rep = 0; rep < 10; ++rep) {
    TokenSeq a = random_content_seq(rng, 3 + rng.uniform_int(6), cfg.vocab);
    TokenSeq b = random_content_seq(rng, 3 + rng.uniform_int(6), cfg.vocab);
    const double ab = dl.score(a, b);
    const double ba = dl.score(b, a);
    CHECK(std::isfinite(ab));
    CHECK(ab == ba);  // the head symmetrizes, so this holds bitwise
  }
  TokenSeq x = random_content_seq(rng, 5, cfg.vocab);
  CHECK(std::isfinite(dl.score(x, x)));
}

TEST_CASE("surrogate one-hot scoring matches id scoring") {
  DeepLevConfig cfg;
  cfg.vocab = 14;
  cfg.embed_dim = 8;
  cfg.hidden = 8;
  cfg.head_hidden = 8;
  DeepLevModel dl(cfg, 47);
  Rng rng(53);
  TokenSeq a = random_content_seq(rng, 6, cfg.vocab);
  TokenSeq b = random_content_seq(rng, 4, cfg.vocab);
  const double ref = dl.score(a, b);

  ad::Tape tape;
  ad::Var soft = tape.constant(onehot(a, cfg.vocab));
  const double via_soft = dl.score_var(tape, soft, nullptr, b).val()(0, 0);
  CHECK(std::abs(via_soft - ref) <= 1e-9);

  ad::Tape tape2;
  const double via_ids = dl.score_var(tape2, std::nullopt, &a, b).val()(0, 0);
  CHECK(std::abs(via_ids - ref) <= 1e-12);
}

TEST_CASE("surrogate training pairs carry exact distances") {
  SyntheticSpec spec;
  spec.vocab_size = 16;
  spec.min_len = 5;
  spec.max_len = 9;
  Dataset ds = spec.generate(60, 61, "train");
  const int vocab = spec.vocabulary().size();

  auto pairs = gen_deeplev_pairs(ds, 200, MaskingConfig{0.3, 0.1}, 0.25, 67, vocab);
  REQUIRE(pairs.size() == 200);
  int positive = 0;
  for (const auto& p : pairs) {
    REQUIRE(!p.a.empty());
    REQUIRE(!p.b.empty());
    for (int t : p.a) CHECK(!Vocabulary::is_special(t));
    // The corrupted side may carry the mask token, but never padding/unknown.
    for (int t : p.b) CHECK((t == Vocabulary::kMask || !Vocabulary::is_special(t)));
    CHECK(p.wer == exact_wer(p.a, p.b));
    if (p.wer > 0) ++positive;
  }
  CHECK(positive > 100);  // corruption and cross pairs both move tokens

  auto again = gen_deeplev_pairs(ds, 200, MaskingConfig{0.3, 0.1}, 0.25, 67, vocab);
  for (int i = 0; i < 10; ++i) {
    CHECK(pairs[static_cast<std::size_t>(i)].a == again[static_cast<std::size_t>(i)].a);
    CHECK(pairs[static_cast<std::size_t>(i)].b == again[static_cast<std::size_t>(i)].b);
  }
}

TEST_CASE("majority token and its frequency") {
  Dataset ds;
  ds.num_classes = 1;
  ds.examples.push_back({{3, 3, 3, 4, 4}, 0});
  ds.examples.push_back({{3, 3, 5, 5, 4}, 0});
  auto [tok, freq] = majority_token(ds);
  CHECK(tok == 3);
  CHECK(freq == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("classifiers learn a strongly marked synthetic task") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.vocab_size = 12;
  spec.min_len = 6;
  spec.max_len = 10;
  spec.signal_strength = 0.8;
  Dataset train = spec.generate(240, 71, "train");
  Dataset val = spec.generate(80, 73, "val");

  TrainConfig tcfg;
  tcfg.lr = 3e-3;
  tcfg.batch_size = 32;
  tcfg.max_epochs = 4;
  tcfg.seed = 79;

  for (ClassifierKind kind : {ClassifierKind::kGru, ClassifierKind::kCnn}) {
    ClassifierConfig ccfg = small_classifier(kind, spec.vocabulary().size());
    TrainedClassifier tc = train_classifier(train, val, ccfg, tcfg);
    CHECK(tc.best_val_accuracy >= 0.8);
    // The returned model carries the best-epoch weights.
    CHECK(classifier_accuracy(tc.model, val) == doctest::Approx(tc.best_val_accuracy).epsilon(1e-12));
    bool has_train = false, has_val = false;
    for (const auto& st : tc.history) {
      if (st.split == "train") has_train = true;
      if (st.split == "val") has_val = true;
    }
    CHECK(has_train);
    CHECK(has_val);
  }
}
