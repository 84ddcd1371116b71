#pragma once

#include <optional>
#include <string>
#include <vector>

#include "seqadv/corpus.hpp"
#include "seqadv/nn.hpp"

namespace seqadv {

// ---- masked language model: small transformer encoder ----

struct MlmConfig {
  int vocab = 0;  // total vocabulary size including service tokens
  int num_layers = 4;
  int dim = 64;
  int num_heads = 4;
  int ffn_dim = 256;
  int max_len = 32;
};

class MlmModel {
 public:
  MlmModel() = default;
  MlmModel(MlmConfig cfg, std::uint64_t seed);

  MlmConfig cfg;

  struct Layer {
    Param wq, bq, wk, bk, wv, bv, wo, bo;
    Param ln1_g, ln1_b;
    Param w1, b1, w2, b2;
    Param ln2_g, ln2_b;
    ParamList params();
  };

  Param tok_emb, pos_emb, ln_emb_g, ln_emb_b;
  std::vector<Layer> layers;
  Param out_w, out_b;

  ParamList params();

  // Parameter subset for attack-time updates:
  //   0 = all parameters
  //   1 = output projection only
  //   2 = output projection + last encoder layer
  //   3 = output projection + last two encoder layers
  ParamList subset_params(int subset);

  // Batched forward over `batch` sequences of uniform length; flat_ids has
  // batch*seq_len entries. Returns per-token logits (batch*seq_len x vocab).
  ad::Var forward(ad::Tape& tape, const std::vector<int>& flat_ids, int batch, int seq_len);

  // Single-sequence logits without gradient bookkeeping.
  Mat logits(const TokenSeq& x);
};

// ---- classifiers ----

enum class ClassifierKind { kGru, kCnn };

std::string kind_name(ClassifierKind k);
ClassifierKind parse_kind(const std::string& name);

struct ClassifierConfig {
  ClassifierKind kind = ClassifierKind::kGru;
  int vocab = 0;
  int num_classes = 2;
  int embed_dim = 100;
  double dropout = 0.1;
  // recurrent classifier
  int hidden = 128;
  // convolutional classifier
  std::vector<int> filter_sizes{3, 5};
  int num_filters = 8;
};

class Classifier {
 public:
  Classifier() = default;
  Classifier(ClassifierConfig cfg, std::uint64_t seed);

  ClassifierConfig cfg;

  Param emb;
  // recurrent branch
  GruParams gru_fwd, gru_bwd;
  Param fc_w, fc_b;
  // convolutional branch
  std::vector<Param> conv_w, conv_b;

  ParamList params();

  // Batched logits over uniform-length sequences. `dropout_rng` non-null
  // enables training-mode dropout.
  ad::Var logits_var(ad::Tape& tape, const std::vector<int>& flat_ids, int batch, int seq_len,
                     Rng* dropout_rng = nullptr);

  // Single sequence represented as per-token rows over the vocabulary
  // (one-hot or relaxed); rows x vocab.
  ad::Var logits_from_soft(ad::Tape& tape, const ad::Var& soft);

  // Single sequence from explicit embedding rows (t x embed_dim); used by
  // attacks that perturb the embedding space directly.
  ad::Var logits_from_emb(ad::Tape& tape, const ad::Var& emb_rows);

  Eigen::VectorXd probs(const TokenSeq& x);
  Eigen::VectorXd logits_of(const TokenSeq& x);
  int predict(const TokenSeq& x);
};

// ---- learned edit-distance surrogate ----

struct DeepLevConfig {
  int vocab = 0;
  int embed_dim = 64;
  int hidden = 64;       // encoder state size (also the sequence representation)
  int head_hidden = 64;
};

class DeepLevModel {
 public:
  DeepLevModel() = default;
  DeepLevModel(DeepLevConfig cfg, std::uint64_t seed);

  DeepLevConfig cfg;

  Param emb;
  GruParams gru;
  Param head_w1, head_b1, head_w2, head_b2;

  ParamList params();

  // Encoder over one batch of uniform-length sequences; masked mean pooling
  // over real lengths. Returns (batch x hidden).
  ad::Var encode(ad::Tape& tape, const std::vector<int>& flat_ids, int batch, int seq_len,
                 const std::vector<double>& mask);

  // Encoder over a single sequence given as rows over the vocabulary.
  ad::Var encode_soft(ad::Tape& tape, const ad::Var& soft);

  // Symmetrized score from two encoded representations (batch x hidden each).
  ad::Var score_from_repr(ad::Tape& tape, const ad::Var& za, const ad::Var& zb);

  // Single-pair score; either side may be a relaxed sample. `soft_a` takes
  // precedence over `a` when defined.
  ad::Var score_var(ad::Tape& tape, const std::optional<ad::Var>& soft_a, const TokenSeq* a,
                    const TokenSeq& b);

  double score(const TokenSeq& a, const TokenSeq& b);
};

}  // namespace seqadv
