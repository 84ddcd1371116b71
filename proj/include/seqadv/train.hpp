#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqadv/corpus.hpp"
#include "seqadv/models.hpp"

namespace seqadv {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 64;
  int max_epochs = 50;
  int patience = 3;  // epochs without validation improvement before stopping
  std::uint64_t seed = 1;
};

struct EpochStat {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

using History = std::vector<EpochStat>;

// ---- masking ----

struct MaskingConfig {
  double p_mask = 0.5;
  double p_replace = 0.1;
};

struct MaskResult {
  TokenSeq corrupted;
  std::vector<int> masked_positions;  // positions that were masked or changed
};

// One categorical draw per token: mask with p_mask, replace with a random
// content token with p_replace, keep otherwise. Input must be free of
// service tokens.
MaskResult mask_corrupt(const TokenSeq& x, const MaskingConfig& cfg, Rng& rng, int vocab_size);

// ---- classifier training ----

struct TrainedClassifier {
  Classifier model;
  History history;
  double best_val_accuracy = 0.0;
  int best_epoch = 0;
};

TrainedClassifier train_classifier(const Dataset& train, const Dataset& val, ClassifierConfig mcfg,
                                   TrainConfig tcfg);

double classifier_accuracy(Classifier& model, const Dataset& ds);

// ---- masked language model training ----

struct TrainedMlm {
  MlmModel model;
  History history;
  double final_masked_accuracy = 0.0;
};

// Fixed epoch budget, no early stopping. Loss is cross-entropy at corrupted
// positions, normalized over content tokens only.
TrainedMlm train_mlm(const Dataset& corpus, MlmConfig mcfg, MaskingConfig mask_cfg, TrainConfig tcfg);

double mlm_masked_accuracy(MlmModel& model, const Dataset& corpus, MaskingConfig mask_cfg,
                           std::uint64_t seed);

// Most frequent content token in the corpus and its frequency among all
// tokens; the frequency is the accuracy of always predicting that token.
std::pair<int, double> majority_token(const Dataset& corpus);

// ---- edit-distance surrogate training ----

struct DeepLevPair {
  TokenSeq a, b;
  int wer = 0;
};

// (1 - dissimilar_fraction) of pairs are (x, corrupt(x)); the rest pair two
// independent examples. Stored wer is the exact edit distance.
std::vector<DeepLevPair> gen_deeplev_pairs(const Dataset& ds, int n_pairs,
                                           const MaskingConfig& mask_cfg,
                                           double dissimilar_fraction, std::uint64_t seed,
                                           int vocab_size);

struct TrainedDeepLev {
  DeepLevModel model;
  History history;
  double held_out_mae = 0.0;
};

TrainedDeepLev train_deeplev(const std::vector<DeepLevPair>& pairs, DeepLevConfig mcfg,
                             TrainConfig tcfg);

// ---- discriminator training ----

// Binary recurrent classifier over original (label 0) and adversarial
// (label 1) sequences; trained for exactly five epochs on balanced batches.
TrainedClassifier train_discriminator(const std::vector<TokenSeq>& originals,
                                      const std::vector<TokenSeq>& adversarials,
                                      ClassifierConfig mcfg, TrainConfig tcfg);

}  // namespace seqadv
