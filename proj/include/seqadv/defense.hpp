#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqadv/attacks.hpp"
#include "seqadv/train.hpp"

namespace seqadv {

struct DefenseReport {
  std::string attack_name;
  double nad_before = 0.0;
  double nad_after = 0.0;
  double clean_accuracy_before = 0.0;
  double clean_accuracy_after = 0.0;
  double detector_auc = 0.0;
  int n_adv_train = 0;
};

// Area under the ROC curve by the rank statistic; tied scores receive their
// average rank. Labels are 0/1 and both classes must be present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Retrains the target's architecture from scratch on the training split
// augmented with every record's (chosen sequence, original label) pair. The
// input classifier is only read for its configuration.
TrainedClassifier adversarial_retrain(const Classifier& target, const Dataset& ds_train,
                                      const Dataset& ds_val,
                                      const std::vector<AttackRecord>& adv_records,
                                      TrainConfig tcfg);

struct DiscriminatorDefense {
  TrainedClassifier detector;
  double auc = 0.0;
  int n_train = 0;
  int n_held_out = 0;
};

// Splits both sequence sets, trains the detector on the train portions and
// reports ROC AUC of its adversarial-class probability on the held-out
// portions (original = 0, adversarial = 1).
DiscriminatorDefense discriminator_defense(const std::vector<TokenSeq>& originals,
                                           const std::vector<TokenSeq>& adversarials,
                                           ClassifierConfig dcfg, TrainConfig tcfg,
                                           double held_out_fraction, std::uint64_t seed);

}  // namespace seqadv
