#include "seqadv/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace seqadv {

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: size mismatch");
  if (scores.empty()) throw std::invalid_argument("roc_auc: empty input");
  long n_pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw std::invalid_argument("roc_auc: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw std::invalid_argument("roc_auc: non-finite score");
    n_pos += labels[i];
  }
  const long n_neg = static_cast<long>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_auc: need both classes");

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (labels[idx[k]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

TrainedClassifier adversarial_retrain(const Classifier& target, const Dataset& ds_train,
                                      const Dataset& ds_val,
                                      const std::vector<AttackRecord>& adv_records,
                                      TrainConfig tcfg) {
  if (adv_records.empty())
    throw std::invalid_argument("adversarial_retrain: no adversarial records");
  Dataset augmented = ds_train;
  augmented.split_tag = ds_train.split_tag + "+adv";
  for (const AttackRecord& rec : adv_records) {
    if (rec.label < 0 || rec.label >= ds_train.num_classes)
      throw std::invalid_argument("adversarial_retrain: record label outside the task");
    if (rec.chosen.empty())
      throw std::invalid_argument("adversarial_retrain: record with empty chosen sequence");
    augmented.examples.push_back({rec.chosen, rec.label});
  }
  return train_classifier(augmented, ds_val, target.cfg, tcfg);
}

DiscriminatorDefense discriminator_defense(const std::vector<TokenSeq>& originals,
                                           const std::vector<TokenSeq>& adversarials,
                                           ClassifierConfig dcfg, TrainConfig tcfg,
                                           double held_out_fraction, std::uint64_t seed) {
  if (originals.empty() || adversarials.empty())
    throw std::invalid_argument("discriminator_defense: both sequence sets must be nonempty");
  if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0))
    throw std::invalid_argument("discriminator_defense: held_out_fraction must be in (0, 1)");

  Rng rng(seed);
  auto carve = [&](const std::vector<TokenSeq>& all, std::uint64_t salt) {
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    Rng child = rng.child(salt);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(child.uniform_int(static_cast<int>(i)))]);
    const std::size_t held = static_cast<std::size_t>(
        std::llround(held_out_fraction * static_cast<double>(all.size())));
    if (held == 0 || held >= all.size())
      throw std::invalid_argument("discriminator_defense: split leaves an empty portion");
    std::pair<std::vector<TokenSeq>, std::vector<TokenSeq>> out;  // (train, held)
    for (std::size_t i = 0; i < order.size(); ++i)
      (i < held ? out.second : out.first).push_back(all[order[i]]);
    return out;
  };
  auto [train_orig, held_orig] = carve(originals, 1);
  auto [train_adv, held_adv] = carve(adversarials, 2);

  DiscriminatorDefense out;
  tcfg.seed = rng.child(3).seed();
  out.detector = train_discriminator(train_orig, train_adv, dcfg, tcfg);
  out.n_train = static_cast<int>(train_orig.size() + train_adv.size());
  out.n_held_out = static_cast<int>(held_orig.size() + held_adv.size());

  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(static_cast<std::size_t>(out.n_held_out));
  for (const TokenSeq& s : held_orig) {
    scores.push_back(out.detector.model.probs(s)(1));
    labels.push_back(0);
  }
  for (const TokenSeq& s : held_adv) {
    scores.push_back(out.detector.model.probs(s)(1));
    labels.push_back(1);
  }
  out.auc = roc_auc(scores, labels);
  return out;
}

}  // namespace seqadv
