#include "seqadv/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace seqadv {

namespace {

void shuffle_ints(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
}

// Batches of example indices with uniform sequence length inside each batch.
std::vector<std::vector<int>> length_batches(const std::vector<const TokenSeq*>& seqs,
                                             int batch_size, Rng& rng) {
  std::map<int, std::vector<int>> by_len;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    by_len[static_cast<int>(seqs[i]->size())].push_back(static_cast<int>(i));
  std::vector<std::vector<int>> batches;
  for (auto& [len, idxs] : by_len) {
    shuffle_ints(idxs, rng);
    for (std::size_t off = 0; off < idxs.size(); off += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(idxs.size(), off + static_cast<std::size_t>(batch_size));
      batches.emplace_back(idxs.begin() + static_cast<std::ptrdiff_t>(off),
                           idxs.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  std::vector<int> order(batches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  shuffle_ints(order, rng);
  std::vector<std::vector<int>> out;
  out.reserve(batches.size());
  for (int i : order) out.push_back(std::move(batches[static_cast<std::size_t>(i)]));
  return out;
}

std::vector<int> flatten(const std::vector<const TokenSeq*>& seqs, const std::vector<int>& batch) {
  std::vector<int> flat;
  flat.reserve(batch.size() * seqs[static_cast<std::size_t>(batch[0])]->size());
  for (int i : batch)
    flat.insert(flat.end(), seqs[static_cast<std::size_t>(i)]->begin(),
                seqs[static_cast<std::size_t>(i)]->end());
  return flat;
}

// Mean cross-entropy over rows of `logits`; also counts argmax hits.
ad::Var ce_loss(const ad::Var& logits, const std::vector<int>& labels, int* correct) {
  ad::Var lp = ad::log_softmax_rows(logits);
  if (correct != nullptr) {
    const Mat& v = logits.val();
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      int best = 0;
      for (int c = 1; c < v.cols(); ++c)
        if (v(r, c) > v(r, best)) best = c;
      if (best == labels[static_cast<std::size_t>(r)]) ++*correct;
    }
  }
  return ad::scale(ad::mean_all(ad::gather_cols_per_row(lp, labels)), -1.0);
}

std::vector<const TokenSeq*> seq_ptrs(const Dataset& ds) {
  std::vector<const TokenSeq*> out;
  out.reserve(ds.size());
  for (const auto& e : ds.examples) out.push_back(&e.tokens);
  return out;
}

struct SavedValues {
  std::vector<Mat> values;
  void capture(const ParamList& ps) {
    values.clear();
    for (const Param* p : ps) values.push_back(p->value);
  }
  void restore(const ParamList& ps) const {
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = values[i];
  }
};

}  // namespace

MaskResult mask_corrupt(const TokenSeq& x, const MaskingConfig& cfg, Rng& rng, int vocab_size) {
  if (cfg.p_mask < 0.0 || cfg.p_replace < 0.0 || cfg.p_mask + cfg.p_replace > 1.0)
    throw std::invalid_argument("mask_corrupt: probabilities must be nonnegative and sum to <= 1");
  const int content = vocab_size - Vocabulary::kSpecialCount;
  if (content < 1) throw std::invalid_argument("mask_corrupt: no content tokens in vocabulary");
  MaskResult out;
  out.corrupted = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (Vocabulary::is_special(x[i]))
      throw std::invalid_argument("mask_corrupt: input contains service tokens");
    const double u = rng.uniform();
    if (u < cfg.p_mask) {
      out.corrupted[i] = Vocabulary::kMask;
      out.masked_positions.push_back(static_cast<int>(i));
    } else if (u < cfg.p_mask + cfg.p_replace) {
      const int repl = Vocabulary::kSpecialCount + rng.uniform_int(content);
      out.corrupted[i] = repl;
      if (repl != x[i]) out.masked_positions.push_back(static_cast<int>(i));
    }
  }
  return out;
}

TrainedClassifier train_classifier(const Dataset& train, const Dataset& val, ClassifierConfig mcfg,
                                   TrainConfig tcfg) {
  if (train.size() == 0) throw std::invalid_argument("train_classifier: empty training set");
  if (val.size() == 0) throw std::invalid_argument("train_classifier: empty validation set");
  std::set<int> distinct;
  for (const auto& e : train.examples) distinct.insert(e.label);
  if (distinct.size() < 2)
    throw std::invalid_argument("train_classifier: training set has fewer than 2 distinct labels");
  mcfg.num_classes = std::max(mcfg.num_classes, train.num_classes);

  TrainedClassifier out;
  out.model = Classifier(mcfg, tcfg.seed);
  Adam opt;
  opt.lr = tcfg.lr;
  ParamList params = out.model.params();
  Rng rng(tcfg.seed);
  auto seqs = seq_ptrs(train);
  std::vector<int> labels(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) labels[i] = train.examples[i].label;

  SavedValues best;
  best.capture(params);
  double best_val = -1.0;
  int best_epoch = 0, since_best = 0;

  for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    Rng erng = rng.child(static_cast<std::uint64_t>(epoch));
    auto batches = length_batches(seqs, tcfg.batch_size, erng);
    double loss_sum = 0.0;
    int correct = 0;
    for (const auto& batch : batches) {
      const int B = static_cast<int>(batch.size());
      const int T = static_cast<int>(seqs[static_cast<std::size_t>(batch[0])]->size());
      std::vector<int> flat = flatten(seqs, batch);
      std::vector<int> ys;
      ys.reserve(batch.size());
      for (int i : batch) ys.push_back(labels[static_cast<std::size_t>(i)]);
      ad::Tape tape;
      ad::Var logits = out.model.logits_var(tape, flat, B, T, &erng);
      ad::Var loss = ce_loss(logits, ys, &correct);
      const double lv = loss.val()(0, 0);
      if (!std::isfinite(lv)) throw std::runtime_error("train_classifier: loss diverged");
      loss_sum += lv * B;
      tape.backward(loss);
      opt.step(params);
      zero_grads(params);
    }
    const double train_loss = loss_sum / static_cast<double>(train.size());
    const double train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
    const double val_acc = classifier_accuracy(out.model, val);
    out.history.push_back({epoch, "train", train_loss, train_acc});
    out.history.push_back({epoch, "val", 0.0, val_acc});
    if (val_acc > best_val) {
      best_val = val_acc;
      best_epoch = epoch;
      best.capture(params);
      since_best = 0;
    } else if (++since_best >= tcfg.patience) {
      break;
    }
  }
  best.restore(params);
  out.best_val_accuracy = best_val;
  out.best_epoch = best_epoch;
  if (!all_finite(params)) throw std::runtime_error("train_classifier: non-finite parameters");
  return out;
}

double classifier_accuracy(Classifier& model, const Dataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("classifier_accuracy: empty dataset");
  auto seqs = seq_ptrs(ds);
  Rng order_rng(0);
  auto batches = length_batches(seqs, 256, order_rng);
  int correct = 0;
  for (const auto& batch : batches) {
    const int B = static_cast<int>(batch.size());
    const int T = static_cast<int>(seqs[static_cast<std::size_t>(batch[0])]->size());
    ad::Tape tape;
    ad::Var logits = model.logits_var(tape, flatten(seqs, batch), B, T, nullptr);
    const Mat& v = logits.val();
    for (int r = 0; r < B; ++r) {
      int best = 0;
      for (int c = 1; c < v.cols(); ++c)
        if (v(r, c) > v(r, best)) best = c;
      if (best == ds.examples[static_cast<std::size_t>(batch[static_cast<std::size_t>(r)])].label)
        ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

namespace {

struct MlmBatchLoss {
  double loss = 0.0;
  int masked = 0;
  int correct = 0;
};

// Cross-entropy at corrupted positions, normalized over content tokens only.
MlmBatchLoss mlm_batch_forward(MlmModel& model, const std::vector<int>& flat_corrupted,
                               const std::vector<int>& masked_rows,
                               const std::vector<int>& targets, int B, int T, bool update,
                               Adam* opt, ParamList* params) {
  MlmBatchLoss out;
  out.masked = static_cast<int>(masked_rows.size());
  if (masked_rows.empty()) return out;
  ad::Tape tape;
  ad::Var logits = model.forward(tape, flat_corrupted, B, T);
  ad::Var rows = ad::gather_rows(logits, masked_rows);
  Mat penalty = Mat::Zero(rows.rows(), rows.cols());
  penalty.leftCols(Vocabulary::kSpecialCount).setConstant(-1e30);
  ad::Var lp = ad::log_softmax_rows(ad::add_const(rows, penalty));
  ad::Var loss = ad::scale(ad::mean_all(ad::gather_cols_per_row(lp, targets)), -1.0);
  out.loss = loss.val()(0, 0);
  const Mat& rv = rows.val();
  for (Eigen::Index r = 0; r < rv.rows(); ++r) {
    int best = Vocabulary::kSpecialCount;
    for (int c = best + 1; c < rv.cols(); ++c)
      if (rv(r, c) > rv(r, best)) best = c;
    if (best == targets[static_cast<std::size_t>(r)]) ++out.correct;
  }
  if (update) {
    if (!std::isfinite(out.loss)) throw std::runtime_error("train_mlm: loss diverged");
    tape.backward(loss);
    opt->step(*params);
    zero_grads(*params);
  }
  return out;
}

}  // namespace

TrainedMlm train_mlm(const Dataset& corpus, MlmConfig mcfg, MaskingConfig mask_cfg,
                     TrainConfig tcfg) {
  if (corpus.size() == 0) throw std::invalid_argument("train_mlm: empty corpus");
  TrainedMlm out;
  out.model = MlmModel(mcfg, tcfg.seed);
  Adam opt;
  opt.lr = tcfg.lr;
  ParamList params = out.model.params();
  Rng rng(tcfg.seed);
  auto seqs = seq_ptrs(corpus);

  for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    Rng erng = rng.child(static_cast<std::uint64_t>(epoch));
    auto batches = length_batches(seqs, tcfg.batch_size, erng);
    double loss_sum = 0.0;
    long long masked_total = 0, correct_total = 0;
    for (const auto& batch : batches) {
      const int B = static_cast<int>(batch.size());
      const int T = static_cast<int>(seqs[static_cast<std::size_t>(batch[0])]->size());
      std::vector<int> flat;
      flat.reserve(static_cast<std::size_t>(B) * T);
      std::vector<int> masked_rows, targets;
      for (int bi = 0; bi < B; ++bi) {
        const TokenSeq& x = *seqs[static_cast<std::size_t>(batch[static_cast<std::size_t>(bi)])];
        MaskResult mr = mask_corrupt(x, mask_cfg, erng, mcfg.vocab);
        flat.insert(flat.end(), mr.corrupted.begin(), mr.corrupted.end());
        for (int pos : mr.masked_positions) {
          masked_rows.push_back(bi * T + pos);
          targets.push_back(x[static_cast<std::size_t>(pos)]);
        }
      }
      MlmBatchLoss bl = mlm_batch_forward(out.model, flat, masked_rows, targets, B, T, true, &opt,
                                          &params);
      loss_sum += bl.loss * bl.masked;
      masked_total += bl.masked;
      correct_total += bl.correct;
    }
    const double epoch_loss = masked_total > 0 ? loss_sum / static_cast<double>(masked_total) : 0.0;
    const double epoch_acc =
        masked_total > 0 ? static_cast<double>(correct_total) / static_cast<double>(masked_total)
                         : 0.0;
    out.history.push_back({epoch, "train", epoch_loss, epoch_acc});
  }
  if (!all_finite(params)) throw std::runtime_error("train_mlm: non-finite parameters");
  out.final_masked_accuracy = mlm_masked_accuracy(out.model, corpus, mask_cfg, tcfg.seed ^ 0xe7a1);
  return out;
}

double mlm_masked_accuracy(MlmModel& model, const Dataset& corpus, MaskingConfig mask_cfg,
                           std::uint64_t seed) {
  if (corpus.size() == 0) throw std::invalid_argument("mlm_masked_accuracy: empty corpus");
  Rng rng(seed);
  auto seqs = seq_ptrs(corpus);
  Rng order_rng(0);
  auto batches = length_batches(seqs, 128, order_rng);
  long long masked_total = 0, correct_total = 0;
  for (const auto& batch : batches) {
    const int B = static_cast<int>(batch.size());
    const int T = static_cast<int>(seqs[static_cast<std::size_t>(batch[0])]->size());
    std::vector<int> flat;
    std::vector<int> masked_rows, targets;
    for (int bi = 0; bi < B; ++bi) {
      const TokenSeq& x = *seqs[static_cast<std::size_t>(batch[static_cast<std::size_t>(bi)])];
      MaskResult mr = mask_corrupt(x, mask_cfg, rng, model.cfg.vocab);
      flat.insert(flat.end(), mr.corrupted.begin(), mr.corrupted.end());
      for (int pos : mr.masked_positions) {
        masked_rows.push_back(bi * T + pos);
        targets.push_back(x[static_cast<std::size_t>(pos)]);
      }
    }
    MlmBatchLoss bl =
        mlm_batch_forward(model, flat, masked_rows, targets, B, T, false, nullptr, nullptr);
    masked_total += bl.masked;
    correct_total += bl.correct;
  }
  return masked_total > 0 ? static_cast<double>(correct_total) / static_cast<double>(masked_total)
                          : 0.0;
}

std::pair<int, double> majority_token(const Dataset& corpus) {
  std::map<int, long long> freq;
  long long total = 0;
  for (const auto& e : corpus.examples)
    for (int id : e.tokens) {
      ++freq[id];
      ++total;
    }
  int best = -1;
  long long best_n = -1;
  for (const auto& [id, n] : freq) {
    if (Vocabulary::is_special(id)) continue;
    if (n > best_n) {
      best_n = n;
      best = id;
    }
  }
  if (best < 0) throw std::invalid_argument("majority_token: corpus has no content tokens");
  return {best, static_cast<double>(best_n) / static_cast<double>(total)};
}

std::vector<DeepLevPair> gen_deeplev_pairs(const Dataset& ds, int n_pairs,
                                           const MaskingConfig& mask_cfg,
                                           double dissimilar_fraction, std::uint64_t seed,
                                           int vocab_size) {
  if (ds.size() == 0) throw std::invalid_argument("gen_deeplev_pairs: empty dataset");
  if (n_pairs < 1) throw std::invalid_argument("gen_deeplev_pairs: n_pairs must be >= 1");
  if (dissimilar_fraction < 0.0 || dissimilar_fraction > 1.0)
    throw std::invalid_argument("gen_deeplev_pairs: dissimilar_fraction must be in [0, 1]");
  Rng rng(seed);
  const int n_dis = static_cast<int>(std::llround(dissimilar_fraction * n_pairs));
  std::vector<DeepLevPair> out;
  out.reserve(static_cast<std::size_t>(n_pairs));
  const int N = static_cast<int>(ds.size());
  for (int i = 0; i < n_pairs; ++i) {
    DeepLevPair p;
    if (i < n_pairs - n_dis) {
      const auto& x = ds.examples[static_cast<std::size_t>(rng.uniform_int(N))].tokens;
      p.a = x;
      p.b = mask_corrupt(x, mask_cfg, rng, vocab_size).corrupted;
    } else {
      p.a = ds.examples[static_cast<std::size_t>(rng.uniform_int(N))].tokens;
      p.b = ds.examples[static_cast<std::size_t>(rng.uniform_int(N))].tokens;
    }
    p.wer = exact_wer(p.a, p.b);
    out.push_back(std::move(p));
  }
  return out;
}

TrainedDeepLev train_deeplev(const std::vector<DeepLevPair>& pairs, DeepLevConfig mcfg,
                             TrainConfig tcfg) {
  if (pairs.size() < 10) throw std::invalid_argument("train_deeplev: too few pairs");
  TrainedDeepLev out;
  out.model = DeepLevModel(mcfg, tcfg.seed);
  Adam opt;
  opt.lr = tcfg.lr;
  ParamList params = out.model.params();
  Rng rng(tcfg.seed);

  std::vector<int> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  shuffle_ints(order, rng);
  const std::size_t held = std::max<std::size_t>(1, pairs.size() / 10);
  std::vector<int> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(held));
  std::vector<int> held_idx(order.end() - static_cast<std::ptrdiff_t>(held), order.end());

  auto pair_len = [&](int i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    return static_cast<int>(std::max(p.a.size(), p.b.size()));
  };

  auto run_batch = [&](const std::vector<int>& batch, bool update) {
    const int B = static_cast<int>(batch.size());
    int T = 1;
    for (int i : batch) T = std::max(T, pair_len(i));
    std::vector<int> flat_a, flat_b;
    std::vector<double> mask_a, mask_b;
    flat_a.reserve(static_cast<std::size_t>(B) * T);
    flat_b.reserve(static_cast<std::size_t>(B) * T);
    Mat target(B, 1);
    for (int bi = 0; bi < B; ++bi) {
      const auto& p = pairs[static_cast<std::size_t>(batch[static_cast<std::size_t>(bi)])];
      target(bi, 0) = p.wer;
      for (int t = 0; t < T; ++t) {
        const bool in_a = t < static_cast<int>(p.a.size());
        const bool in_b = t < static_cast<int>(p.b.size());
        flat_a.push_back(in_a ? p.a[static_cast<std::size_t>(t)] : Vocabulary::kPad);
        flat_b.push_back(in_b ? p.b[static_cast<std::size_t>(t)] : Vocabulary::kPad);
        mask_a.push_back(in_a ? 1.0 : 0.0);
        mask_b.push_back(in_b ? 1.0 : 0.0);
      }
    }
    ad::Tape tape;
    ad::Var za = out.model.encode(tape, flat_a, B, T, mask_a);
    ad::Var zb = out.model.encode(tape, flat_b, B, T, mask_b);
    ad::Var pred = out.model.score_from_repr(tape, za, zb);
    ad::Var err = ad::sub(pred, tape.constant(target));
    ad::Var loss = ad::mean_all(ad::square(err));
    const double mse = loss.val()(0, 0);
    const double mae = err.val().cwiseAbs().mean();
    if (update) {
      if (!std::isfinite(mse)) throw std::runtime_error("train_deeplev: loss diverged");
      tape.backward(loss);
      opt.step(params);
      zero_grads(params);
    }
    return std::make_pair(mse * B, mae * B);
  };

  auto evaluate = [&](const std::vector<int>& idxs) {
    // Batch by similar lengths to limit padding.
    std::vector<int> sorted = idxs;
    std::sort(sorted.begin(), sorted.end(), [&](int a, int b) { return pair_len(a) < pair_len(b); });
    double mse_sum = 0.0, mae_sum = 0.0;
    for (std::size_t off = 0; off < sorted.size(); off += 256) {
      const std::size_t end = std::min(sorted.size(), off + 256);
      std::vector<int> batch(sorted.begin() + static_cast<std::ptrdiff_t>(off),
                             sorted.begin() + static_cast<std::ptrdiff_t>(end));
      auto [mse, mae] = run_batch(batch, false);
      mse_sum += mse;
      mae_sum += mae;
    }
    return std::make_pair(mse_sum / static_cast<double>(idxs.size()),
                          mae_sum / static_cast<double>(idxs.size()));
  };

  SavedValues best;
  best.capture(params);
  double best_mae = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    Rng erng = rng.child(static_cast<std::uint64_t>(epoch));
    std::vector<int> idxs = train_idx;
    shuffle_ints(idxs, erng);
    std::stable_sort(idxs.begin(), idxs.end(),
                     [&](int a, int b) { return pair_len(a) < pair_len(b); });
    std::vector<std::vector<int>> batches;
    for (std::size_t off = 0; off < idxs.size(); off += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t end = std::min(idxs.size(), off + static_cast<std::size_t>(tcfg.batch_size));
      batches.emplace_back(idxs.begin() + static_cast<std::ptrdiff_t>(off),
                           idxs.begin() + static_cast<std::ptrdiff_t>(end));
    }
    std::vector<int> border(batches.size());
    for (std::size_t i = 0; i < border.size(); ++i) border[i] = static_cast<int>(i);
    shuffle_ints(border, erng);
    double mse_sum = 0.0, mae_sum = 0.0;
    for (int bi : border) {
      auto [mse, mae] = run_batch(batches[static_cast<std::size_t>(bi)], true);
      mse_sum += mse;
      mae_sum += mae;
    }
    const double train_mse = mse_sum / static_cast<double>(train_idx.size());
    const double train_mae = mae_sum / static_cast<double>(train_idx.size());
    auto [held_mse, held_mae] = evaluate(held_idx);
    out.history.push_back({epoch, "train", train_mse, train_mae});
    out.history.push_back({epoch, "held_out", held_mse, held_mae});
    if (held_mae < best_mae) {
      best_mae = held_mae;
      best.capture(params);
      since_best = 0;
    } else if (++since_best >= tcfg.patience) {
      break;
    }
  }
  best.restore(params);
  out.held_out_mae = best_mae;
  if (!all_finite(params)) throw std::runtime_error("train_deeplev: non-finite parameters");
  return out;
}

TrainedClassifier train_discriminator(const std::vector<TokenSeq>& originals,
                                      const std::vector<TokenSeq>& adversarials,
                                      ClassifierConfig mcfg, TrainConfig tcfg) {
  if (originals.empty() || adversarials.empty())
    throw std::invalid_argument("train_discriminator: both example sets must be nonempty");
  mcfg.num_classes = 2;
  TrainedClassifier out;
  out.model = Classifier(mcfg, tcfg.seed);
  Adam opt;
  opt.lr = tcfg.lr;
  ParamList params = out.model.params();
  Rng rng(tcfg.seed);

  // Length buckets holding both classes, so batches stay uniform-length and
  // balanced (the smaller side of a bucket is cycled).
  std::map<int, std::pair<std::vector<const TokenSeq*>, std::vector<const TokenSeq*>>> buckets;
  for (const auto& s : originals) buckets[static_cast<int>(s.size())].first.push_back(&s);
  for (const auto& s : adversarials) buckets[static_cast<int>(s.size())].second.push_back(&s);

  const int kEpochs = 5;  // fixed training budget for the detector
  const int half = std::max(1, tcfg.batch_size / 2);
  for (int epoch = 1; epoch <= kEpochs; ++epoch) {
    Rng erng = rng.child(static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    long long seen = 0;
    int correct = 0;
    for (auto& [len, bucket] : buckets) {
      auto& [orig, adv] = bucket;
      if (orig.empty() || adv.empty()) continue;
      std::vector<int> oidx(orig.size()), aidx(adv.size());
      for (std::size_t i = 0; i < oidx.size(); ++i) oidx[i] = static_cast<int>(i);
      for (std::size_t i = 0; i < aidx.size(); ++i) aidx[i] = static_cast<int>(i);
      shuffle_ints(oidx, erng);
      shuffle_ints(aidx, erng);
      const std::size_t rounds =
          (std::max(oidx.size(), aidx.size()) + static_cast<std::size_t>(half) - 1) /
          static_cast<std::size_t>(half);
      for (std::size_t round = 0; round < rounds; ++round) {
        std::vector<int> flat;
        std::vector<int> ys;
        for (int j = 0; j < half; ++j) {
          const auto& s = *orig[oidx[(round * static_cast<std::size_t>(half) + j) % oidx.size()]];
          flat.insert(flat.end(), s.begin(), s.end());
          ys.push_back(0);
        }
        for (int j = 0; j < half; ++j) {
          const auto& s = *adv[aidx[(round * static_cast<std::size_t>(half) + j) % aidx.size()]];
          flat.insert(flat.end(), s.begin(), s.end());
          ys.push_back(1);
        }
        const int B = static_cast<int>(ys.size());
        ad::Tape tape;
        ad::Var logits = out.model.logits_var(tape, flat, B, len, &erng);
        ad::Var loss = ce_loss(logits, ys, &correct);
        const double lv = loss.val()(0, 0);
        if (!std::isfinite(lv)) throw std::runtime_error("train_discriminator: loss diverged");
        loss_sum += lv * B;
        seen += B;
        tape.backward(loss);
        opt.step(params);
        zero_grads(params);
      }
    }
    out.history.push_back({epoch, "train", seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0,
                           seen > 0 ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0});
  }
  if (!all_finite(params)) throw std::runtime_error("train_discriminator: non-finite parameters");
  return out;
}

}  // namespace seqadv
