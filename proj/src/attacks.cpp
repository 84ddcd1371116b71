#include "seqadv/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace seqadv {

namespace {

CandidateEntry make_entry(int iteration, TokenSeq tokens, Classifier& substitute, int y) {
  CandidateEntry e;
  e.iteration = iteration;
  e.tokens = std::move(tokens);
  Eigen::VectorXd p = substitute.probs(e.tokens);
  e.substitute_score = p(y);
  e.substitute_pred = 0;
  for (int i = 1; i < p.size(); ++i)
    if (p(i) > p(e.substitute_pred)) e.substitute_pred = i;
  return e;
}

// Entry guard shared by every attack: inputs the substitute already gets
// wrong are returned unchanged, flagged.
bool entry_degenerate(AttackRecord& rec, const TokenSeq& x, int y, Classifier& substitute) {
  if (x.empty()) throw std::invalid_argument(rec.attack_name + ": empty input sequence");
  for (int id : x)
    if (Vocabulary::is_special(id))
      throw std::invalid_argument(rec.attack_name + ": input contains service tokens");
  if (y < 0 || y >= substitute.cfg.num_classes)
    throw std::invalid_argument(rec.attack_name + ": label out of range");
  if (substitute.predict(x) != y) {
    rec.chosen = x;
    rec.wer = 0;
    rec.degenerate = true;
    rec.skipped = true;
    rec.failure = "substitute already misclassifies the input";
    return true;
  }
  return false;
}

void finish_record(AttackRecord& rec, const TokenSeq& x, int y) {
  const int idx = select_candidate(rec.candidates, x, y);
  if (idx < 0) {
    rec.chosen = x;
    rec.wer = 0;
    rec.degenerate = true;
    if (rec.failure.empty()) rec.failure = "no candidates produced";
    return;
  }
  const CandidateEntry& c = rec.candidates[static_cast<std::size_t>(idx)];
  rec.chosen = c.tokens;
  rec.wer = exact_wer(x, rec.chosen);
  rec.substitute_flipped = c.substitute_pred != y;
}

// -log C_y(seq) gradient w.r.t. a row representation of the input. `soft`
// selects the one-hot (vocabulary) input surface; otherwise the embedding
// rows surface is used. Returns the gradient at the chosen surface.
Mat input_gradient(Classifier& substitute, const TokenSeq& seq, int y, bool one_hot_surface) {
  ad::Tape tape;
  ad::Var in;
  if (one_hot_surface) {
    Mat oh = Mat::Zero(static_cast<Eigen::Index>(seq.size()), substitute.cfg.vocab);
    for (std::size_t i = 0; i < seq.size(); ++i) oh(static_cast<Eigen::Index>(i), seq[i]) = 1.0;
    in = tape.input(oh);
  } else {
    Mat rows(static_cast<Eigen::Index>(seq.size()), substitute.cfg.embed_dim);
    for (std::size_t i = 0; i < seq.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = substitute.emb.value.row(seq[i]);
    in = tape.input(rows);
  }
  ad::Var logits = one_hot_surface ? substitute.logits_from_soft(tape, in)
                                   : substitute.logits_from_emb(tape, in);
  ad::Var lp = ad::log_softmax_rows(logits);
  ad::Var loss = ad::scale(ad::slice_cols(lp, y, 1), -1.0);
  tape.backward(loss);
  Mat g = in.grad();
  zero_grads(substitute.params());
  return g;
}

}  // namespace

double dilma_loss_value(double c_y, double dl_value, double beta) {
  const double c = std::min(c_y, 1.0 - 1e-6);
  return beta * (1.0 - dl_value) * (1.0 - dl_value) - std::log(1.0 - c);
}

ad::Var dilma_loss(ad::Tape& tape, const ad::Var& x_sample, const TokenSeq& x, int y, double beta,
                   Classifier& substitute, DeepLevModel* dl) {
  ad::Var probs = ad::softmax_rows(substitute.logits_from_soft(tape, x_sample));
  ad::Var c_y = ad::clamp_upper(ad::slice_cols(probs, y, 1), 1.0 - 1e-6);
  // -log(1 - c_y)
  ad::Var loss = ad::scale(ad::log_op(ad::add_scalar(ad::scale(c_y, -1.0), 1.0)), -1.0);
  if (beta != 0.0) {
    if (dl == nullptr) throw std::invalid_argument("dilma_loss: beta != 0 requires the surrogate");
    ad::Var score = dl->score_var(tape, x_sample, nullptr, x);
    ad::Var term = ad::scale(ad::square(ad::add_scalar(ad::scale(score, -1.0), 1.0)), beta);
    loss = ad::add(term, loss);
  }
  return loss;
}

AttackRecord dilma_attack(const TokenSeq& x, int y, const MlmModel& mlm0, Classifier& substitute,
                          DeepLevModel* dl, const DilmaConfig& cfg, Rng& rng) {
  AttackRecord rec;
  rec.attack_name = cfg.sample_candidates ? "dilma_sampling" : (cfg.beta == 0.0 ? "dilma_beta0" : "dilma");
  rec.original = x;
  rec.label = y;
  rec.seed = rng.seed();
  if (cfg.num_iters < 1) throw std::invalid_argument("dilma: num_iters must be >= 1");
  if (cfg.alpha <= 0.0) throw std::invalid_argument("dilma: alpha must be positive");
  if (cfg.beta < 0.0) throw std::invalid_argument("dilma: beta must be nonnegative");
  if (cfg.sample_candidates && cfg.num_samples < 1)
    throw std::invalid_argument("dilma: num_samples must be >= 1");
  if (cfg.beta != 0.0 && dl == nullptr)
    throw std::invalid_argument("dilma: beta != 0 requires the edit-distance surrogate");
  if (entry_degenerate(rec, x, y, substitute)) return rec;

  MlmModel mlm = mlm0;  // private copy; shared weights stay untouched
  ParamList subset = mlm.subset_params(cfg.param_subset);
  ParamList mlm_all = mlm.params();
  ParamList sub_params = substitute.params();
  ParamList dl_params = dl != nullptr ? dl->params() : ParamList{};
  SamplerConfig scfg{cfg.temperature, true};
  const int t = static_cast<int>(x.size());

  for (int iter = 1; iter <= cfg.num_iters; ++iter) {
    ad::Tape tape;
    ad::Var logits = mlm.forward(tape, x, 1, t);
    auto [hard, soft] = st_gumbel_sample_var(logits, scfg, rng);
    ad::Var loss = dilma_loss(tape, hard, x, y, cfg.beta, substitute, cfg.beta != 0.0 ? dl : nullptr);
    const double lv = loss.val()(0, 0);
    if (!std::isfinite(lv)) {
      rec.failure = "non-finite loss at iteration " + std::to_string(iter);
      break;
    }
    tape.backward(loss);
    sgd_step(subset, cfg.alpha);
    zero_grads(mlm_all);
    zero_grads(sub_params);
    zero_grads(dl_params);

    Mat updated = mlm.logits(x);
    if (cfg.sample_candidates) {
      for (int j = 0; j < cfg.num_samples; ++j)
        rec.candidates.push_back(make_entry(iter, sample_tempered(updated, scfg, rng), substitute, y));
    } else {
      rec.candidates.push_back(make_entry(iter, argmax_decode(updated, true), substitute, y));
    }
  }
  finish_record(rec, x, y);
  return rec;
}

AttackRecord sampling_fool(const TokenSeq& x, int y, const MlmModel& mlm0, Classifier& substitute,
                           const SamplingFoolConfig& cfg, Rng& rng) {
  AttackRecord rec;
  rec.attack_name = "sampling_fool";
  rec.original = x;
  rec.label = y;
  rec.seed = rng.seed();
  if (cfg.budget < 1) throw std::invalid_argument("sampling_fool: budget must be >= 1");
  if (entry_degenerate(rec, x, y, substitute)) return rec;
  MlmModel mlm = mlm0;
  const Mat logits = mlm.logits(x);
  SamplerConfig scfg{cfg.temperature, true};
  for (int b = 1; b <= cfg.budget; ++b)
    rec.candidates.push_back(make_entry(b, sample_tempered(logits, scfg, rng), substitute, y));
  finish_record(rec, x, y);
  return rec;
}

AttackRecord hotflip_attack(const TokenSeq& x, int y, Classifier& substitute,
                            const HotFlipConfig& cfg, Rng&) {
  AttackRecord rec;
  rec.attack_name = "hotflip";
  rec.original = x;
  rec.label = y;
  if (cfg.max_flips < 1) throw std::invalid_argument("hotflip: max_flips must be >= 1");
  if (cfg.shortlist < 1) throw std::invalid_argument("hotflip: shortlist must be >= 1");
  if (cfg.beam < 1) throw std::invalid_argument("hotflip: beam must be >= 1");
  if (entry_degenerate(rec, x, y, substitute)) return rec;

  struct Beam {
    TokenSeq seq;
    double c_y;
    int pred;
  };
  Eigen::VectorXd p0 = substitute.probs(x);
  std::vector<Beam> beams{{x, p0(y), y}};
  double best_cy = p0(y);

  for (int flip = 1; flip <= cfg.max_flips; ++flip) {
    std::vector<Beam> pool;
    for (const Beam& bm : beams) {
      // First-order score of swapping position i to token j on -log C_y.
      Mat g = input_gradient(substitute, bm.seq, y, true);
      std::vector<std::tuple<double, int, int>> scored;  // (gain, pos, token)
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double base = g(i, bm.seq[static_cast<std::size_t>(i)]);
        for (int j = Vocabulary::kSpecialCount; j < substitute.cfg.vocab; ++j) {
          if (j == bm.seq[static_cast<std::size_t>(i)]) continue;
          scored.emplace_back(g(i, j) - base, static_cast<int>(i), j);
        }
      }
      const std::size_t keep = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(cfg.shortlist));
      std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                        [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
      for (std::size_t s = 0; s < keep; ++s) {
        auto [gain, pos, tok] = scored[s];
        TokenSeq cand = bm.seq;
        cand[static_cast<std::size_t>(pos)] = tok;
        Eigen::VectorXd p = substitute.probs(cand);
        int pred = 0;
        for (int c = 1; c < p.size(); ++c)
          if (p(c) > p(pred)) pred = c;
        pool.push_back({std::move(cand), p(y), pred});
      }
    }
    if (pool.empty()) break;
    std::sort(pool.begin(), pool.end(), [](const Beam& a, const Beam& b) { return a.c_y < b.c_y; });
    if (pool.front().c_y >= best_cy) break;  // keep accepted flips strictly improving
    best_cy = pool.front().c_y;
    CandidateEntry e;
    e.iteration = flip;
    e.tokens = pool.front().seq;
    e.substitute_score = pool.front().c_y;
    e.substitute_pred = pool.front().pred;
    rec.candidates.push_back(e);
    if (pool.front().pred != y) break;  // flip achieved
    pool.resize(std::min<std::size_t>(pool.size(), static_cast<std::size_t>(cfg.beam)));
    beams = std::move(pool);
  }
  finish_record(rec, x, y);
  return rec;
}

int nearest_embedding(const Mat& table, const Eigen::VectorXd& query,
                      const std::vector<int>& exclude) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int j = Vocabulary::kSpecialCount; j < table.rows(); ++j) {
    if (std::find(exclude.begin(), exclude.end(), j) != exclude.end()) continue;
    const double d = (table.row(j).transpose() - query).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (best < 0) throw std::runtime_error("nearest_embedding: no admissible token");
  return best;
}

AttackRecord fgsm_attack(const TokenSeq& x, int y, Classifier& substitute, const FgsmConfig& cfg,
                         Rng& rng) {
  AttackRecord rec;
  rec.attack_name = "fgsm";
  rec.original = x;
  rec.label = y;
  rec.seed = rng.seed();
  if (cfg.steps < 1) throw std::invalid_argument("fgsm: steps must be >= 1");
  if (cfg.eps < 0.0) throw std::invalid_argument("fgsm: eps must be nonnegative");
  if (entry_degenerate(rec, x, y, substitute)) return rec;
  TokenSeq cur = x;
  for (int step = 1; step <= cfg.steps; ++step) {
    const int pos = rng.uniform_int(static_cast<int>(cur.size()));
    Mat g = input_gradient(substitute, cur, y, false);
    Eigen::VectorXd moved =
        substitute.emb.value.row(cur[static_cast<std::size_t>(pos)]).transpose() +
        cfg.eps * g.row(pos).transpose().unaryExpr([](double v) {
          return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        });
    cur[static_cast<std::size_t>(pos)] =
        nearest_embedding(substitute.emb.value, moved, {cur[static_cast<std::size_t>(pos)]});
    rec.candidates.push_back(make_entry(step, cur, substitute, y));
  }
  finish_record(rec, x, y);
  return rec;
}

std::pair<int, Eigen::VectorXd> deepfool_step(const Eigen::VectorXd& f, const Mat& w, int y) {
  if (f.size() != w.rows()) throw std::invalid_argument("deepfool_step: shape mismatch");
  int best = -1;
  double best_ratio = std::numeric_limits<double>::infinity();
  for (int k = 0; k < f.size(); ++k) {
    if (k == y) continue;
    const double norm = w.row(k).norm();
    if (norm < 1e-12) continue;
    const double ratio = std::abs(f(k)) / norm;
    if (ratio < best_ratio) {
      best_ratio = ratio;
      best = k;
    }
  }
  if (best < 0) return {-1, Eigen::VectorXd()};
  const double n2 = w.row(best).squaredNorm();
  Eigen::VectorXd r = (std::abs(f(best)) / n2) * w.row(best).transpose();
  return {best, r};
}

AttackRecord deepfool_attack(const TokenSeq& x, int y, Classifier& substitute,
                             const DeepFoolConfig& cfg, Rng&) {
  AttackRecord rec;
  rec.attack_name = "deepfool";
  rec.original = x;
  rec.label = y;
  if (cfg.steps < 1) throw std::invalid_argument("deepfool: steps must be >= 1");
  if (cfg.overshoot < 1.0) throw std::invalid_argument("deepfool: overshoot must be >= 1");
  if (entry_degenerate(rec, x, y, substitute)) return rec;

  const int E = substitute.cfg.embed_dim;
  TokenSeq cur = x;
  for (int step = 1; step <= cfg.steps; ++step) {
    const int t = static_cast<int>(cur.size());
    const int C = substitute.cfg.num_classes;
    Eigen::VectorXd z = substitute.logits_of(cur);
    const int yc = [&] {
      int b = 0;
      for (int c = 1; c < C; ++c)
        if (z(c) > z(b)) b = c;
      return b;
    }();
    if (yc != y) break;  // substitute already flipped on the working sequence
    // Per-class gradients of the logit margin at the embedding surface.
    Mat grads(C, static_cast<Eigen::Index>(t) * E);
    for (int k = 0; k < C; ++k) {
      ad::Tape tape;
      Mat rows(t, E);
      for (int i = 0; i < t; ++i) rows.row(i) = substitute.emb.value.row(cur[static_cast<std::size_t>(i)]);
      ad::Var in = tape.input(rows);
      ad::Var logits = substitute.logits_from_emb(tape, in);
      tape.backward(ad::slice_cols(logits, k, 1));
      Mat g = in.grad();
      grads.row(k) = Eigen::Map<Eigen::RowVectorXd>(g.data(), g.size());
      zero_grads(substitute.params());
    }
    Eigen::VectorXd f(C);
    Mat w(C, static_cast<Eigen::Index>(t) * E);
    for (int k = 0; k < C; ++k) {
      f(k) = z(k) - z(yc);
      w.row(k) = grads.row(k) - grads.row(yc);
    }
    auto [kstar, r] = deepfool_step(f, w, yc);
    if (kstar < 0) {
      rec.failure = "degenerate linearization at step " + std::to_string(step);
      break;
    }
    r *= cfg.overshoot;
    // Eigen matrices are column-major; map the flat perturbation back to rows.
    Mat rmat = Eigen::Map<Mat>(r.data(), t, E);
    int pos = 0;
    double best_norm = -1.0;
    for (int i = 0; i < t; ++i) {
      const double n = rmat.row(i).norm();
      if (n > best_norm) {
        best_norm = n;
        pos = i;
      }
    }
    Eigen::VectorXd moved = substitute.emb.value.row(cur[static_cast<std::size_t>(pos)]).transpose() +
                            rmat.row(pos).transpose();
    cur[static_cast<std::size_t>(pos)] =
        nearest_embedding(substitute.emb.value, moved, {cur[static_cast<std::size_t>(pos)]});
    rec.candidates.push_back(make_entry(step, cur, substitute, y));
  }
  finish_record(rec, x, y);
  return rec;
}

int select_candidate(const std::vector<CandidateEntry>& candidates, const TokenSeq& x, int y) {
  if (candidates.empty()) return -1;
  int best = -1;
  bool best_flips = false;
  int best_wer = std::numeric_limits<int>::max();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const CandidateEntry& c = candidates[i];
    const bool flips = c.substitute_pred != y;
    const int wer = flips ? exact_wer(x, c.tokens) : 0;
    bool better = false;
    if (best < 0) {
      better = true;
    } else if (flips != best_flips) {
      better = flips;
    } else if (flips) {
      const CandidateEntry& b = candidates[static_cast<std::size_t>(best)];
      if (wer != best_wer) better = wer < best_wer;
      else if (c.substitute_score != b.substitute_score) better = c.substitute_score < b.substitute_score;
      else better = c.iteration < b.iteration;  // stable for permutations
    } else {
      const CandidateEntry& b = candidates[static_cast<std::size_t>(best)];
      if (c.substitute_score != b.substitute_score) better = c.substitute_score < b.substitute_score;
      else better = c.iteration < b.iteration;
    }
    if (better) {
      best = static_cast<int>(i);
      best_flips = flips;
      best_wer = wer;
    }
  }
  return best;
}

}  // namespace seqadv
