#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqadv/models.hpp"
#include "seqadv/sampler.hpp"

namespace seqadv {

struct CandidateEntry {
  int iteration = 0;
  TokenSeq tokens;
  double substitute_score = 0.0;  // substitute probability of the true label
  int substitute_pred = -1;
};

struct AttackRecord {
  std::string attack_name;
  TokenSeq original;
  int label = 0;
  TokenSeq chosen;
  std::vector<CandidateEntry> candidates;
  int wer = 0;
  bool substitute_flipped = false;
  bool target_flipped = false;  // filled in during evaluation
  bool degenerate = false;      // chosen == original: skipped or total failure
  bool skipped = false;         // substitute already wrong: never attacked
  std::string failure;          // diagnostic note when the attack aborted
  std::uint64_t seed = 0;
};

// Search loss for the fine-tuning attack:
//   beta * (1 - dl)^2 - log(1 - c_y),   c_y clamped to at most 1 - 1e-6.
double dilma_loss_value(double c_y, double dl_value, double beta);

// Graph version: x_sample is the straight-through sample (t x vocab rows);
// dl may be null when beta == 0.
ad::Var dilma_loss(ad::Tape& tape, const ad::Var& x_sample, const TokenSeq& x, int y, double beta,
                   Classifier& substitute, DeepLevModel* dl);

struct DilmaConfig {
  double alpha = 0.1;        // update rate for the language model parameters
  double beta = 1.0;         // weight of the edit-distance term
  int num_iters = 8;         // k
  int num_samples = 1;       // m candidates per iteration in sampling mode
  double temperature = 1.5;  // tau
  int param_subset = 2;      // see MlmModel::subset_params
  bool sample_candidates = false;
};

// Per-example fine-tuning attack. Works on a copy of the language model; the
// shared pretrained weights are never modified.
AttackRecord dilma_attack(const TokenSeq& x, int y, const MlmModel& mlm0, Classifier& substitute,
                          DeepLevModel* dl, const DilmaConfig& cfg, Rng& rng);

struct SamplingFoolConfig {
  double temperature = 1.5;
  int budget = 100;
};

AttackRecord sampling_fool(const TokenSeq& x, int y, const MlmModel& mlm0, Classifier& substitute,
                           const SamplingFoolConfig& cfg, Rng& rng);

struct HotFlipConfig {
  int max_flips = 6;
  int shortlist = 20;  // gradient-ranked swaps verified with a true forward
  int beam = 1;
};

AttackRecord hotflip_attack(const TokenSeq& x, int y, Classifier& substitute,
                            const HotFlipConfig& cfg, Rng& rng);

struct FgsmConfig {
  int steps = 10;
  double eps = 0.1;
};

AttackRecord fgsm_attack(const TokenSeq& x, int y, Classifier& substitute, const FgsmConfig& cfg,
                         Rng& rng);

struct DeepFoolConfig {
  int steps = 10;
  double overshoot = 1.05;
};

AttackRecord deepfool_attack(const TokenSeq& x, int y, Classifier& substitute,
                             const DeepFoolConfig& cfg, Rng& rng);

// Minimal-perturbation step of the multiclass linearization: given margins
// f_k = z_k - z_y and gradient-difference rows w_k (k x d, zero row at y),
// returns the class index to cross and the perturbation r.
std::pair<int, Eigen::VectorXd> deepfool_step(const Eigen::VectorXd& f, const Mat& w, int y);

// Candidate selection: among substitute-flipping candidates the smallest
// exact edit distance wins; ties prefer the lower substitute score, then the
// earlier iteration. With no flipping candidate, the lowest substitute score
// wins. Returns an index into `candidates`, or -1 when the list is empty.
int select_candidate(const std::vector<CandidateEntry>& candidates, const TokenSeq& x, int y);

// Nearest row of the embedding table by Euclidean distance, excluding service
// tokens and the ids listed in `exclude`.
int nearest_embedding(const Mat& table, const Eigen::VectorXd& query,
                      const std::vector<int>& exclude);

}  // namespace seqadv
