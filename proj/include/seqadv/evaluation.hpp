#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "seqadv/attacks.hpp"

namespace seqadv {

struct MetricsReport {
  std::string attack_name;
  int requested = 0;   // examples drawn from the test split
  int n = 0;           // aggregated records (requested minus entry skips)
  int skipped = 0;     // substitute already wrong, never attacked
  int degenerate = 0;  // attacked but returned the input unchanged
  int failures = 0;    // attack aborted with a diagnostic
  double nad = 0.0;
  double mean_wer = 0.0;
  double mean_prob_diff = 0.0;
  double flip_rate = 0.0;  // target label changed
  double substitute_flip_rate = 0.0;
  double runtime_s = 0.0;
};

// Normalized accumulated drop: mean over records of
// 1{target label changes between original and chosen} / wer, with wer = 0
// contributing 0. Both the indicator and the edit distance are recomputed
// from the stored sequences.
double nad(const std::vector<AttackRecord>& records, Classifier& target);

// Mean of the target's true-class probability on the original minus on the
// chosen sequence.
double mean_prob_diff(const std::vector<AttackRecord>& records, Classifier& target);

double mean_wer(const std::vector<AttackRecord>& records);

// Re-scores records against a target classifier (fills target_flipped) and
// aggregates the summary metrics. Entry-skipped records are counted in
// `skipped` but excluded from every aggregate.
MetricsReport score_records(std::vector<AttackRecord>& records, Classifier& target,
                            const std::string& name);

using AttackFn = std::function<AttackRecord(const Example&, Rng&)>;

struct EvalResult {
  MetricsReport metrics;
  std::vector<AttackRecord> records;
};

// Runs the attack over the first n stratified test examples with independent
// per-example random streams, then scores the records against the target. An
// attack that throws yields a failure record and evaluation continues. The
// attack function must not retain references into the example between calls.
EvalResult evaluate_attack(const AttackFn& attack_fn, const Dataset& ds_test, Classifier& target,
                           int n_examples, std::uint64_t seed, const std::string& name = "");

struct GridSpec {
  std::vector<double> alphas;
  std::vector<double> betas;
  std::vector<int> num_samples;
  std::vector<double> temperatures;
  std::vector<int> subsets;
  int num_iters = 8;

  static GridSpec full();   // the published search space (11000 points)
  static GridSpec smoke();  // a four-point subgrid for quick runs
  std::size_t size() const;
  bool contains(const DilmaConfig& cfg) const;
  // Configs in lexicographic order over (alpha, beta, m, tau, subset).
  std::vector<DilmaConfig> enumerate() const;
};

struct GridRow {
  DilmaConfig cfg;
  MetricsReport metrics;
  bool aborted = false;  // every attempted record failed
};

struct GridResult {
  std::vector<GridRow> rows;
  int best_index = -1;

  const DilmaConfig& best_config() const;
};

// Evaluates every configuration (sampling variant) on the same stratified
// validation subset and picks the best NAD against the target; ties resolve
// to the lexicographically smallest configuration. Aborted configurations
// never win unless all abort.
GridResult grid_search(const GridSpec& grid, const Dataset& ds_val, const MlmModel& mlm0,
                       Classifier& substitute, DeepLevModel& dl, Classifier& target,
                       int n_per_config, std::uint64_t seed);

// One CSV row per configuration:
// alpha,beta,num_samples,temperature,param_subset,nad,mean_wer,mean_prob_diff,flip_rate,runtime_s
std::string grid_csv(const GridResult& result);

}  // namespace seqadv
