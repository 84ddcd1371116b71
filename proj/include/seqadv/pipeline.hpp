#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqadv/serialize.hpp"

namespace seqadv {

// Configuration or command-line problems; run_cli maps these to exit code 1
// (runtime failures exit 2).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SyntheticParams {
  SyntheticSpec spec;
  int train = 5000;
  int val = 1000;
  int test = 1000;
};

struct DatasetSpec {
  bool synthetic = true;
  SyntheticParams synth;
  std::string path;
  DataFormat format = DataFormat::kJsonl;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  int max_len = 0;  // truncation for loaded data; 0 keeps full length
};

struct AttackParams {
  int n_examples = 200;
  DilmaConfig dilma;  // shared by the three fine-tuning variants
  bool from_grid = false;  // take the fine-tuning hyperparameters from the grid winner
  SamplingFoolConfig sampling_fool;
  HotFlipConfig hotflip;
  FgsmConfig fgsm;
  DeepFoolConfig deepfool;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DatasetSpec dataset;
  MlmConfig mlm;  // vocab resolved at train time
  int mlm_epochs = 50;
  int mlm_corpus_cap = 1200;  // sequences used for language-model training
  ClassifierConfig target;
  ClassifierConfig substitute;
  DeepLevConfig deeplev;
  int deeplev_pairs = 50000;
  int deeplev_epochs = 12;
  TrainConfig train;
  AttackParams attack;
  double defense_held_out = 0.2;
  int grid_n_per_config = 100;
  Json raw;  // the parsed config document, for hashing
};

// Validates the whole document; unknown or ill-typed fields raise UsageError
// naming the field path.
ExperimentConfig parse_experiment_config(const Json& j);
ExperimentConfig load_experiment_config(const std::string& path);
std::uint64_t config_hash(const ExperimentConfig& cfg);

struct RunPaths {
  std::string dir;

  std::string vocab_file() const { return dir + "/vocab.json"; }
  std::string split_file(const std::string& name) const { return dir + "/" + name + ".jsonl"; }
  std::string checkpoint_file(const std::string& which) const { return dir + "/" + which + ".ckpt"; }
  std::string history_file(const std::string& which) const {
    return dir + "/" + which + "_history.csv";
  }
  std::string records_file(const std::string& attack) const {
    return dir + "/records_" + attack + ".jsonl";
  }
  std::string report_file(const std::string& attack) const {
    return dir + "/report_" + attack + ".json";
  }
  std::string defense_file(const std::string& attack) const {
    return dir + "/defense_" + attack + ".json";
  }
  std::string grid_csv_file() const { return dir + "/grid.csv"; }
  std::string grid_best_file() const { return dir + "/grid_best.json"; }
  std::string manifest_file(const std::string& command) const {
    return dir + "/manifest_" + command + ".json";
  }
  std::string summary_file() const { return dir + "/summary.csv"; }
  std::string defense_summary_file() const { return dir + "/defense_summary.csv"; }
};

// Reuses the newest run directory matching the config hash under `out_dir`
// (or $SEQADV_RUN_ROOT, or ./runs), creating <timestamp>-<hash> if none.
RunPaths resolve_run_dir(const std::string& out_dir, const ExperimentConfig& cfg);

const std::vector<std::string>& attack_names();

// Commands throw UsageError for precondition problems and std::runtime_error
// for compute failures; run_cli translates to exit codes.
void cmd_prepare(const ExperimentConfig& cfg, const RunPaths& paths, bool force,
                 std::ostream& log);
void cmd_train(const ExperimentConfig& cfg, const RunPaths& paths, const std::string& which,
               bool force, std::ostream& log);
void cmd_attack(const ExperimentConfig& cfg, const RunPaths& paths, const std::string& attack_name,
                bool force, std::ostream& log);
void cmd_defend(const ExperimentConfig& cfg, const RunPaths& paths, const std::string& attack_name,
                bool force, std::ostream& log);
void cmd_gridsearch(const ExperimentConfig& cfg, const RunPaths& paths, bool smoke, bool force,
                    std::ostream& log);
void cmd_report(const ExperimentConfig& cfg, const RunPaths& paths, bool force, std::ostream& log);

// Full command-line entry point: 0 success, 1 usage/validation, 2 runtime.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace seqadv
