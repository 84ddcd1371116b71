#include "seqadv/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

namespace fs = std::filesystem;

namespace seqadv {

namespace {

std::uint64_t fnv1a_str(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---- schema helpers ----

void reject_unknown(const Json& j, const std::string& path,
                    std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw UsageError(path + ": expected an object");
  for (const auto& item : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
          return item.key() == k;
        }) == allowed.end())
      throw UsageError(path + "." + item.key() + ": unknown field");
  }
}

template <typename T>
T get_field(const Json& j, const char* key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw UsageError(path + "." + key + ": wrong type");
  }
}

// ---- parsing ----

void parse_dataset(const Json& j, DatasetSpec& out) {
  reject_unknown(j, "dataset",
                 {"synthetic", "path", "format", "val_fraction", "test_fraction", "max_len"});
  const bool has_synth = j.contains("synthetic");
  const bool has_path = j.contains("path");
  if (has_synth && has_path)
    throw UsageError("dataset: 'synthetic' and 'path' are mutually exclusive");
  if (!has_synth && !has_path)
    throw UsageError("dataset.path: required unless 'synthetic' is given");
  out.synthetic = has_synth;
  if (has_synth) {
    const Json& s = j.at("synthetic");
    reject_unknown(j.at("synthetic"), "dataset.synthetic",
                   {"num_classes", "vocab_size", "min_len", "max_len", "signal_strength", "train",
                    "val", "test"});
    out.synth.spec.num_classes = get_field(s, "num_classes", "dataset.synthetic", 2);
    out.synth.spec.vocab_size = get_field(s, "vocab_size", "dataset.synthetic", 30);
    out.synth.spec.min_len = get_field(s, "min_len", "dataset.synthetic", 5);
    out.synth.spec.max_len = get_field(s, "max_len", "dataset.synthetic", 12);
    out.synth.spec.signal_strength = get_field(s, "signal_strength", "dataset.synthetic", 0.5);
    out.synth.train = get_field(s, "train", "dataset.synthetic", 5000);
    out.synth.val = get_field(s, "val", "dataset.synthetic", 1000);
    out.synth.test = get_field(s, "test", "dataset.synthetic", 1000);
    try {
      out.synth.spec.check();
    } catch (const std::exception& e) {
      throw UsageError(std::string("dataset.synthetic: ") + e.what());
    }
    if (out.synth.train < 2 || out.synth.val < 1 || out.synth.test < 1)
      throw UsageError("dataset.synthetic: split sizes too small");
  } else {
    out.path = get_field(j, "path", "dataset", std::string{});
    if (out.path.empty()) throw UsageError("dataset.path: must be a nonempty string");
    const std::string fmt = get_field(j, "format", "dataset", std::string{"jsonl"});
    try {
      out.format = parse_format(fmt);
    } catch (const std::exception& e) {
      throw UsageError(std::string("dataset.format: ") + e.what());
    }
    out.val_fraction = get_field(j, "val_fraction", "dataset", 0.1);
    out.test_fraction = get_field(j, "test_fraction", "dataset", 0.1);
    if (out.val_fraction <= 0 || out.test_fraction <= 0 ||
        out.val_fraction + out.test_fraction >= 1.0)
      throw UsageError("dataset.val_fraction/test_fraction: must be positive and sum below 1");
    out.max_len = get_field(j, "max_len", "dataset", 0);
  }
}

void parse_classifier(const Json& j, const std::string& path, ClassifierConfig& out) {
  reject_unknown(j, path,
                 {"kind", "embed_dim", "dropout", "hidden", "filter_sizes", "num_filters"});
  if (j.contains("kind")) {
    try {
      out.kind = parse_kind(j.at("kind").get<std::string>());
    } catch (const std::exception& e) {
      throw UsageError(path + ".kind: " + e.what());
    }
  }
  out.embed_dim = get_field(j, "embed_dim", path, out.embed_dim);
  out.dropout = get_field(j, "dropout", path, out.dropout);
  out.hidden = get_field(j, "hidden", path, out.hidden);
  out.filter_sizes = get_field(j, "filter_sizes", path, out.filter_sizes);
  out.num_filters = get_field(j, "num_filters", path, out.num_filters);
  if (out.embed_dim < 1 || out.hidden < 1 || out.num_filters < 1 || out.filter_sizes.empty())
    throw UsageError(path + ": model dimensions must be positive");
}

void parse_models(const Json& j, ExperimentConfig& cfg) {
  reject_unknown(j, "models", {"mlm", "target", "substitute", "deeplev"});
  if (j.contains("mlm")) {
    const Json& m = j.at("mlm");
    reject_unknown(m, "models.mlm",
                   {"num_layers", "dim", "num_heads", "ffn_dim", "max_len", "epochs", "corpus_cap"});
    cfg.mlm.num_layers = get_field(m, "num_layers", "models.mlm", cfg.mlm.num_layers);
    cfg.mlm.dim = get_field(m, "dim", "models.mlm", cfg.mlm.dim);
    cfg.mlm.num_heads = get_field(m, "num_heads", "models.mlm", cfg.mlm.num_heads);
    cfg.mlm.ffn_dim = get_field(m, "ffn_dim", "models.mlm", cfg.mlm.ffn_dim);
    cfg.mlm.max_len = get_field(m, "max_len", "models.mlm", cfg.mlm.max_len);
    cfg.mlm_epochs = get_field(m, "epochs", "models.mlm", cfg.mlm_epochs);
    cfg.mlm_corpus_cap = get_field(m, "corpus_cap", "models.mlm", cfg.mlm_corpus_cap);
    if (cfg.mlm.dim % cfg.mlm.num_heads != 0)
      throw UsageError("models.mlm: dim must be divisible by num_heads");
    if (cfg.mlm_epochs < 1) throw UsageError("models.mlm.epochs: must be at least 1");
  }
  if (j.contains("target")) parse_classifier(j.at("target"), "models.target", cfg.target);
  if (j.contains("substitute"))
    parse_classifier(j.at("substitute"), "models.substitute", cfg.substitute);
  if (j.contains("deeplev")) {
    const Json& d = j.at("deeplev");
    reject_unknown(d, "models.deeplev", {"embed_dim", "hidden", "head_hidden", "pairs", "epochs"});
    cfg.deeplev.embed_dim = get_field(d, "embed_dim", "models.deeplev", cfg.deeplev.embed_dim);
    cfg.deeplev.hidden = get_field(d, "hidden", "models.deeplev", cfg.deeplev.hidden);
    cfg.deeplev.head_hidden = get_field(d, "head_hidden", "models.deeplev", cfg.deeplev.head_hidden);
    cfg.deeplev_pairs = get_field(d, "pairs", "models.deeplev", cfg.deeplev_pairs);
    cfg.deeplev_epochs = get_field(d, "epochs", "models.deeplev", cfg.deeplev_epochs);
    if (cfg.deeplev_pairs < 10) throw UsageError("models.deeplev.pairs: need at least 10");
  }
}

void parse_attack(const Json& j, AttackParams& out) {
  reject_unknown(j, "attack",
                 {"n_examples", "alpha", "beta", "num_iters", "num_samples", "temperature",
                  "param_subset", "from_grid", "budget", "max_flips", "shortlist", "beam", "eps",
                  "steps", "overshoot"});
  out.n_examples = get_field(j, "n_examples", "attack", out.n_examples);
  if (out.n_examples < 1) throw UsageError("attack.n_examples: must be at least 1");
  out.dilma.alpha = get_field(j, "alpha", "attack", out.dilma.alpha);
  out.dilma.beta = get_field(j, "beta", "attack", out.dilma.beta);
  out.dilma.num_iters = get_field(j, "num_iters", "attack", out.dilma.num_iters);
  out.dilma.num_samples = get_field(j, "num_samples", "attack", out.dilma.num_samples);
  out.dilma.temperature = get_field(j, "temperature", "attack", out.dilma.temperature);
  out.dilma.param_subset = get_field(j, "param_subset", "attack", out.dilma.param_subset);
  out.from_grid = get_field(j, "from_grid", "attack", out.from_grid);
  out.sampling_fool.temperature = out.dilma.temperature;
  out.sampling_fool.budget = get_field(j, "budget", "attack", out.sampling_fool.budget);
  out.hotflip.max_flips = get_field(j, "max_flips", "attack", out.hotflip.max_flips);
  out.hotflip.shortlist = get_field(j, "shortlist", "attack", out.hotflip.shortlist);
  out.hotflip.beam = get_field(j, "beam", "attack", out.hotflip.beam);
  out.fgsm.eps = get_field(j, "eps", "attack", out.fgsm.eps);
  out.fgsm.steps = get_field(j, "steps", "attack", out.fgsm.steps);
  out.deepfool.steps = out.fgsm.steps;
  out.deepfool.overshoot = get_field(j, "overshoot", "attack", out.deepfool.overshoot);
  if (out.dilma.param_subset < 0 || out.dilma.param_subset > 3)
    throw UsageError("attack.param_subset: must be 0..3");
  if (out.dilma.temperature <= 0) throw UsageError("attack.temperature: must be positive");
}

}  // namespace

ExperimentConfig parse_experiment_config(const Json& j) {
  if (!j.is_object()) throw UsageError("config: expected a JSON object");
  reject_unknown(j, "config",
                 {"seed", "dataset", "models", "train", "attack", "defense", "grid"});
  ExperimentConfig cfg;
  cfg.substitute.kind = ClassifierKind::kCnn;  // black-box pairing: recurrent target, conv substitute
  cfg.raw = j;
  cfg.seed = get_field(j, "seed", "config", std::uint64_t{1});
  if (j.contains("dataset")) parse_dataset(j.at("dataset"), cfg.dataset);
  if (j.contains("models")) parse_models(j.at("models"), cfg);
  if (j.contains("train")) {
    const Json& t = j.at("train");
    reject_unknown(t, "train", {"lr", "batch_size", "max_epochs", "patience"});
    cfg.train.lr = get_field(t, "lr", "train", cfg.train.lr);
    cfg.train.batch_size = get_field(t, "batch_size", "train", cfg.train.batch_size);
    cfg.train.max_epochs = get_field(t, "max_epochs", "train", cfg.train.max_epochs);
    cfg.train.patience = get_field(t, "patience", "train", cfg.train.patience);
    if (cfg.train.lr <= 0 || cfg.train.batch_size < 1 || cfg.train.max_epochs < 1)
      throw UsageError("train: lr, batch_size and max_epochs must be positive");
  }
  if (j.contains("attack")) parse_attack(j.at("attack"), cfg.attack);
  if (j.contains("defense")) {
    const Json& d = j.at("defense");
    reject_unknown(d, "defense", {"held_out_fraction"});
    cfg.defense_held_out = get_field(d, "held_out_fraction", "defense", cfg.defense_held_out);
    if (!(cfg.defense_held_out > 0.0 && cfg.defense_held_out < 1.0))
      throw UsageError("defense.held_out_fraction: must be in (0, 1)");
  }
  if (j.contains("grid")) {
    const Json& g = j.at("grid");
    reject_unknown(g, "grid", {"n_per_config"});
    cfg.grid_n_per_config = get_field(g, "n_per_config", "grid", cfg.grid_n_per_config);
    if (cfg.grid_n_per_config < 1) throw UsageError("grid.n_per_config: must be at least 1");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  Json effective = cfg.raw;
  effective["seed"] = cfg.seed;
  return fnv1a_str(effective.dump());
}

RunPaths resolve_run_dir(const std::string& out_dir, const ExperimentConfig& cfg) {
  std::string root = out_dir;
  if (root.empty()) {
    const char* env = std::getenv("SEQADV_RUN_ROOT");
    root = env != nullptr && *env != '\0' ? env : "runs";
  }
  const std::string hash = hex64(config_hash(cfg));
  std::string found;
  if (fs::exists(root)) {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (!entry.is_directory()) continue;
      const std::string name = entry.path().filename().string();
      if (name.size() > hash.size() && name.compare(name.size() - hash.size(), hash.size(), hash) == 0 &&
          name[name.size() - hash.size() - 1] == '-' && name > found)
        found = name;
    }
  }
  RunPaths paths;
  if (!found.empty()) {
    paths.dir = (fs::path(root) / found).string();
    return paths;
  }
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  paths.dir = (fs::path(root) / (std::string(stamp) + "-" + hash)).string();
  fs::create_directories(paths.dir);
  return paths;
}

const std::vector<std::string>& attack_names() {
  static const std::vector<std::string> names{"sampling_fool", "dilma", "dilma_beta0",
                                             "dilma_sampling", "hotflip", "fgsm", "deepfool"};
  return names;
}

namespace {

void refuse_existing(const std::string& path, bool force, const std::string& command) {
  if (!force && fs::exists(path))
    throw UsageError(command + ": output " + path + " already exists; pass --force to redo");
}

void require_artifact(const std::string& path, const std::string& hint) {
  if (!fs::exists(path))
    throw UsageError("missing artifact: " + path + "; run `" + hint + "` first");
}

void write_manifest(const RunPaths& paths, const std::string& command,
                    const ExperimentConfig& cfg, const std::vector<std::string>& outputs,
                    double wall_s) {
  Json files = Json::array();
  for (const std::string& p : outputs)
    files.push_back(Json{{"path", p}, {"fnv64", hex64(fnv1a_file(p))}});
  Json manifest{{"command", command},
                {"config_hash", hex64(config_hash(cfg))},
                {"seed", cfg.seed},
                {"vocab_hash", fs::exists(paths.vocab_file())
                                   ? hex64(fnv1a_file(paths.vocab_file()))
                                   : std::string{}},
                {"version", "seqadv 0.1.0"},
                {"wall_clock_s", wall_s},
                {"outputs", std::move(files)}};
  write_text_file(paths.manifest_file(command), manifest.dump(2) + "\n");
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

Vocabulary load_run_vocab(const RunPaths& paths) {
  require_artifact(paths.vocab_file(), "prepare");
  return load_vocab(paths.vocab_file());
}

Dataset load_split(const RunPaths& paths, const Vocabulary& vocab, const std::string& name) {
  require_artifact(paths.split_file(name), "prepare");
  return load_dataset(paths.split_file(name), DataFormat::kJsonl, vocab, 0);
}

int longest_sequence(const Dataset& ds) {
  int longest = 0;
  for (const Example& ex : ds.examples) longest = std::max<int>(longest, static_cast<int>(ex.tokens.size()));
  return longest;
}

MaskingConfig surrogate_pair_masking(int level) {
  // Pair generation sweeps corruption strength so the regression sees the
  // whole useful WER range, not just light edits.
  switch (level) {
    case 0: return {0.15, 0.05};
    case 1: return {0.30, 0.10};
    case 2: return {0.50, 0.10};
    default: return {0.70, 0.20};
  }
}

DilmaConfig dilma_config_for(const ExperimentConfig& cfg, const RunPaths& paths,
                             const std::string& attack_name) {
  DilmaConfig dc = cfg.attack.dilma;
  if (cfg.attack.from_grid) {
    if (!fs::exists(paths.grid_best_file()))
      throw UsageError("attack.from_grid is set but " + paths.grid_best_file() +
                       " does not exist; run `gridsearch` first");
    const Json j = Json::parse(read_text_file(paths.grid_best_file()));
    dc.alpha = j.at("alpha").get<double>();
    dc.beta = j.at("beta").get<double>();
    dc.num_samples = j.at("num_samples").get<int>();
    dc.temperature = j.at("temperature").get<double>();
    dc.param_subset = j.at("param_subset").get<int>();
    dc.num_iters = j.at("num_iters").get<int>();
  }
  if (attack_name == "dilma_beta0") dc.beta = 0.0;
  dc.sample_candidates = attack_name == "dilma_sampling";
  return dc;
}

std::string metrics_line(const MetricsReport& m) {
  std::ostringstream os;
  os << std::left << std::setw(16) << m.attack_name << std::fixed << std::setprecision(4)
     << "  n=" << m.n << "  nad=" << m.nad << "  mean_wer=" << std::setprecision(2) << m.mean_wer
     << "  prob_diff=" << std::setprecision(4) << m.mean_prob_diff << "  flip_rate=" << m.flip_rate;
  if (m.skipped > 0) os << "  skipped=" << m.skipped;
  if (m.failures > 0) os << "  failures=" << m.failures;
  return os.str();
}

}  // namespace

void cmd_prepare(const ExperimentConfig& cfg, const RunPaths& paths, bool force,
                 std::ostream& log) {
  Timer timer;
  refuse_existing(paths.vocab_file(), force, "prepare");
  Rng root(cfg.seed);
  Vocabulary vocab;
  Dataset train, val, test;
  if (cfg.dataset.synthetic) {
    const SyntheticSpec& spec = cfg.dataset.synth.spec;
    vocab = spec.vocabulary();
    train = spec.generate(cfg.dataset.synth.train, root.child(1).seed(), "train");
    val = spec.generate(cfg.dataset.synth.val, root.child(2).seed(), "val");
    test = spec.generate(cfg.dataset.synth.test, root.child(3).seed(), "test");
  } else {
    if (!fs::exists(cfg.dataset.path))
      throw UsageError("dataset.path: file not found: " + cfg.dataset.path);
    RawDataset raw = load_raw_dataset(cfg.dataset.path, cfg.dataset.format);
    vocab = build_vocab(raw.sequences);
    Dataset all = encode_dataset(raw, vocab, cfg.dataset.max_len);
    auto [test_part, rest] = stratified_split(all, cfg.dataset.test_fraction, root.child(1).seed());
    const double val_frac = cfg.dataset.val_fraction / (1.0 - cfg.dataset.test_fraction);
    auto [val_part, train_part] = stratified_split(rest, val_frac, root.child(2).seed());
    test = std::move(test_part);
    val = std::move(val_part);
    train = std::move(train_part);
    train.split_tag = "train";
    val.split_tag = "val";
    test.split_tag = "test";
  }
  // The substitute owner sees only half of the training data.
  auto [sub_train, sub_rest] = stratified_split(train, 0.5, root.child(4).seed());
  sub_train.split_tag = "substitute_train";
  (void)sub_rest;

  save_vocab(vocab, paths.vocab_file());
  save_dataset(train, vocab, paths.split_file("train"), DataFormat::kJsonl);
  save_dataset(val, vocab, paths.split_file("val"), DataFormat::kJsonl);
  save_dataset(test, vocab, paths.split_file("test"), DataFormat::kJsonl);
  save_dataset(sub_train, vocab, paths.split_file("substitute_train"), DataFormat::kJsonl);
  log << "prepared " << paths.dir << ": vocab " << vocab.size() << " tokens, train "
      << train.size() << ", val " << val.size() << ", test " << test.size()
      << ", substitute_train " << sub_train.size() << "\n";
  write_manifest(paths, "prepare", cfg,
                 {paths.vocab_file(), paths.split_file("train"), paths.split_file("val"),
                  paths.split_file("test"), paths.split_file("substitute_train")},
                 timer.seconds());
}

void cmd_train(const ExperimentConfig& cfg, const RunPaths& paths, const std::string& which,
               bool force, std::ostream& log) {
  static const std::vector<std::string> kinds{"mlm", "target", "substitute", "deeplev"};
  if (std::find(kinds.begin(), kinds.end(), which) == kinds.end())
    throw UsageError("unknown model '" + which + "'; expected one of mlm|target|substitute|deeplev");
  Timer timer;
  refuse_existing(paths.checkpoint_file(which), force, "train " + which);
  const Vocabulary vocab = load_run_vocab(paths);
  const std::string vocab_hash = hex64(fnv1a_file(paths.vocab_file()));
  Rng root(cfg.seed);

  CheckpointMeta meta;
  meta.vocab_hash = vocab_hash;
  History history;

  if (which == "mlm") {
    Dataset train = load_split(paths, vocab, "train");
    Dataset corpus = stratified_take(train, cfg.mlm_corpus_cap);
    MlmConfig mcfg = cfg.mlm;
    mcfg.vocab = vocab.size();
    mcfg.max_len = std::max(mcfg.max_len, longest_sequence(train));
    TrainConfig tcfg = cfg.train;
    tcfg.max_epochs = cfg.mlm_epochs;
    tcfg.seed = root.child(0x100).seed();
    TrainedMlm trained = train_mlm(corpus, mcfg, MaskingConfig{}, tcfg);
    auto [major_id, major_share] = majority_token(corpus);
    meta.model_kind = "mlm";
    meta.config = to_json(mcfg);
    meta.seed = tcfg.seed;
    meta.metrics = Json{{"masked_accuracy", trained.final_masked_accuracy},
                        {"majority_baseline", major_share},
                        {"majority_token", vocab.decode({major_id}).front()},
                        {"corpus_sequences", corpus.size()}};
    history = trained.history;
    save_checkpoint(paths.checkpoint_file(which), trained.model.params(), meta);
    log << "mlm: masked accuracy " << trained.final_masked_accuracy << " vs majority baseline "
        << major_share << "\n";
  } else if (which == "target" || which == "substitute") {
    Dataset train = which == "target" ? load_split(paths, vocab, "train")
                                      : load_split(paths, vocab, "substitute_train");
    Dataset val = load_split(paths, vocab, "val");
    ClassifierConfig ccfg = which == "target" ? cfg.target : cfg.substitute;
    ccfg.vocab = vocab.size();
    ccfg.num_classes = train.num_classes;
    TrainConfig tcfg = cfg.train;
    tcfg.seed = root.child(which == "target" ? 0x200 : 0x300).seed();
    TrainedClassifier trained = train_classifier(train, val, ccfg, tcfg);
    meta.model_kind = "classifier";
    meta.config = to_json(ccfg);
    meta.seed = tcfg.seed;
    meta.metrics = Json{{"best_val_accuracy", trained.best_val_accuracy},
                        {"best_epoch", trained.best_epoch},
                        {"train_examples", train.size()}};
    if (fs::exists(paths.split_file("test"))) {
      Dataset test = load_split(paths, vocab, "test");
      meta.metrics["test_accuracy"] = classifier_accuracy(trained.model, test);
    }
    history = trained.history;
    save_checkpoint(paths.checkpoint_file(which), trained.model.params(), meta);
    log << which << " (" << kind_name(ccfg.kind) << "): val accuracy "
        << trained.best_val_accuracy;
    if (meta.metrics.contains("test_accuracy"))
      log << ", test accuracy " << meta.metrics["test_accuracy"].get<double>();
    log << "\n";
  } else {  // deeplev
    Dataset train = load_split(paths, vocab, "train");
    std::vector<DeepLevPair> pairs;
    const int per_level = cfg.deeplev_pairs / 4;
    for (int level = 0; level < 4; ++level) {
      const int n = level == 3 ? cfg.deeplev_pairs - 3 * per_level : per_level;
      std::vector<DeepLevPair> part =
          gen_deeplev_pairs(train, n, surrogate_pair_masking(level), 0.25,
                            root.child(0x400 + static_cast<std::uint64_t>(level)).seed(),
                            vocab.size());
      pairs.insert(pairs.end(), part.begin(), part.end());
    }
    DeepLevConfig dcfg = cfg.deeplev;
    dcfg.vocab = vocab.size();
    TrainConfig tcfg = cfg.train;
    tcfg.max_epochs = cfg.deeplev_epochs;
    tcfg.seed = root.child(0x410).seed();
    TrainedDeepLev trained = train_deeplev(pairs, dcfg, tcfg);
    meta.model_kind = "deeplev";
    meta.config = to_json(dcfg);
    meta.seed = tcfg.seed;
    meta.metrics = Json{{"held_out_mae", trained.held_out_mae}, {"pairs", pairs.size()}};
    history = trained.history;
    save_checkpoint(paths.checkpoint_file(which), trained.model.params(), meta);
    log << "deeplev: held-out MAE " << trained.held_out_mae << " over " << pairs.size()
        << " pairs\n";
  }
  write_text_file(paths.history_file(which), history_csv(history));
  write_manifest(paths, "train_" + which, cfg,
                 {paths.checkpoint_file(which), paths.history_file(which)}, timer.seconds());
}

void cmd_attack(const ExperimentConfig& cfg, const RunPaths& paths, const std::string& attack_name,
                bool force, std::ostream& log) {
  const auto& names = attack_names();
  if (std::find(names.begin(), names.end(), attack_name) == names.end()) {
    std::string all;
    for (const std::string& n : names) all += (all.empty() ? "" : ", ") + n;
    throw UsageError("unknown attack '" + attack_name + "'; valid names: " + all);
  }
  Timer timer;
  refuse_existing(paths.records_file(attack_name), force, "attack " + attack_name);
  const Vocabulary vocab = load_run_vocab(paths);
  Dataset test = load_split(paths, vocab, "test");
  require_artifact(paths.checkpoint_file("substitute"), "train substitute");
  require_artifact(paths.checkpoint_file("target"), "train target");
  Classifier substitute = load_classifier_checkpoint(paths.checkpoint_file("substitute"));
  Classifier target = load_classifier_checkpoint(paths.checkpoint_file("target"));

  const bool needs_mlm = attack_name == "sampling_fool" || attack_name.rfind("dilma", 0) == 0;
  MlmModel mlm;
  if (needs_mlm) {
    require_artifact(paths.checkpoint_file("mlm"), "train mlm");
    mlm = load_mlm_checkpoint(paths.checkpoint_file("mlm"));
  }
  DilmaConfig dc = dilma_config_for(cfg, paths, attack_name);
  const bool needs_dl =
      (attack_name == "dilma" || attack_name == "dilma_sampling") && dc.beta != 0.0;
  DeepLevModel dl;
  if (needs_dl) {
    require_artifact(paths.checkpoint_file("deeplev"), "train deeplev");
    dl = load_deeplev_checkpoint(paths.checkpoint_file("deeplev"));
  }

  AttackFn fn;
  if (attack_name == "sampling_fool") {
    fn = [&](const Example& ex, Rng& rng) {
      return sampling_fool(ex.tokens, ex.label, mlm, substitute, cfg.attack.sampling_fool, rng);
    };
  } else if (attack_name.rfind("dilma", 0) == 0) {
    fn = [&](const Example& ex, Rng& rng) {
      return dilma_attack(ex.tokens, ex.label, mlm, substitute, needs_dl ? &dl : nullptr, dc, rng);
    };
  } else if (attack_name == "hotflip") {
    fn = [&](const Example& ex, Rng& rng) {
      return hotflip_attack(ex.tokens, ex.label, substitute, cfg.attack.hotflip, rng);
    };
  } else if (attack_name == "fgsm") {
    fn = [&](const Example& ex, Rng& rng) {
      return fgsm_attack(ex.tokens, ex.label, substitute, cfg.attack.fgsm, rng);
    };
  } else {
    fn = [&](const Example& ex, Rng& rng) {
      return deepfool_attack(ex.tokens, ex.label, substitute, cfg.attack.deepfool, rng);
    };
  }

  Rng root(cfg.seed);
  const std::uint64_t eval_seed = root.child(0x500 ^ fnv1a_str(attack_name)).seed();
  const int n = std::min<int>(cfg.attack.n_examples, static_cast<int>(test.size()));
  EvalResult result = evaluate_attack(fn, test, target, n, eval_seed, attack_name);

  write_text_file(paths.records_file(attack_name), records_jsonl(result.records, vocab));
  write_text_file(paths.report_file(attack_name), to_json(result.metrics).dump(2) + "\n");
  log << metrics_line(result.metrics) << "\n";
  write_manifest(paths, "attack_" + attack_name, cfg,
                 {paths.records_file(attack_name), paths.report_file(attack_name)},
                 timer.seconds());
}

void cmd_defend(const ExperimentConfig& cfg, const RunPaths& paths, const std::string& attack_name,
                bool force, std::ostream& log) {
  Timer timer;
  require_artifact(paths.records_file(attack_name), "attack " + attack_name);
  refuse_existing(paths.defense_file(attack_name), force, "defend " + attack_name);
  const Vocabulary vocab = load_run_vocab(paths);
  Dataset train = load_split(paths, vocab, "train");
  Dataset val = load_split(paths, vocab, "val");
  Dataset test = load_split(paths, vocab, "test");
  require_artifact(paths.checkpoint_file("target"), "train target");
  Classifier target = load_classifier_checkpoint(paths.checkpoint_file("target"));
  std::vector<AttackRecord> records =
      parse_records_jsonl(read_text_file(paths.records_file(attack_name)), vocab);
  if (records.empty())
    throw UsageError("no records in " + paths.records_file(attack_name));

  Rng root(cfg.seed);
  DefenseReport report;
  report.attack_name = attack_name;
  report.nad_before = score_records(records, target, attack_name).nad;
  report.clean_accuracy_before = classifier_accuracy(target, test);

  TrainConfig tcfg = cfg.train;
  tcfg.seed = root.child(0x600).seed();
  TrainedClassifier retrained = adversarial_retrain(target, train, val, records, tcfg);
  report.nad_after = score_records(records, retrained.model, attack_name).nad;
  report.clean_accuracy_after = classifier_accuracy(retrained.model, test);
  report.n_adv_train = static_cast<int>(records.size());

  std::vector<TokenSeq> originals, adversarials;
  for (const AttackRecord& rec : records) {
    if (rec.skipped) continue;
    originals.push_back(rec.original);
    adversarials.push_back(rec.chosen);
  }
  if (originals.size() >= 10) {
    ClassifierConfig dcfg;
    dcfg.kind = ClassifierKind::kGru;
    dcfg.vocab = vocab.size();
    dcfg.num_classes = 2;
    TrainConfig dtcfg = cfg.train;
    dtcfg.seed = root.child(0x601).seed();
    DiscriminatorDefense disc = discriminator_defense(originals, adversarials, dcfg, dtcfg,
                                                      cfg.defense_held_out, root.child(0x602).seed());
    report.detector_auc = disc.auc;
  } else {
    log << "defend " << attack_name << ": too few attacked records for the detector\n";
  }

  write_text_file(paths.defense_file(attack_name), to_json(report).dump(2) + "\n");
  log << "defend " << std::left << std::setw(16) << attack_name << std::fixed
      << std::setprecision(4) << "  nad " << report.nad_before << " -> " << report.nad_after
      << "  clean accuracy " << report.clean_accuracy_before << " -> "
      << report.clean_accuracy_after << "  detector auc " << report.detector_auc << "\n";
  write_manifest(paths, "defend_" + attack_name, cfg, {paths.defense_file(attack_name)},
                 timer.seconds());
}

void cmd_gridsearch(const ExperimentConfig& cfg, const RunPaths& paths, bool smoke, bool force,
                    std::ostream& log) {
  Timer timer;
  refuse_existing(paths.grid_csv_file(), force, "gridsearch");
  const Vocabulary vocab = load_run_vocab(paths);
  Dataset val = load_split(paths, vocab, "val");
  require_artifact(paths.checkpoint_file("mlm"), "train mlm");
  require_artifact(paths.checkpoint_file("substitute"), "train substitute");
  require_artifact(paths.checkpoint_file("deeplev"), "train deeplev");
  require_artifact(paths.checkpoint_file("target"), "train target");
  MlmModel mlm = load_mlm_checkpoint(paths.checkpoint_file("mlm"));
  Classifier substitute = load_classifier_checkpoint(paths.checkpoint_file("substitute"));
  DeepLevModel dl = load_deeplev_checkpoint(paths.checkpoint_file("deeplev"));
  Classifier target = load_classifier_checkpoint(paths.checkpoint_file("target"));

  GridSpec spec = smoke ? GridSpec::smoke() : GridSpec::full();
  if (!smoke) spec.num_iters = cfg.attack.dilma.num_iters;
  Rng root(cfg.seed);
  const int n = std::min<int>(cfg.grid_n_per_config, static_cast<int>(val.size()));
  GridResult result =
      grid_search(spec, val, mlm, substitute, dl, target, n, root.child(0x700).seed());

  write_text_file(paths.grid_csv_file(), grid_csv(result));
  const GridRow& best = result.rows[static_cast<std::size_t>(result.best_index)];
  Json best_json{{"alpha", best.cfg.alpha},
                 {"beta", best.cfg.beta},
                 {"num_samples", best.cfg.num_samples},
                 {"temperature", best.cfg.temperature},
                 {"param_subset", best.cfg.param_subset},
                 {"num_iters", best.cfg.num_iters},
                 {"nad", best.metrics.nad}};
  write_text_file(paths.grid_best_file(), best_json.dump(2) + "\n");
  int aborted = 0;
  for (const GridRow& row : result.rows) aborted += row.aborted ? 1 : 0;
  log << "gridsearch: " << result.rows.size() << " configs (" << aborted
      << " aborted), best nad " << best.metrics.nad << " at alpha=" << best.cfg.alpha
      << " beta=" << best.cfg.beta << " m=" << best.cfg.num_samples
      << " tau=" << best.cfg.temperature << " subset=" << best.cfg.param_subset << "\n";
  write_manifest(paths, "gridsearch", cfg, {paths.grid_csv_file(), paths.grid_best_file()},
                 timer.seconds());
}

void cmd_report(const ExperimentConfig& cfg, const RunPaths& paths, bool force,
                std::ostream& log) {
  Timer timer;
  refuse_existing(paths.summary_file(), force, "report");
  std::vector<Json> reports, defenses;
  for (const std::string& name : attack_names()) {
    if (fs::exists(paths.report_file(name)))
      reports.push_back(Json::parse(read_text_file(paths.report_file(name))));
    if (fs::exists(paths.defense_file(name)))
      defenses.push_back(Json::parse(read_text_file(paths.defense_file(name))));
  }
  if (reports.empty()) throw UsageError("no attack reports in " + paths.dir + "; run attack first");

  std::ostringstream summary;
  summary << "attack,n,nad,mean_wer,mean_prob_diff,flip_rate,runtime_s\n";
  log << "attack            n     nad     wer     prob_diff  flip\n";
  for (const Json& r : reports) {
    summary << r["attack_name"].get<std::string>() << ',' << r["n"].get<int>() << ','
            << r["nad"].get<double>() << ',' << r["mean_wer"].get<double>() << ','
            << r["mean_prob_diff"].get<double>() << ',' << r["flip_rate"].get<double>() << ','
            << r["runtime_s"].get<double>() << '\n';
    log << std::left << std::setw(16) << r["attack_name"].get<std::string>() << "  "
        << std::setw(4) << r["n"].get<int>() << std::fixed << std::setprecision(4) << "  "
        << r["nad"].get<double>() << "  " << std::setprecision(2) << r["mean_wer"].get<double>()
        << "    " << std::setprecision(4) << r["mean_prob_diff"].get<double>() << "     "
        << r["flip_rate"].get<double>() << "\n";
  }
  write_text_file(paths.summary_file(), summary.str());
  std::vector<std::string> outputs{paths.summary_file()};

  if (!defenses.empty()) {
    std::ostringstream ds;
    ds << "attack,nad_before,nad_after,clean_accuracy_before,clean_accuracy_after,detector_auc\n";
    log << "\nattack            nad_before  nad_after  detector_auc\n";
    for (const Json& d : defenses) {
      ds << d["attack_name"].get<std::string>() << ',' << d["nad_before"].get<double>() << ','
         << d["nad_after"].get<double>() << ',' << d["clean_accuracy_before"].get<double>() << ','
         << d["clean_accuracy_after"].get<double>() << ',' << d["detector_auc"].get<double>()
         << '\n';
      log << std::left << std::setw(16) << d["attack_name"].get<std::string>() << "  "
          << std::fixed << std::setprecision(4) << d["nad_before"].get<double>() << "      "
          << d["nad_after"].get<double>() << "     " << d["detector_auc"].get<double>() << "\n";
    }
    write_text_file(paths.defense_summary_file(), ds.str());
    outputs.push_back(paths.defense_summary_file());
  }
  write_manifest(paths, "report", cfg, outputs, timer.seconds());
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"adversarial attacks and defenses for token-sequence classifiers"};
  app.require_subcommand(1);
  app.fallthrough(true);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed_override = 0;
  bool has_seed = false;
  bool force = false;
  bool smoke = false;
  app.add_option("--config", config_path, "experiment config JSON")->required();
  app.add_option("--out", out_dir, "run root directory (default $SEQADV_RUN_ROOT or ./runs)");
  auto* seed_opt = app.add_option("--seed", seed_override, "override the config seed");
  app.add_flag("--force", force, "redo a command whose outputs already exist");
  app.add_flag("--smoke", smoke, "tiny budgets (gridsearch: reduced subgrid)");

  std::string which, attack_name, defend_name;
  CLI::App* c_prepare = app.add_subcommand("prepare", "build vocabulary and data splits");
  CLI::App* c_train = app.add_subcommand("train", "train one model");
  c_train->add_option("which", which, "mlm|target|substitute|deeplev")->required();
  CLI::App* c_attack = app.add_subcommand("attack", "run one attack over the test split");
  c_attack->add_option("name", attack_name, "attack name")->required();
  CLI::App* c_defend = app.add_subcommand("defend", "run both defenses against saved records");
  c_defend->add_option("name", defend_name, "attack name")->required();
  CLI::App* c_grid = app.add_subcommand("gridsearch", "exhaustive hyperparameter search");
  CLI::App* c_report = app.add_subcommand("report", "summarize attack and defense results");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (seed_opt->count() > 0) {
      has_seed = true;
      cfg.seed = seed_override;
    }
    (void)has_seed;
    RunPaths paths = resolve_run_dir(out_dir, cfg);
    if (c_prepare->parsed()) cmd_prepare(cfg, paths, force, out);
    else if (c_train->parsed()) cmd_train(cfg, paths, which, force, out);
    else if (c_attack->parsed()) cmd_attack(cfg, paths, attack_name, force, out);
    else if (c_defend->parsed()) cmd_defend(cfg, paths, defend_name, force, out);
    else if (c_grid->parsed()) cmd_gridsearch(cfg, paths, smoke, force, out);
    else if (c_report->parsed()) cmd_report(cfg, paths, force, out);
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace seqadv
