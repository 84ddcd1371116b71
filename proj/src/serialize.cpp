#include "seqadv/serialize.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace seqadv {

namespace {

constexpr char kBlobMagic[8] = {'S', 'E', 'Q', 'A', 'D', 'V', 'P', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("parameter blob truncated");
  return v;
}

std::string manifest_path_for(const std::string& blob_path) { return blob_path + ".json"; }

Json require(const Json& j, const std::string& key, const std::string& what) {
  if (!j.contains(key))
    throw std::runtime_error(what + ": missing field '" + key + "'");
  return j.at(key);
}

}  // namespace

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << content;
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[1 << 14];
  while (is) {
    is.read(buf, sizeof buf);
    const std::streamsize got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void save_params(const std::string& path, const ParamList& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kBlobMagic, sizeof kBlobMagic);
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    put_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u32(os, static_cast<std::uint32_t>(p->value.rows()));
    put_u32(os, static_cast<std::uint32_t>(p->value.cols()));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(sizeof(double)) * p->value.size());
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

void load_params(const std::string& path, const ParamList& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[sizeof kBlobMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kBlobMagic, sizeof kBlobMagic) != 0)
    throw std::runtime_error("not a parameter blob: " + path);
  const std::uint32_t count = get_u32(is);
  if (count != params.size())
    throw std::runtime_error("parameter count mismatch in " + path + ": blob has " +
                             std::to_string(count) + ", model has " +
                             std::to_string(params.size()));
  for (Param* p : params) {
    const std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t rows = get_u32(is);
    const std::uint32_t cols = get_u32(is);
    if (!is) throw std::runtime_error("parameter blob truncated: " + path);
    if (name != p->name)
      throw std::runtime_error("parameter name mismatch in " + path + ": blob has '" + name +
                               "', model expects '" + p->name + "'");
    if (static_cast<Eigen::Index>(rows) != p->value.rows() ||
        static_cast<Eigen::Index>(cols) != p->value.cols())
      throw std::runtime_error("shape mismatch for '" + name + "' in " + path);
    is.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(sizeof(double)) * p->value.size());
    if (!is) throw std::runtime_error("parameter blob truncated: " + path);
  }
}

Json to_json(const MlmConfig& cfg) {
  return Json{{"vocab", cfg.vocab},     {"num_layers", cfg.num_layers},
              {"dim", cfg.dim},         {"num_heads", cfg.num_heads},
              {"ffn_dim", cfg.ffn_dim}, {"max_len", cfg.max_len}};
}

MlmConfig mlm_config_from_json(const Json& j) {
  MlmConfig cfg;
  cfg.vocab = require(j, "vocab", "mlm config").get<int>();
  cfg.num_layers = require(j, "num_layers", "mlm config").get<int>();
  cfg.dim = require(j, "dim", "mlm config").get<int>();
  cfg.num_heads = require(j, "num_heads", "mlm config").get<int>();
  cfg.ffn_dim = require(j, "ffn_dim", "mlm config").get<int>();
  cfg.max_len = require(j, "max_len", "mlm config").get<int>();
  return cfg;
}

Json to_json(const ClassifierConfig& cfg) {
  return Json{{"kind", kind_name(cfg.kind)},
              {"vocab", cfg.vocab},
              {"num_classes", cfg.num_classes},
              {"embed_dim", cfg.embed_dim},
              {"dropout", cfg.dropout},
              {"hidden", cfg.hidden},
              {"filter_sizes", cfg.filter_sizes},
              {"num_filters", cfg.num_filters}};
}

ClassifierConfig classifier_config_from_json(const Json& j) {
  ClassifierConfig cfg;
  cfg.kind = parse_kind(require(j, "kind", "classifier config").get<std::string>());
  cfg.vocab = require(j, "vocab", "classifier config").get<int>();
  cfg.num_classes = require(j, "num_classes", "classifier config").get<int>();
  cfg.embed_dim = require(j, "embed_dim", "classifier config").get<int>();
  cfg.dropout = require(j, "dropout", "classifier config").get<double>();
  cfg.hidden = require(j, "hidden", "classifier config").get<int>();
  cfg.filter_sizes = require(j, "filter_sizes", "classifier config").get<std::vector<int>>();
  cfg.num_filters = require(j, "num_filters", "classifier config").get<int>();
  return cfg;
}

Json to_json(const DeepLevConfig& cfg) {
  return Json{{"vocab", cfg.vocab},
              {"embed_dim", cfg.embed_dim},
              {"hidden", cfg.hidden},
              {"head_hidden", cfg.head_hidden}};
}

DeepLevConfig deeplev_config_from_json(const Json& j) {
  DeepLevConfig cfg;
  cfg.vocab = require(j, "vocab", "surrogate config").get<int>();
  cfg.embed_dim = require(j, "embed_dim", "surrogate config").get<int>();
  cfg.hidden = require(j, "hidden", "surrogate config").get<int>();
  cfg.head_hidden = require(j, "head_hidden", "surrogate config").get<int>();
  return cfg;
}

void save_checkpoint(const std::string& blob_path, const ParamList& params,
                     const CheckpointMeta& meta) {
  save_params(blob_path, params);
  Json manifest{{"model_kind", meta.model_kind},
                {"config", meta.config},
                {"vocab_hash", meta.vocab_hash},
                {"seed", meta.seed},
                {"metrics", meta.metrics},
                {"blob_hash", hex64(fnv1a_file(blob_path))}};
  write_text_file(manifest_path_for(blob_path), manifest.dump(2) + "\n");
}

CheckpointMeta load_checkpoint_meta(const std::string& blob_path) {
  const std::string text = read_text_file(manifest_path_for(blob_path));
  Json j = Json::parse(text);
  CheckpointMeta meta;
  meta.model_kind = require(j, "model_kind", "checkpoint manifest").get<std::string>();
  meta.config = require(j, "config", "checkpoint manifest");
  meta.vocab_hash = require(j, "vocab_hash", "checkpoint manifest").get<std::string>();
  meta.seed = require(j, "seed", "checkpoint manifest").get<std::uint64_t>();
  if (j.contains("metrics")) meta.metrics = j.at("metrics");
  return meta;
}

MlmModel load_mlm_checkpoint(const std::string& blob_path) {
  CheckpointMeta meta = load_checkpoint_meta(blob_path);
  if (meta.model_kind != "mlm")
    throw std::runtime_error(blob_path + " is a '" + meta.model_kind + "' checkpoint, not mlm");
  MlmModel model(mlm_config_from_json(meta.config), 0);
  load_params(blob_path, model.params());
  return model;
}

Classifier load_classifier_checkpoint(const std::string& blob_path) {
  CheckpointMeta meta = load_checkpoint_meta(blob_path);
  if (meta.model_kind != "classifier")
    throw std::runtime_error(blob_path + " is a '" + meta.model_kind +
                             "' checkpoint, not classifier");
  Classifier model(classifier_config_from_json(meta.config), 0);
  load_params(blob_path, model.params());
  return model;
}

DeepLevModel load_deeplev_checkpoint(const std::string& blob_path) {
  CheckpointMeta meta = load_checkpoint_meta(blob_path);
  if (meta.model_kind != "deeplev")
    throw std::runtime_error(blob_path + " is a '" + meta.model_kind +
                             "' checkpoint, not deeplev");
  DeepLevModel model(deeplev_config_from_json(meta.config), 0);
  load_params(blob_path, model.params());
  return model;
}

std::string history_csv(const History& history) {
  std::ostringstream os;
  os << "epoch,split,loss,accuracy\n";
  os << std::setprecision(10);
  for (const EpochStat& s : history)
    os << s.epoch << ',' << s.split << ',' << s.loss << ',' << s.accuracy << '\n';
  return os.str();
}

namespace {

Json record_to_json(const AttackRecord& rec, const Vocabulary& vocab) {
  Json j{{"attack_name", rec.attack_name},
         {"original", rec.original},
         {"original_tokens", vocab.decode(rec.original)},
         {"label", rec.label},
         {"chosen", rec.chosen},
         {"chosen_tokens", vocab.decode(rec.chosen)},
         {"wer", rec.wer},
         {"substitute_flipped", rec.substitute_flipped},
         {"target_flipped", rec.target_flipped},
         {"degenerate", rec.degenerate},
         {"skipped", rec.skipped},
         {"failure", rec.failure},
         {"seed", rec.seed}};
  Json cands = Json::array();
  for (const CandidateEntry& c : rec.candidates)
    cands.push_back(Json{{"iteration", c.iteration},
                         {"tokens", c.tokens},
                         {"substitute_score", c.substitute_score},
                         {"substitute_pred", c.substitute_pred}});
  j["candidates"] = std::move(cands);
  return j;
}

AttackRecord record_from_json(const Json& j, const Vocabulary& vocab) {
  AttackRecord rec;
  rec.attack_name = require(j, "attack_name", "attack record").get<std::string>();
  rec.original = require(j, "original", "attack record").get<TokenSeq>();
  rec.label = require(j, "label", "attack record").get<int>();
  rec.chosen = require(j, "chosen", "attack record").get<TokenSeq>();
  rec.wer = require(j, "wer", "attack record").get<int>();
  rec.substitute_flipped = require(j, "substitute_flipped", "attack record").get<bool>();
  rec.target_flipped = require(j, "target_flipped", "attack record").get<bool>();
  rec.degenerate = require(j, "degenerate", "attack record").get<bool>();
  rec.skipped = j.value("skipped", false);
  rec.failure = j.value("failure", std::string{});
  rec.seed = j.value("seed", std::uint64_t{0});
  for (const Json& c : j.value("candidates", Json::array())) {
    CandidateEntry e;
    e.iteration = require(c, "iteration", "candidate").get<int>();
    e.tokens = require(c, "tokens", "candidate").get<TokenSeq>();
    e.substitute_score = require(c, "substitute_score", "candidate").get<double>();
    e.substitute_pred = require(c, "substitute_pred", "candidate").get<int>();
    rec.candidates.push_back(std::move(e));
  }
  for (int id : rec.original)
    if (id < 0 || id >= vocab.size()) throw std::runtime_error("attack record: token id out of vocabulary");
  for (int id : rec.chosen)
    if (id < 0 || id >= vocab.size()) throw std::runtime_error("attack record: token id out of vocabulary");
  return rec;
}

}  // namespace

std::string records_jsonl(const std::vector<AttackRecord>& records, const Vocabulary& vocab) {
  std::ostringstream os;
  for (const AttackRecord& rec : records) os << record_to_json(rec, vocab).dump() << '\n';
  return os.str();
}

std::vector<AttackRecord> parse_records_jsonl(const std::string& text, const Vocabulary& vocab) {
  std::vector<AttackRecord> out;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(Json::parse(line), vocab));
    } catch (const std::exception& e) {
      throw std::runtime_error("records line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

Json to_json(const MetricsReport& m) {
  return Json{{"attack_name", m.attack_name},
              {"requested", m.requested},
              {"n", m.n},
              {"skipped", m.skipped},
              {"degenerate", m.degenerate},
              {"failures", m.failures},
              {"nad", m.nad},
              {"mean_wer", m.mean_wer},
              {"mean_prob_diff", m.mean_prob_diff},
              {"flip_rate", m.flip_rate},
              {"substitute_flip_rate", m.substitute_flip_rate},
              {"runtime_s", m.runtime_s}};
}

Json to_json(const DefenseReport& r) {
  return Json{{"attack_name", r.attack_name},
              {"nad_before", r.nad_before},
              {"nad_after", r.nad_after},
              {"clean_accuracy_before", r.clean_accuracy_before},
              {"clean_accuracy_after", r.clean_accuracy_after},
              {"detector_auc", r.detector_auc},
              {"n_adv_train", r.n_adv_train}};
}

}  // namespace seqadv
