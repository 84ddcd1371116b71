#include "seqadv/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace seqadv {

namespace {

using nlohmann::json;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

Vocabulary Vocabulary::from_tokens(std::vector<std::string> content) {
  Vocabulary v;
  v.tokens = {"[PAD]", "[MASK]", "[UNK]"};
  for (auto& t : content) v.tokens.push_back(std::move(t));
  for (int i = 0; i < static_cast<int>(v.tokens.size()); ++i) {
    if (v.index.count(v.tokens[i]))
      throw std::invalid_argument("vocabulary: duplicate token '" + v.tokens[i] + "'");
    v.index[v.tokens[i]] = i;
  }
  return v;
}

int Vocabulary::id_of(const std::string& tok) const {
  auto it = index.find(tok);
  return it == index.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary: id out of range");
  return tokens[static_cast<std::size_t>(id)];
}

TokenSeq Vocabulary::encode(const std::vector<std::string>& toks, int max_len) const {
  TokenSeq out;
  out.reserve(toks.size());
  for (const auto& t : toks) {
    out.push_back(id_of(t));
    if (max_len > 0 && static_cast<int>(out.size()) >= max_len) break;
  }
  return out;
}

std::vector<std::string> Vocabulary::decode(const TokenSeq& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(token(id));
  return out;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : tokens) {
    h = fnv1a(h, t.data(), t.size());
    h = fnv1a(h, "\x1f", 1);
  }
  return h;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, int min_freq) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  if (min_freq < 1) throw std::invalid_argument("build_vocab: min_freq must be >= 1");
  std::unordered_map<std::string, long long> freq;
  for (const auto& seq : corpus)
    for (const auto& tok : seq) ++freq[tok];
  std::vector<std::pair<std::string, long long>> items;
  items.reserve(freq.size());
  for (auto& kv : freq)
    if (kv.second >= min_freq) items.emplace_back(kv.first, kv.second);
  auto rank = [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  };
  if (items.empty()) {
    // A dictionary without content tokens is unusable (nothing to mask or
    // sample), so the threshold never empties it: the best-ranked token stays.
    items.assign(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), rank);
    items.resize(1);
  } else {
    std::sort(items.begin(), items.end(), rank);
  }
  std::vector<std::string> content;
  content.reserve(items.size());
  for (auto& it : items) content.push_back(std::move(it.first));
  return Vocabulary::from_tokens(std::move(content));
}

void Dataset::validate(int vocab_size) const {
  if (num_classes < 2) throw std::invalid_argument("dataset: num_classes must be >= 2");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const Example& e = examples[i];
    if (e.tokens.empty())
      throw std::invalid_argument("dataset: empty sequence at index " + std::to_string(i));
    if (e.label < 0 || e.label >= num_classes)
      throw std::invalid_argument("dataset: label out of range at index " + std::to_string(i));
    for (int id : e.tokens)
      if (id < 0 || id >= vocab_size)
        throw std::invalid_argument("dataset: token id out of range at index " + std::to_string(i));
  }
}

std::vector<int> Dataset::class_counts() const {
  std::vector<int> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (const auto& e : examples) {
    if (e.label >= 0 && e.label < num_classes) ++counts[static_cast<std::size_t>(e.label)];
  }
  return counts;
}

int exact_wer(const TokenSeq& a, const TokenSeq& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0)
    throw std::invalid_argument("stratified_split: fraction must be in (0, 1)");
  if (ds.num_classes < 2) throw std::invalid_argument("stratified_split: num_classes must be >= 2");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    const int y = ds.examples[i].label;
    if (y < 0 || y >= ds.num_classes) throw std::invalid_argument("stratified_split: label out of range");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  Dataset first, second;
  first.num_classes = second.num_classes = ds.num_classes;
  std::vector<std::size_t> pick_first, pick_second;
  Rng rng(seed);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idxs = by_class[c];
    if (idxs.size() < 2)
      throw std::invalid_argument("stratified_split: class " + std::to_string(c) +
                                  " has fewer than 2 examples");
    Rng crng = rng.child(c);
    for (std::size_t i = idxs.size(); i > 1; --i)
      std::swap(idxs[i - 1], idxs[static_cast<std::size_t>(crng.uniform_int(static_cast<int>(i)))]);
    auto take = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(idxs.size())));
    take = std::min(std::max<std::size_t>(take, 1), idxs.size() - 1);
    pick_first.insert(pick_first.end(), idxs.begin(), idxs.begin() + static_cast<std::ptrdiff_t>(take));
    pick_second.insert(pick_second.end(), idxs.begin() + static_cast<std::ptrdiff_t>(take), idxs.end());
  }
  std::sort(pick_first.begin(), pick_first.end());
  std::sort(pick_second.begin(), pick_second.end());
  for (auto i : pick_first) first.examples.push_back(ds.examples[i]);
  for (auto i : pick_second) second.examples.push_back(ds.examples[i]);
  return {std::move(first), std::move(second)};
}

Dataset stratified_take(const Dataset& ds, int n) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.split_tag = ds.split_tag;
  if (n <= 0) return out;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(std::max(ds.num_classes, 1)));
  for (std::size_t i = 0; i < ds.examples.size(); ++i)
    by_class[static_cast<std::size_t>(ds.examples[i].label)].push_back(i);
  std::vector<std::size_t> cursor(by_class.size(), 0);
  std::vector<std::size_t> order;
  bool progress = true;
  while (static_cast<int>(order.size()) < n && progress) {
    progress = false;
    for (std::size_t c = 0; c < by_class.size() && static_cast<int>(order.size()) < n; ++c) {
      if (cursor[c] < by_class[c].size()) {
        order.push_back(by_class[c][cursor[c]++]);
        progress = true;
      }
    }
  }
  std::sort(order.begin(), order.end());
  for (auto i : order) out.examples.push_back(ds.examples[i]);
  return out;
}

int SyntheticSpec::markers_per_class() const {
  return std::max(1, vocab_size / (2 * num_classes));
}

int SyntheticSpec::background_count() const {
  return vocab_size - num_classes * markers_per_class();
}

void SyntheticSpec::check() const {
  if (num_classes < 2) throw std::invalid_argument("synthetic: num_classes must be >= 2");
  if (vocab_size <= num_classes)
    throw std::invalid_argument("synthetic: vocab_size must exceed num_classes");
  if (min_len < 1 || max_len < min_len)
    throw std::invalid_argument("synthetic: invalid sequence length range");
  if (signal_strength < 0.0 || signal_strength > 1.0)
    throw std::invalid_argument("synthetic: signal_strength must be in [0, 1]");
  if (background_count() < 1)
    throw std::invalid_argument("synthetic: no background tokens left for this configuration");
}

Vocabulary SyntheticSpec::vocabulary() const {
  check();
  std::vector<std::string> content;
  const int mpc = markers_per_class();
  for (int c = 0; c < num_classes; ++c)
    for (int j = 0; j < mpc; ++j)
      content.push_back("c" + std::to_string(c) + "m" + std::to_string(j));
  for (int j = 0; j < background_count(); ++j) content.push_back("bg" + std::to_string(j));
  return Vocabulary::from_tokens(std::move(content));
}

bool SyntheticSpec::is_marker(int id, int cls) const { return marker_class(id) == cls; }

int SyntheticSpec::marker_class(int id) const {
  const int base = id - Vocabulary::kSpecialCount;
  if (base < 0) return -1;
  const int mpc = markers_per_class();
  if (base >= num_classes * mpc) return -1;
  return base / mpc;
}

Dataset SyntheticSpec::generate(int num_examples, std::uint64_t seed, std::string split_tag) const {
  check();
  if (num_examples < 1) throw std::invalid_argument("synthetic: num_examples must be >= 1");
  const int mpc = markers_per_class();
  const int bg = background_count();
  const int marker_base = Vocabulary::kSpecialCount;
  const int bg_base = marker_base + num_classes * mpc;
  Dataset ds;
  ds.num_classes = num_classes;
  ds.split_tag = std::move(split_tag);
  ds.examples.reserve(static_cast<std::size_t>(num_examples));
  Rng rng(seed);
  for (int i = 0; i < num_examples; ++i) {
    Example e;
    e.label = rng.uniform_int(num_classes);
    const int len = min_len + rng.uniform_int(max_len - min_len + 1);
    e.tokens.reserve(static_cast<std::size_t>(len));
    for (int p = 0; p < len; ++p) {
      if (rng.bernoulli(signal_strength)) {
        e.tokens.push_back(marker_base + e.label * mpc + rng.uniform_int(mpc));
      } else {
        e.tokens.push_back(bg_base + (p % bg));
      }
    }
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

Dataset synth_generate(int num_classes, int num_examples, int min_len, int max_len, int vocab_size,
                       double signal_strength, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = num_classes;
  spec.vocab_size = vocab_size;
  spec.min_len = min_len;
  spec.max_len = max_len;
  spec.signal_strength = signal_strength;
  return spec.generate(num_examples, seed);
}

DataFormat parse_format(const std::string& name) {
  if (name == "jsonl") return DataFormat::kJsonl;
  if (name == "tsv") return DataFormat::kTsv;
  throw std::invalid_argument("unknown dataset format '" + name + "' (expected jsonl or tsv)");
}

RawDataset load_raw_dataset(const std::string& path, DataFormat fmt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  RawDataset raw;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      if (fmt == DataFormat::kJsonl) {
        json j = json::parse(line);
        if (!j.contains("tokens") || !j["tokens"].is_array())
          throw std::runtime_error("missing 'tokens' array");
        if (!j.contains("label") || !j["label"].is_number_integer())
          throw std::runtime_error("missing integer 'label'");
        std::vector<std::string> toks;
        for (const auto& t : j["tokens"]) {
          if (!t.is_string()) throw std::runtime_error("'tokens' entries must be strings");
          toks.push_back(t.get<std::string>());
        }
        raw.sequences.push_back(std::move(toks));
        raw.labels.push_back(j["label"].get<int>());
      } else {
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("missing tab separator");
        const int label = std::stoi(line.substr(0, tab));
        std::istringstream ss(line.substr(tab + 1));
        std::vector<std::string> toks;
        std::string tok;
        while (ss >> tok) toks.push_back(tok);
        raw.sequences.push_back(std::move(toks));
        raw.labels.push_back(label);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
  }
  if (raw.sequences.empty()) throw std::runtime_error("dataset file has no records: " + path);
  return raw;
}

Dataset encode_dataset(const RawDataset& raw, const Vocabulary& vocab, int max_len) {
  Dataset ds;
  int max_label = 0;
  for (int l : raw.labels) max_label = std::max(max_label, l);
  ds.num_classes = max_label + 1;
  for (std::size_t i = 0; i < raw.sequences.size(); ++i) {
    Example e;
    e.tokens = vocab.encode(raw.sequences[i], max_len);
    e.label = raw.labels[i];
    if (e.label < 0)
      throw std::runtime_error("dataset record " + std::to_string(i + 1) + ": negative label");
    if (e.tokens.empty())
      throw std::runtime_error("dataset record " + std::to_string(i + 1) + ": empty sequence");
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

Dataset load_dataset(const std::string& path, DataFormat fmt, const Vocabulary& vocab, int max_len) {
  return encode_dataset(load_raw_dataset(path, fmt), vocab, max_len);
}

void save_dataset(const Dataset& ds, const Vocabulary& vocab, const std::string& path, DataFormat fmt) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  for (const auto& e : ds.examples) {
    if (fmt == DataFormat::kJsonl) {
      json j;
      j["tokens"] = vocab.decode(e.tokens);
      j["label"] = e.label;
      out << j.dump() << '\n';
    } else {
      out << e.label << '\t';
      const auto toks = vocab.decode(e.tokens);
      for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out << ' ';
        out << toks[i];
      }
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
  json j;
  j["tokens"] = vocab.tokens;
  j["pad_id"] = Vocabulary::kPad;
  j["mask_id"] = Vocabulary::kMask;
  j["unk_id"] = Vocabulary::kUnk;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocab file: " + path);
  out << j.dump(2) << '\n';
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocab file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": malformed vocab file: " + e.what());
  }
  if (!j.contains("tokens") || !j["tokens"].is_array())
    throw std::runtime_error(path + ": vocab file missing 'tokens' array");
  auto toks = j["tokens"].get<std::vector<std::string>>();
  if (toks.size() < Vocabulary::kSpecialCount || toks[0] != "[PAD]" || toks[1] != "[MASK]" ||
      toks[2] != "[UNK]")
    throw std::runtime_error(path + ": vocab file must start with [PAD], [MASK], [UNK]");
  return Vocabulary::from_tokens(
      std::vector<std::string>(toks.begin() + Vocabulary::kSpecialCount, toks.end()));
}

}  // namespace seqadv
