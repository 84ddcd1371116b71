#include "seqadv/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace seqadv {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool label_changed(const AttackRecord& rec, Classifier& target) {
  return target.predict(rec.original) != target.predict(rec.chosen);
}

}  // namespace

double nad(const std::vector<AttackRecord>& records, Classifier& target) {
  if (records.empty()) throw std::invalid_argument("nad: empty record list");
  double sum = 0.0;
  for (const AttackRecord& rec : records) {
    const int wer = exact_wer(rec.original, rec.chosen);
    if (wer > 0 && label_changed(rec, target)) sum += 1.0 / wer;
  }
  return sum / static_cast<double>(records.size());
}

double mean_prob_diff(const std::vector<AttackRecord>& records, Classifier& target) {
  if (records.empty()) throw std::invalid_argument("mean_prob_diff: empty record list");
  double sum = 0.0;
  for (const AttackRecord& rec : records)
    sum += target.probs(rec.original)(rec.label) - target.probs(rec.chosen)(rec.label);
  return sum / static_cast<double>(records.size());
}

double mean_wer(const std::vector<AttackRecord>& records) {
  if (records.empty()) throw std::invalid_argument("mean_wer: empty record list");
  double sum = 0.0;
  for (const AttackRecord& rec : records) sum += exact_wer(rec.original, rec.chosen);
  return sum / static_cast<double>(records.size());
}

MetricsReport score_records(std::vector<AttackRecord>& records, Classifier& target,
                            const std::string& name) {
  MetricsReport m;
  m.attack_name = name;
  m.requested = static_cast<int>(records.size());
  double nad_sum = 0.0, wer_sum = 0.0, pd_sum = 0.0;
  int flips = 0, sub_flips = 0;
  for (AttackRecord& rec : records) {
    if (rec.skipped) {
      ++m.skipped;
      continue;
    }
    rec.target_flipped = label_changed(rec, target);
    const int wer = exact_wer(rec.original, rec.chosen);
    rec.wer = wer;
    ++m.n;
    if (rec.degenerate) ++m.degenerate;
    if (!rec.failure.empty()) ++m.failures;
    wer_sum += wer;
    pd_sum += target.probs(rec.original)(rec.label) - target.probs(rec.chosen)(rec.label);
    if (rec.target_flipped) {
      ++flips;
      if (wer > 0) nad_sum += 1.0 / wer;
    }
    if (rec.substitute_flipped) ++sub_flips;
  }
  if (m.n > 0) {
    m.nad = nad_sum / m.n;
    m.mean_wer = wer_sum / m.n;
    m.mean_prob_diff = pd_sum / m.n;
    m.flip_rate = static_cast<double>(flips) / m.n;
    m.substitute_flip_rate = static_cast<double>(sub_flips) / m.n;
  }
  return m;
}

EvalResult evaluate_attack(const AttackFn& attack_fn, const Dataset& ds_test, Classifier& target,
                           int n_examples, std::uint64_t seed, const std::string& name) {
  if (n_examples < 1) throw std::invalid_argument("evaluate_attack: need at least one example");
  if (n_examples > static_cast<int>(ds_test.examples.size()))
    throw std::invalid_argument("evaluate_attack: more examples requested than the split holds");
  const Dataset picked = stratified_take(ds_test, n_examples);
  Rng root(seed);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<AttackRecord> records;
  records.reserve(picked.examples.size());
  for (std::size_t i = 0; i < picked.examples.size(); ++i) {
    Rng child = root.child(i);
    const Example& ex = picked.examples[i];
    try {
      records.push_back(attack_fn(ex, child));
    } catch (const std::exception& e) {
      AttackRecord rec;
      rec.attack_name = name.empty() ? "attack" : name;
      rec.original = ex.tokens;
      rec.label = ex.label;
      rec.chosen = ex.tokens;
      rec.degenerate = true;
      rec.failure = e.what();
      rec.seed = child.seed();
      records.push_back(std::move(rec));
    }
  }
  std::string label = name;
  if (label.empty() && !records.empty()) label = records.front().attack_name;
  EvalResult out;
  out.metrics = score_records(records, target, label);
  out.metrics.runtime_s = seconds_since(t0);
  out.records = std::move(records);
  return out;
}

GridSpec GridSpec::full() {
  GridSpec g;
  g.alphas = {0.01, 0.05, 0.1, 0.5, 1.0};
  g.betas = {0.5, 1.0, 3.0, 5.0, 10.0};
  for (int m = 1; m <= 10; ++m) g.num_samples.push_back(m);
  for (int i = 0; i <= 10; ++i) g.temperatures.push_back(std::round((1.0 + 0.1 * i) * 10.0) / 10.0);
  g.subsets = {0, 1, 2, 3};
  return g;
}

GridSpec GridSpec::smoke() {
  GridSpec g;
  g.alphas = {0.05, 0.5};
  g.betas = {1.0};
  g.num_samples = {1, 2};
  g.temperatures = {1.5};
  g.subsets = {2};
  g.num_iters = 4;
  return g;
}

std::size_t GridSpec::size() const {
  return alphas.size() * betas.size() * num_samples.size() * temperatures.size() * subsets.size();
}

bool GridSpec::contains(const DilmaConfig& cfg) const {
  auto has_d = [](const std::vector<double>& v, double x) {
    return std::any_of(v.begin(), v.end(), [x](double e) { return std::abs(e - x) < 1e-9; });
  };
  auto has_i = [](const std::vector<int>& v, int x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  return has_d(alphas, cfg.alpha) && has_d(betas, cfg.beta) && has_i(num_samples, cfg.num_samples) &&
         has_d(temperatures, cfg.temperature) && has_i(subsets, cfg.param_subset);
}

std::vector<DilmaConfig> GridSpec::enumerate() const {
  std::vector<DilmaConfig> out;
  out.reserve(size());
  for (double a : alphas)
    for (double b : betas)
      for (int m : num_samples)
        for (double t : temperatures)
          for (int s : subsets) {
            DilmaConfig cfg;
            cfg.alpha = a;
            cfg.beta = b;
            cfg.num_samples = m;
            cfg.temperature = t;
            cfg.param_subset = s;
            cfg.num_iters = num_iters;
            cfg.sample_candidates = true;
            out.push_back(cfg);
          }
  return out;
}

const DilmaConfig& GridResult::best_config() const {
  if (best_index < 0 || best_index >= static_cast<int>(rows.size()))
    throw std::logic_error("grid result has no winning configuration");
  return rows[static_cast<std::size_t>(best_index)].cfg;
}

GridResult grid_search(const GridSpec& grid, const Dataset& ds_val, const MlmModel& mlm0,
                       Classifier& substitute, DeepLevModel& dl, Classifier& target,
                       int n_per_config, std::uint64_t seed) {
  const std::vector<DilmaConfig> configs = grid.enumerate();
  if (configs.empty()) throw std::invalid_argument("grid_search: empty grid");
  GridResult result;
  result.rows.reserve(configs.size());
  Rng root(seed);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const DilmaConfig& cfg = configs[i];
    GridRow row;
    row.cfg = cfg;
    AttackFn fn = [&](const Example& ex, Rng& rng) {
      return dilma_attack(ex.tokens, ex.label, mlm0, substitute, &dl, cfg, rng);
    };
    try {
      EvalResult ev = evaluate_attack(fn, ds_val, target, n_per_config, root.child(i).seed(),
                                      "dilma_sampling");
      row.metrics = ev.metrics;
      row.aborted = row.metrics.n > 0 && row.metrics.failures == row.metrics.n;
      if (row.metrics.n == 0) row.aborted = true;
    } catch (const std::exception& e) {
      row.aborted = true;
      row.metrics.attack_name = std::string("aborted: ") + e.what();
    }
    result.rows.push_back(std::move(row));
  }
  // Enumeration order is lexicographic, so strict improvement keeps the
  // smallest configuration on ties.
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    if (result.rows[i].aborted) continue;
    if (result.best_index < 0 ||
        result.rows[i].metrics.nad > result.rows[static_cast<std::size_t>(result.best_index)].metrics.nad)
      result.best_index = static_cast<int>(i);
  }
  if (result.best_index < 0) result.best_index = 0;  // every config aborted
  return result;
}

std::string grid_csv(const GridResult& result) {
  std::ostringstream os;
  os << "alpha,beta,num_samples,temperature,param_subset,nad,mean_wer,mean_prob_diff,flip_rate,"
        "runtime_s\n";
  os << std::setprecision(10);
  for (const GridRow& row : result.rows) {
    os << row.cfg.alpha << ',' << row.cfg.beta << ',' << row.cfg.num_samples << ','
       << row.cfg.temperature << ',' << row.cfg.param_subset << ',';
    if (row.aborted)
      os << "nan,nan,nan,nan,";
    else
      os << row.metrics.nad << ',' << row.metrics.mean_wer << ',' << row.metrics.mean_prob_diff
         << ',' << row.metrics.flip_rate << ',';
    os << row.metrics.runtime_s << '\n';
  }
  return os.str();
}

}  // namespace seqadv
