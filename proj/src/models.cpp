#include "seqadv/models.hpp"

#include <stdexcept>

namespace seqadv {

namespace {

void append(ParamList& dst, const ParamList& src) { dst.insert(dst.end(), src.begin(), src.end()); }

std::vector<int> position_ids(int batch, int seq_len) {
  std::vector<int> ids(static_cast<std::size_t>(batch) * seq_len);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < seq_len; ++t) ids[static_cast<std::size_t>(b) * seq_len + t] = t;
  return ids;
}

}  // namespace

// ---- MlmModel ----

ParamList MlmModel::Layer::params() {
  return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln1_g, &ln1_b,
          &w1, &b1, &w2, &b2, &ln2_g, &ln2_b};
}

MlmModel::MlmModel(MlmConfig c, std::uint64_t seed) : cfg(c) {
  if (cfg.vocab < Vocabulary::kSpecialCount + 1)
    throw std::invalid_argument("mlm: vocabulary too small");
  if (cfg.dim % cfg.num_heads != 0)
    throw std::invalid_argument("mlm: dim must be divisible by num_heads");
  Rng rng(seed);
  const double s = 0.02;
  tok_emb = Param("mlm.tok_emb", init::normal(cfg.vocab, cfg.dim, s, rng));
  pos_emb = Param("mlm.pos_emb", init::normal(cfg.max_len, cfg.dim, s, rng));
  ln_emb_g = Param("mlm.ln_emb.g", init::ones(1, cfg.dim));
  ln_emb_b = Param("mlm.ln_emb.b", init::zeros(1, cfg.dim));
  layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (int l = 0; l < cfg.num_layers; ++l) {
    Layer& L = layers[static_cast<std::size_t>(l)];
    const std::string p = "mlm.layer" + std::to_string(l);
    L.wq = Param(p + ".wq", init::normal(cfg.dim, cfg.dim, s, rng));
    L.bq = Param(p + ".bq", init::zeros(1, cfg.dim));
    L.wk = Param(p + ".wk", init::normal(cfg.dim, cfg.dim, s, rng));
    L.bk = Param(p + ".bk", init::zeros(1, cfg.dim));
    L.wv = Param(p + ".wv", init::normal(cfg.dim, cfg.dim, s, rng));
    L.bv = Param(p + ".bv", init::zeros(1, cfg.dim));
    L.wo = Param(p + ".wo", init::normal(cfg.dim, cfg.dim, s, rng));
    L.bo = Param(p + ".bo", init::zeros(1, cfg.dim));
    L.ln1_g = Param(p + ".ln1.g", init::ones(1, cfg.dim));
    L.ln1_b = Param(p + ".ln1.b", init::zeros(1, cfg.dim));
    L.w1 = Param(p + ".w1", init::normal(cfg.dim, cfg.ffn_dim, s, rng));
    L.b1 = Param(p + ".b1", init::zeros(1, cfg.ffn_dim));
    L.w2 = Param(p + ".w2", init::normal(cfg.ffn_dim, cfg.dim, s, rng));
    L.b2 = Param(p + ".b2", init::zeros(1, cfg.dim));
    L.ln2_g = Param(p + ".ln2.g", init::ones(1, cfg.dim));
    L.ln2_b = Param(p + ".ln2.b", init::zeros(1, cfg.dim));
  }
  out_w = Param("mlm.out_w", init::normal(cfg.dim, cfg.vocab, s, rng));
  out_b = Param("mlm.out_b", init::zeros(1, cfg.vocab));
}

ParamList MlmModel::params() {
  ParamList out{&tok_emb, &pos_emb, &ln_emb_g, &ln_emb_b};
  for (auto& L : layers) append(out, L.params());
  out.push_back(&out_w);
  out.push_back(&out_b);
  return out;
}

ParamList MlmModel::subset_params(int subset) {
  if (subset < 0 || subset > 3) throw std::invalid_argument("mlm: parameter subset must be in [0, 3]");
  if (subset == 0) return params();
  ParamList out{&out_w, &out_b};
  const int n = static_cast<int>(layers.size());
  if (subset >= 2 && n >= 1) append(out, layers[static_cast<std::size_t>(n - 1)].params());
  if (subset >= 3 && n >= 2) append(out, layers[static_cast<std::size_t>(n - 2)].params());
  return out;
}

ad::Var MlmModel::forward(ad::Tape& tape, const std::vector<int>& flat_ids, int batch, int seq_len) {
  if (seq_len > cfg.max_len)
    throw std::invalid_argument("mlm: sequence length " + std::to_string(seq_len) +
                                " exceeds max_len " + std::to_string(cfg.max_len));
  if (flat_ids.size() != static_cast<std::size_t>(batch) * seq_len)
    throw std::invalid_argument("mlm: flat_ids size mismatch");
  ad::Var x = ad::add(ad::gather_rows(tape.leaf(tok_emb), flat_ids),
                      ad::gather_rows(tape.leaf(pos_emb), position_ids(batch, seq_len)));
  x = ad::layer_norm(x, tape.leaf(ln_emb_g), tape.leaf(ln_emb_b));
  for (auto& L : layers) {
    ad::Var q = ad::add_rowvec(ad::matmul(x, tape.leaf(L.wq)), tape.leaf(L.bq));
    ad::Var k = ad::add_rowvec(ad::matmul(x, tape.leaf(L.wk)), tape.leaf(L.bk));
    ad::Var v = ad::add_rowvec(ad::matmul(x, tape.leaf(L.wv)), tape.leaf(L.bv));
    ad::Var attn = ad::self_attention(q, k, v, cfg.num_heads, seq_len);
    ad::Var ao = ad::add_rowvec(ad::matmul(attn, tape.leaf(L.wo)), tape.leaf(L.bo));
    x = ad::layer_norm(ad::add(x, ao), tape.leaf(L.ln1_g), tape.leaf(L.ln1_b));
    ad::Var f = ad::relu(ad::add_rowvec(ad::matmul(x, tape.leaf(L.w1)), tape.leaf(L.b1)));
    ad::Var f2 = ad::add_rowvec(ad::matmul(f, tape.leaf(L.w2)), tape.leaf(L.b2));
    x = ad::layer_norm(ad::add(x, f2), tape.leaf(L.ln2_g), tape.leaf(L.ln2_b));
  }
  return ad::add_rowvec(ad::matmul(x, tape.leaf(out_w)), tape.leaf(out_b));
}

Mat MlmModel::logits(const TokenSeq& x) {
  ad::Tape tape;
  return forward(tape, x, 1, static_cast<int>(x.size())).val();
}

// ---- Classifier ----

std::string kind_name(ClassifierKind k) { return k == ClassifierKind::kGru ? "gru" : "cnn"; }

ClassifierKind parse_kind(const std::string& name) {
  if (name == "gru") return ClassifierKind::kGru;
  if (name == "cnn") return ClassifierKind::kCnn;
  throw std::invalid_argument("unknown classifier kind '" + name + "' (expected gru or cnn)");
}

Classifier::Classifier(ClassifierConfig c, std::uint64_t seed) : cfg(c) {
  if (cfg.vocab < Vocabulary::kSpecialCount + 1)
    throw std::invalid_argument("classifier: vocabulary too small");
  if (cfg.num_classes < 2) throw std::invalid_argument("classifier: num_classes must be >= 2");
  Rng rng(seed);
  emb = Param("clf.emb", init::normal(cfg.vocab, cfg.embed_dim, 0.1, rng));
  if (cfg.kind == ClassifierKind::kGru) {
    gru_fwd.init("clf.gru_fwd", cfg.embed_dim, cfg.hidden, rng);
    gru_bwd.init("clf.gru_bwd", cfg.embed_dim, cfg.hidden, rng);
    fc_w = Param("clf.fc_w", init::xavier(2 * cfg.hidden, cfg.num_classes, rng));
    fc_b = Param("clf.fc_b", init::zeros(1, cfg.num_classes));
  } else {
    if (cfg.filter_sizes.empty()) throw std::invalid_argument("classifier: no filter sizes");
    for (std::size_t i = 0; i < cfg.filter_sizes.size(); ++i) {
      const int k = cfg.filter_sizes[i];
      if (k < 1) throw std::invalid_argument("classifier: filter size must be >= 1");
      conv_w.emplace_back("clf.conv" + std::to_string(k) + ".w",
                          init::xavier(k * cfg.embed_dim, cfg.num_filters, rng));
      conv_b.emplace_back("clf.conv" + std::to_string(k) + ".b", init::zeros(1, cfg.num_filters));
    }
    const int feat = static_cast<int>(cfg.filter_sizes.size()) * cfg.num_filters;
    fc_w = Param("clf.fc_w", init::xavier(feat, cfg.num_classes, rng));
    fc_b = Param("clf.fc_b", init::zeros(1, cfg.num_classes));
  }
}

ParamList Classifier::params() {
  ParamList out{&emb};
  if (cfg.kind == ClassifierKind::kGru) {
    append(out, gru_fwd.params());
    append(out, gru_bwd.params());
  } else {
    for (auto& p : conv_w) out.push_back(&p);
    for (auto& p : conv_b) out.push_back(&p);
  }
  out.push_back(&fc_w);
  out.push_back(&fc_b);
  return out;
}

namespace {

// Shared tail: feature rows (batch x F) -> optional dropout -> linear head.
ad::Var classifier_head(ad::Tape& tape, Classifier& m, ad::Var feat, Rng* dropout_rng) {
  if (dropout_rng != nullptr && m.cfg.dropout > 0.0)
    feat = ad::mul_const(feat, dropout_mask(feat.rows(), feat.cols(), m.cfg.dropout, *dropout_rng));
  return ad::add_rowvec(ad::matmul(feat, tape.leaf(m.fc_w)), tape.leaf(m.fc_b));
}

ad::Var classifier_features(ad::Tape& tape, Classifier& m, const ad::Var& x_emb, int batch,
                            int seq_len) {
  if (m.cfg.kind == ClassifierKind::kGru) {
    ad::Var hf = gru_run(tape, m.gru_fwd, x_emb, batch, seq_len, false);
    ad::Var hb = gru_run(tape, m.gru_bwd, x_emb, batch, seq_len, true);
    ad::Var h = ad::concat_cols({hf, hb});
    std::vector<double> mask(static_cast<std::size_t>(batch) * seq_len, 1.0);
    return ad::rowgroup_mean(h, seq_len, mask);
  }
  std::vector<ad::Var> pooled;
  for (std::size_t i = 0; i < m.cfg.filter_sizes.size(); ++i) {
    const int k = m.cfg.filter_sizes[i];
    ad::Var windows = ad::im2col_seq(x_emb, batch, seq_len, k);
    ad::Var conv = ad::relu(
        ad::add_rowvec(ad::matmul(windows, tape.leaf(m.conv_w[i])), tape.leaf(m.conv_b[i])));
    const int w = static_cast<int>(conv.rows()) / batch;
    pooled.push_back(ad::rowgroup_max(conv, w));
  }
  return pooled.size() == 1 ? pooled[0] : ad::concat_cols(pooled);
}

}  // namespace

ad::Var Classifier::logits_var(ad::Tape& tape, const std::vector<int>& flat_ids, int batch,
                               int seq_len, Rng* dropout_rng) {
  if (flat_ids.size() != static_cast<std::size_t>(batch) * seq_len)
    throw std::invalid_argument("classifier: flat_ids size mismatch");
  ad::Var x = ad::gather_rows(tape.leaf(emb), flat_ids);
  return classifier_head(tape, *this, classifier_features(tape, *this, x, batch, seq_len),
                         dropout_rng);
}

ad::Var Classifier::logits_from_soft(ad::Tape& tape, const ad::Var& soft) {
  if (soft.cols() != cfg.vocab) throw std::invalid_argument("classifier: soft input width mismatch");
  ad::Var x = ad::matmul(soft, tape.leaf(emb));
  return classifier_head(tape, *this,
                         classifier_features(tape, *this, x, 1, static_cast<int>(soft.rows())),
                         nullptr);
}

ad::Var Classifier::logits_from_emb(ad::Tape& tape, const ad::Var& emb_rows) {
  if (emb_rows.cols() != cfg.embed_dim)
    throw std::invalid_argument("classifier: embedding input width mismatch");
  return classifier_head(
      tape, *this, classifier_features(tape, *this, emb_rows, 1, static_cast<int>(emb_rows.rows())),
      nullptr);
}

Eigen::VectorXd Classifier::logits_of(const TokenSeq& x) {
  if (x.empty()) throw std::invalid_argument("classifier: empty sequence");
  ad::Tape tape;
  return logits_var(tape, x, 1, static_cast<int>(x.size())).val().row(0).transpose();
}

Eigen::VectorXd Classifier::probs(const TokenSeq& x) {
  Eigen::VectorXd z = logits_of(x);
  const double m = z.maxCoeff();
  Eigen::ArrayXd e = (z.array() - m).exp();
  return (e / e.sum()).matrix();
}

int Classifier::predict(const TokenSeq& x) {
  Eigen::VectorXd z = logits_of(x);
  int best = 0;
  for (int i = 1; i < z.size(); ++i)
    if (z(i) > z(best)) best = i;
  return best;
}

// ---- DeepLevModel ----

DeepLevModel::DeepLevModel(DeepLevConfig c, std::uint64_t seed) : cfg(c) {
  if (cfg.vocab < Vocabulary::kSpecialCount + 1)
    throw std::invalid_argument("deeplev: vocabulary too small");
  Rng rng(seed);
  emb = Param("dl.emb", init::normal(cfg.vocab, cfg.embed_dim, 0.1, rng));
  gru.init("dl.gru", cfg.embed_dim, cfg.hidden, rng);
  head_w1 = Param("dl.head_w1", init::xavier(3 * cfg.hidden, cfg.head_hidden, rng));
  head_b1 = Param("dl.head_b1", init::zeros(1, cfg.head_hidden));
  head_w2 = Param("dl.head_w2", init::xavier(cfg.head_hidden, 1, rng));
  head_b2 = Param("dl.head_b2", init::zeros(1, 1));
}

ParamList DeepLevModel::params() {
  ParamList out{&emb};
  append(out, gru.params());
  out.push_back(&head_w1);
  out.push_back(&head_b1);
  out.push_back(&head_w2);
  out.push_back(&head_b2);
  return out;
}

ad::Var DeepLevModel::encode(ad::Tape& tape, const std::vector<int>& flat_ids, int batch,
                             int seq_len, const std::vector<double>& mask) {
  ad::Var x = ad::gather_rows(tape.leaf(emb), flat_ids);
  ad::Var h = gru_run(tape, gru, x, batch, seq_len, false);
  return ad::rowgroup_mean(h, seq_len, mask);
}

ad::Var DeepLevModel::encode_soft(ad::Tape& tape, const ad::Var& soft) {
  if (soft.cols() != cfg.vocab) throw std::invalid_argument("deeplev: soft input width mismatch");
  ad::Var x = ad::matmul(soft, tape.leaf(emb));
  ad::Var h = gru_run(tape, gru, x, 1, static_cast<int>(soft.rows()), false);
  std::vector<double> mask(static_cast<std::size_t>(soft.rows()), 1.0);
  return ad::rowgroup_mean(h, static_cast<int>(soft.rows()), mask);
}

ad::Var DeepLevModel::score_from_repr(ad::Tape& tape, const ad::Var& za, const ad::Var& zb) {
  ad::Var diff = ad::abs_op(ad::sub(za, zb));
  auto head = [&](const ad::Var& a, const ad::Var& b) {
    ad::Var h = ad::relu(ad::add_rowvec(ad::matmul(ad::concat_cols({a, b, diff}), tape.leaf(head_w1)),
                                        tape.leaf(head_b1)));
    return ad::add_rowvec(ad::matmul(h, tape.leaf(head_w2)), tape.leaf(head_b2));
  };
  // Symmetrized: the score of (a, b) and (b, a) is averaged.
  return ad::scale(ad::add(head(za, zb), head(zb, za)), 0.5);
}

ad::Var DeepLevModel::score_var(ad::Tape& tape, const std::optional<ad::Var>& soft_a,
                                const TokenSeq* a, const TokenSeq& b) {
  ad::Var za;
  if (soft_a.has_value()) {
    za = encode_soft(tape, *soft_a);
  } else {
    if (a == nullptr || a->empty()) throw std::invalid_argument("deeplev: empty first sequence");
    std::vector<double> mask(a->size(), 1.0);
    za = encode(tape, *a, 1, static_cast<int>(a->size()), mask);
  }
  if (b.empty()) throw std::invalid_argument("deeplev: empty second sequence");
  std::vector<double> mask_b(b.size(), 1.0);
  ad::Var zb = encode(tape, b, 1, static_cast<int>(b.size()), mask_b);
  return score_from_repr(tape, za, zb);
}

double DeepLevModel::score(const TokenSeq& a, const TokenSeq& b) {
  ad::Tape tape;
  return score_var(tape, std::nullopt, &a, b).val()(0, 0);
}

}  // namespace seqadv
