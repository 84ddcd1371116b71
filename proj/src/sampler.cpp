#include "seqadv/sampler.hpp"

#include <cmath>
#include <stdexcept>

namespace seqadv {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
}

Mat onehot_rows(const Mat& soft) {
  Mat hard = Mat::Zero(soft.rows(), soft.cols());
  for (Eigen::Index r = 0; r < soft.rows(); ++r) hard(r, argmax_row(soft.row(r))) = 1.0;
  return hard;
}

}  // namespace

int argmax_row(const Eigen::RowVectorXd& row) {
  int best = 0;
  for (int j = 1; j < row.size(); ++j)
    if (row(j) > row(best)) best = j;
  return best;
}

Eigen::VectorXd temperature_softmax(const Eigen::VectorXd& logits, double tau) {
  check_tau(tau);
  if (logits.size() == 0) throw std::invalid_argument("temperature_softmax: empty logits");
  const double m = logits.maxCoeff();
  Eigen::ArrayXd e = ((logits.array() - m) / tau).exp();
  return (e / e.sum()).matrix();
}

Mat temperature_softmax_rows(const Mat& logits, double tau) {
  check_tau(tau);
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    out.row(r) = temperature_softmax(logits.row(r).transpose(), tau).transpose();
  return out;
}

Mat gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat g(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) g(r, c) = rng.gumbel();
  return g;
}

Mat special_mask_row(Eigen::Index cols, bool forbid_special) {
  Mat m = Mat::Zero(1, cols);
  if (forbid_special)
    for (int j = 0; j < Vocabulary::kSpecialCount && j < cols; ++j) m(0, j) = kSpecialLogitPenalty;
  return m;
}

StSample st_gumbel_sample_with_noise(const Mat& logits, const SamplerConfig& cfg, const Mat& noise) {
  check_tau(cfg.temperature);
  if (noise.rows() != logits.rows() || noise.cols() != logits.cols())
    throw std::invalid_argument("st_gumbel_sample: noise shape mismatch");
  Mat masked = logits;
  if (cfg.forbid_special)
    masked.leftCols(std::min<Eigen::Index>(Vocabulary::kSpecialCount, masked.cols())).array() +=
        kSpecialLogitPenalty;
  StSample s;
  s.soft = temperature_softmax_rows(masked + noise, cfg.temperature);
  s.hard = onehot_rows(s.soft);
  return s;
}

StSample st_gumbel_sample(const Mat& logits, const SamplerConfig& cfg, Rng& rng) {
  return st_gumbel_sample_with_noise(logits, cfg, gumbel_noise(logits.rows(), logits.cols(), rng));
}

std::pair<ad::Var, ad::Var> st_gumbel_sample_var(const ad::Var& logits, const SamplerConfig& cfg,
                                                 Rng& rng) {
  check_tau(cfg.temperature);
  ad::Tape& tape = *logits.tape();
  Mat offset = gumbel_noise(logits.rows(), logits.cols(), rng);
  if (cfg.forbid_special)
    offset.leftCols(std::min<Eigen::Index>(Vocabulary::kSpecialCount, offset.cols())).array() +=
        kSpecialLogitPenalty;
  ad::Var noisy = ad::add_const(logits, offset);
  ad::Var soft = ad::softmax_rows(ad::scale(noisy, 1.0 / cfg.temperature));
  ad::Var hard = ad::straight_through(soft, onehot_rows(soft.val()));
  return {hard, soft};
}

TokenSeq sample_tempered(const Mat& logits, const SamplerConfig& cfg, Rng& rng) {
  check_tau(cfg.temperature);
  TokenSeq out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    // Gumbel-max over p/tau draws exactly from the tempered distribution.
    Eigen::RowVectorXd keys = logits.row(r) / cfg.temperature;
    if (cfg.forbid_special)
      for (int j = 0; j < Vocabulary::kSpecialCount && j < keys.size(); ++j)
        keys(j) += kSpecialLogitPenalty;
    for (int j = 0; j < keys.size(); ++j) keys(j) += rng.gumbel();
    out[static_cast<std::size_t>(r)] = argmax_row(keys);
  }
  return out;
}

TokenSeq argmax_decode(const Mat& logits, bool forbid_special) {
  TokenSeq out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::RowVectorXd row = logits.row(r);
    if (forbid_special)
      for (int j = 0; j < Vocabulary::kSpecialCount && j < row.size(); ++j)
        row(j) += kSpecialLogitPenalty;
    out[static_cast<std::size_t>(r)] = argmax_row(row);
  }
  return out;
}

}  // namespace seqadv
