#pragma once

#include <utility>

#include "seqadv/autodiff.hpp"
#include "seqadv/corpus.hpp"
#include "seqadv/rng.hpp"

namespace seqadv {

struct SamplerConfig {
  double temperature = 1.0;
  bool forbid_special = true;
};

// Tempered softmax: q_j = exp(p_j / tau) / sum_k exp(p_k / tau), computed with
// max subtraction. tau must be positive; tau -> 0+ approaches one-hot argmax.
Eigen::VectorXd temperature_softmax(const Eigen::VectorXd& logits, double tau);
Mat temperature_softmax_rows(const Mat& logits, double tau);

Mat gumbel_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Large negative offset applied to service-token columns so sampling and
// decoding renormalize over content tokens only.
constexpr double kSpecialLogitPenalty = -1e30;
Mat special_mask_row(Eigen::Index cols, bool forbid_special);

struct StSample {
  Mat hard;  // one-hot rows
  Mat soft;  // tempered softmax of noisy logits
};

// Straight-through Gumbel sample from per-row logits. Forward: one-hot at the
// argmax of the soft sample; backward (graph overload): identity into soft.
StSample st_gumbel_sample(const Mat& logits, const SamplerConfig& cfg, Rng& rng);
StSample st_gumbel_sample_with_noise(const Mat& logits, const SamplerConfig& cfg, const Mat& noise);

// Graph version used inside attack losses. Returns (hard straight-through
// var, soft var).
std::pair<ad::Var, ad::Var> st_gumbel_sample_var(const ad::Var& logits, const SamplerConfig& cfg,
                                                 Rng& rng);

// Row-wise draw from the tempered categorical distribution q = softmax(p/tau).
TokenSeq sample_tempered(const Mat& logits, const SamplerConfig& cfg, Rng& rng);

// Deterministic decode: per-row argmax, ties resolved to the lowest id.
TokenSeq argmax_decode(const Mat& logits, bool forbid_special = true);

int argmax_row(const Eigen::RowVectorXd& row);

}  // namespace seqadv
