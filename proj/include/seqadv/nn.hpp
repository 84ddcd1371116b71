#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqadv/autodiff.hpp"
#include "seqadv/rng.hpp"

namespace seqadv {

namespace init {

Mat normal(Eigen::Index r, Eigen::Index c, double stddev, Rng& rng);
Mat uniform(Eigen::Index r, Eigen::Index c, double lim, Rng& rng);
Mat xavier(Eigen::Index r, Eigen::Index c, Rng& rng);  // uniform +-sqrt(6/(r+c))
Mat zeros(Eigen::Index r, Eigen::Index c);
Mat ones(Eigen::Index r, Eigen::Index c);

}  // namespace init

using ParamList = std::vector<Param*>;

void zero_grads(const ParamList& params);
bool all_finite(const ParamList& params);
void copy_values(const ParamList& dst, const ParamList& src);

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void step(const ParamList& params);
  void reset();

 private:
  struct Slot {
    Mat m, v;
  };
  std::unordered_map<Param*, Slot> slots_;
  long long t_ = 0;
};

// Plain gradient descent on an explicit parameter subset (attack-time updates).
void sgd_step(const ParamList& params, double lr);

// Gated recurrent unit over a batch; one direction.
struct GruParams {
  Param w_zr, u_zr, b_zr;  // fused update/reset gates
  Param w_n, u_n, b_n;     // candidate state

  void init(const std::string& prefix, int in_dim, int hidden, Rng& rng);
  ParamList params();
  int hidden() const { return static_cast<int>(u_n.value.rows()); }
};

// Runs the GRU over inputs stacked as (B*T x E) with uniform T; returns
// per-step hidden states stacked the same way (B*T x H), in forward time
// order. If reversed, time runs backward but outputs stay in input order.
ad::Var gru_run(ad::Tape& tape, GruParams& p, const ad::Var& x, int batch, int seq_len,
                bool reversed);

// Inverted dropout mask as a constant gate; identity when p == 0.
Mat dropout_mask(Eigen::Index r, Eigen::Index c, double p, Rng& rng);

}  // namespace seqadv
