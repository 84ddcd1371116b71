#include "seqadv/nn.hpp"

namespace seqadv {

namespace init {

Mat normal(Eigen::Index r, Eigen::Index c, double stddev, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = stddev * rng.normal();
  return m;
}

Mat uniform(Eigen::Index r, Eigen::Index c, double lim, Rng& rng) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-lim, lim);
  return m;
}

Mat xavier(Eigen::Index r, Eigen::Index c, Rng& rng) {
  return uniform(r, c, std::sqrt(6.0 / static_cast<double>(r + c)), rng);
}

Mat zeros(Eigen::Index r, Eigen::Index c) { return Mat::Zero(r, c); }
Mat ones(Eigen::Index r, Eigen::Index c) { return Mat::Ones(r, c); }

}  // namespace init

void zero_grads(const ParamList& params) {
  for (Param* p : params) p->zero_grad();
}

bool all_finite(const ParamList& params) {
  for (const Param* p : params)
    if (!p->value.allFinite()) return false;
  return true;
}

void copy_values(const ParamList& dst, const ParamList& src) {
  if (dst.size() != src.size()) throw std::logic_error("copy_values: parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->value.rows() != src[i]->value.rows() || dst[i]->value.cols() != src[i]->value.cols())
      throw std::logic_error("copy_values: shape mismatch for " + dst[i]->name);
    dst[i]->value = src[i]->value;
  }
}

void Adam::step(const ParamList& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (Param* p : params) {
    Slot& s = slots_[p];
    if (s.m.size() == 0) {
      s.m = Mat::Zero(p->value.rows(), p->value.cols());
      s.v = Mat::Zero(p->value.rows(), p->value.cols());
    }
    s.m = beta1 * s.m + (1.0 - beta1) * p->grad;
    s.v = beta2 * s.v + (1.0 - beta2) * p->grad.cwiseProduct(p->grad);
    const Mat mhat = s.m / bc1;
    const Mat vhat = s.v / bc2;
    p->value -= lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps).matrix());
  }
}

void Adam::reset() {
  slots_.clear();
  t_ = 0;
}

void sgd_step(const ParamList& params, double lr) {
  for (Param* p : params) p->value -= lr * p->grad;
}

void GruParams::init(const std::string& prefix, int in_dim, int hidden, Rng& rng) {
  const double lim_in = std::sqrt(1.0 / static_cast<double>(in_dim));
  const double lim_h = std::sqrt(1.0 / static_cast<double>(hidden));
  w_zr = Param(prefix + ".w_zr", init::uniform(in_dim, 2 * hidden, lim_in, rng));
  u_zr = Param(prefix + ".u_zr", init::uniform(hidden, 2 * hidden, lim_h, rng));
  b_zr = Param(prefix + ".b_zr", init::zeros(1, 2 * hidden));
  w_n = Param(prefix + ".w_n", init::uniform(in_dim, hidden, lim_in, rng));
  u_n = Param(prefix + ".u_n", init::uniform(hidden, hidden, lim_h, rng));
  b_n = Param(prefix + ".b_n", init::zeros(1, hidden));
}

ParamList GruParams::params() { return {&w_zr, &u_zr, &b_zr, &w_n, &u_n, &b_n}; }

ad::Var gru_run(ad::Tape& tape, GruParams& p, const ad::Var& x, int batch, int seq_len,
                bool reversed) {
  const int H = p.hidden();
  if (x.rows() != static_cast<Eigen::Index>(batch) * seq_len)
    throw std::logic_error("gru_run: input rows do not match batch * seq_len");
  ad::Var w_zr = tape.leaf(p.w_zr), u_zr = tape.leaf(p.u_zr), b_zr = tape.leaf(p.b_zr);
  ad::Var w_n = tape.leaf(p.w_n), u_n = tape.leaf(p.u_n), b_n = tape.leaf(p.b_n);
  // Work in time-major layout so each step is a single contiguous slice.
  std::vector<int> to_time(static_cast<std::size_t>(batch) * seq_len);
  std::vector<int> to_batch(to_time.size());
  for (int t = 0; t < seq_len; ++t)
    for (int b = 0; b < batch; ++b) {
      to_time[static_cast<std::size_t>(t) * batch + b] = b * seq_len + t;
      to_batch[static_cast<std::size_t>(b) * seq_len + t] = t * batch + b;
    }
  ad::Var xt_all = ad::gather_rows(x, to_time);
  ad::Var h = tape.constant(Mat::Zero(batch, H));
  std::vector<ad::Var> outputs(static_cast<std::size_t>(seq_len));
  for (int step = 0; step < seq_len; ++step) {
    const int tstep = reversed ? seq_len - 1 - step : step;
    ad::Var xt = ad::slice_rows(xt_all, tstep * batch, batch);
    ad::Var zr = ad::sigmoid(ad::add_rowvec(ad::add(ad::matmul(xt, w_zr), ad::matmul(h, u_zr)), b_zr));
    ad::Var z = ad::slice_cols(zr, 0, H);
    ad::Var r = ad::slice_cols(zr, H, H);
    ad::Var n = ad::tanh_op(
        ad::add_rowvec(ad::add(ad::matmul(xt, w_n), ad::matmul(ad::mul(r, h), u_n)), b_n));
    // h' = (1 - z) .* n + z .* h
    ad::Var one_minus_z = ad::add_scalar(ad::scale(z, -1.0), 1.0);
    h = ad::add(ad::mul(one_minus_z, n), ad::mul(z, h));
    outputs[static_cast<std::size_t>(tstep)] = h;
  }
  return ad::gather_rows(ad::concat_rows(outputs), to_batch);
}

Mat dropout_mask(Eigen::Index r, Eigen::Index c, double p, Rng& rng) {
  if (p <= 0.0) return Mat::Ones(r, c);
  if (p >= 1.0) throw std::invalid_argument("dropout_mask: p must be < 1");
  Mat m(r, c);
  const double keep = 1.0 - p;
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return m;
}

}  // namespace seqadv
