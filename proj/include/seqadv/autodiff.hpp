#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace seqadv {

using Mat = Eigen::MatrixXd;

// A named trainable tensor. Gradients accumulate across backward passes until
// explicitly zeroed (by the optimizer or the caller).
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(); }
};

namespace ad {

class Tape;

// Handle into a tape node. Cheap to copy; valid until the tape is cleared.
class Var {
 public:
  Var() = default;
  const Mat& val() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
  bool defined() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int idx() const { return idx_; }

 private:
  friend class Tape;
  Var(Tape* t, int i) : tape_(t), idx_(i) {}
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

struct Node {
  Mat value;
  Mat grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  bool grad_live = false;
  std::function<void(Tape&, Node&)> backward;  // may be empty for leaves/constants
  Param* bound = nullptr;                      // parameter leaf binding
};

// Reverse-mode tape. Nodes are created in topological order by construction;
// backward() walks them in reverse. One tape per forward/backward pass.
class Tape {
 public:
  Var constant(Mat v) { return push(std::move(v), false, nullptr, {}); }

  // Differentiable input (e.g. an embedding row under attack).
  Var input(Mat v) { return push(std::move(v), true, nullptr, {}); }

  // Parameter leaf. Repeated calls for the same Param return the same node so
  // gradients from multiple uses accumulate correctly.
  Var leaf(Param& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return Var(this, it->second);
    Var v = push(p.value, true, &p, {});
    leaves_[&p] = v.idx_;
    return v;
  }

  void backward(const Var& loss);

  // Gradient of a node; zero matrix if it never received one.
  const Mat& grad_of(const Var& v);

  const Mat& value_of(const Var& v) const { return nodes_[v.idx_].value; }

  void accum(int idx, const Mat& g) {
    Node& n = nodes_[idx];
    if (!n.requires_grad) return;
    if (!n.grad_live) {
      n.grad = g;
      n.grad_live = true;
    } else {
      n.grad += g;
    }
  }

  void clear() {
    nodes_.clear();
    leaves_.clear();
  }

  std::size_t size() const { return nodes_.size(); }

  // --- internal: used by op constructors ---
  Var push(Mat value, bool requires_grad, Param* bound, std::function<void(Tape&, Node&)> bw) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(bw);
    n.bound = bound;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Node& node(int idx) { return nodes_[idx]; }

 private:
  std::deque<Node> nodes_;
  std::unordered_map<Param*, int> leaves_;
  Mat zero_;
};

inline const Mat& Var::val() const { return tape_->value_of(*this); }
inline const Mat& Var::grad() const { return tape_->grad_of(*this); }

// ---- ops ----
// All ops assert operand tapes match and build exactly one node.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);                 // same shape
Var sub(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& row);        // row is 1 x C, broadcast over rows
Var mul(const Var& a, const Var& b);                 // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_const(const Var& a, const Mat& c);           // constant offset (noise, masks)
Var mul_const(const Var& a, const Mat& c);           // constant elementwise gate (dropout)
Var transpose(const Var& a);
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var relu(const Var& a);
Var log_op(const Var& a);                            // elementwise natural log; inputs must be > 0
Var abs_op(const Var& a);
Var square(const Var& a);
Var clamp_upper(const Var& a, double hi);            // min(a, hi); zero grad where clamped
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var sum_all(const Var& a);                           // 1x1
Var mean_all(const Var& a);
Var concat_cols(const std::vector<Var>& xs);
Var slice_cols(const Var& a, int start, int n);
Var concat_rows(const std::vector<Var>& xs);
Var slice_rows(const Var& a, int start, int n);

// Row gather: out.row(i) = table.row(ids[i]). Backward scatter-adds.
Var gather_rows(const Var& table, const std::vector<int>& ids);

// out.row(i) = a(i, idx[i]) as a column vector (rows x 1).
Var gather_cols_per_row(const Var& a, const std::vector<int>& idx);

// Forward: `hard` (constant); backward: identity into `soft`.
Var straight_through(const Var& soft, const Mat& hard);

// Fused batched multi-head self-attention over B sequences of uniform length T.
// q,k,v are (B*T x dim); returns (B*T x dim).
Var self_attention(const Var& q, const Var& k, const Var& v, int num_heads, int seq_len);

// Sliding windows for 1-d convolution over B sequences of uniform length T
// stacked in x (B*T x E). Sequences shorter than the kernel are zero-padded on
// the right. Returns (B*W x K*E) where W = max(T - K + 1, 1).
Var im2col_seq(const Var& x, int batch, int seq_len, int kernel);

// Max over each group of `group` consecutive rows; (B*group x C) -> (B x C).
Var rowgroup_max(const Var& x, int group);

// Mean over each group of `group` consecutive rows, counting only rows where
// mask (B*group) is nonzero. Each group must have at least one live row.
Var rowgroup_mean(const Var& x, int group, const std::vector<double>& mask);

}  // namespace ad
}  // namespace seqadv
