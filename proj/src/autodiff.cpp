#include "seqadv/autodiff.hpp"

#include <cmath>
#include <memory>

namespace seqadv::ad {

namespace {

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::logic_error("autodiff: operands belong to different tapes");
}

bool rg(const Var& v) { return v.tape()->node(v.idx()).requires_grad; }

}  // namespace

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw std::logic_error("autodiff: loss not on this tape");
  const Node& ln = nodes_[loss.idx()];
  if (ln.value.rows() != 1 || ln.value.cols() != 1)
    throw std::logic_error("autodiff: backward expects a 1x1 loss");
  accum(loss.idx(), Mat::Ones(1, 1));
  for (int i = loss.idx(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.grad_live) continue;
    if (n.backward) n.backward(*this, n);
    if (n.bound) n.bound->grad += n.grad;
  }
}

const Mat& Tape::grad_of(const Var& v) {
  Node& n = nodes_[v.idx()];
  if (!n.grad_live) {
    if (zero_.rows() != n.value.rows() || zero_.cols() != n.value.cols())
      zero_ = Mat::Zero(n.value.rows(), n.value.cols());
    return zero_;
  }
  return n.grad;
}

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  if (a.cols() != b.rows()) throw std::logic_error("matmul: inner dimensions differ");
  Mat out = a.val() * b.val();
  int ia = a.idx(), ib = b.idx();
  return t.push(std::move(out), rg(a) || rg(b), nullptr, [ia, ib](Tape& tp, Node& n) {
    const Mat& av = tp.node(ia).value;
    const Mat& bv = tp.node(ib).value;
    if (tp.node(ia).requires_grad) tp.accum(ia, n.grad * bv.transpose());
    if (tp.node(ib).requires_grad) tp.accum(ib, av.transpose() * n.grad);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  int ia = a.idx(), ib = b.idx();
  return t.push(a.val() + b.val(), rg(a) || rg(b), nullptr, [ia, ib](Tape& tp, Node& n) {
    tp.accum(ia, n.grad);
    tp.accum(ib, n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  int ia = a.idx(), ib = b.idx();
  return t.push(a.val() - b.val(), rg(a) || rg(b), nullptr, [ia, ib](Tape& tp, Node& n) {
    tp.accum(ia, n.grad);
    tp.accum(ib, -n.grad);
  });
}

Var add_rowvec(const Var& a, const Var& row) {
  check_same_tape(a, row);
  Tape& t = *a.tape();
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::logic_error("add_rowvec: shape mismatch");
  Mat out = a.val().rowwise() + row.val().row(0);
  int ia = a.idx(), ir = row.idx();
  return t.push(std::move(out), rg(a) || rg(row), nullptr, [ia, ir](Tape& tp, Node& n) {
    tp.accum(ia, n.grad);
    tp.accum(ir, n.grad.colwise().sum());
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  int ia = a.idx(), ib = b.idx();
  return t.push(a.val().cwiseProduct(b.val()), rg(a) || rg(b), nullptr, [ia, ib](Tape& tp, Node& n) {
    const Mat& av = tp.node(ia).value;
    const Mat& bv = tp.node(ib).value;
    if (tp.node(ia).requires_grad) tp.accum(ia, n.grad.cwiseProduct(bv));
    if (tp.node(ib).requires_grad) tp.accum(ib, n.grad.cwiseProduct(av));
  });
}

Var scale(const Var& a, double s) {
  Tape& t = *a.tape();
  int ia = a.idx();
  return t.push(a.val() * s, rg(a), nullptr,
                [ia, s](Tape& tp, Node& n) { tp.accum(ia, n.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  Tape& t = *a.tape();
  int ia = a.idx();
  return t.push(a.val().array() + s, rg(a), nullptr,
                [ia](Tape& tp, Node& n) { tp.accum(ia, n.grad); });
}

Var add_const(const Var& a, const Mat& c) {
  Tape& t = *a.tape();
  int ia = a.idx();
  return t.push(a.val() + c, rg(a), nullptr,
                [ia](Tape& tp, Node& n) { tp.accum(ia, n.grad); });
}

Var mul_const(const Var& a, const Mat& c) {
  Tape& t = *a.tape();
  int ia = a.idx();
  Mat cc = c;
  return t.push(a.val().cwiseProduct(c), rg(a), nullptr,
                [ia, cc](Tape& tp, Node& n) { tp.accum(ia, n.grad.cwiseProduct(cc)); });
}

Var transpose(const Var& a) {
  Tape& t = *a.tape();
  int ia = a.idx();
  return t.push(a.val().transpose(), rg(a), nullptr,
                [ia](Tape& tp, Node& n) { tp.accum(ia, n.grad.transpose()); });
}

Var sigmoid(const Var& a) {
  Tape& t = *a.tape();
  Mat out = a.val().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  int ia = a.idx();
  return t.push(std::move(out), rg(a), nullptr, [ia](Tape& tp, Node& n) {
    tp.accum(ia, n.grad.cwiseProduct((n.value.array() * (1.0 - n.value.array())).matrix()));
  });
}

Var tanh_op(const Var& a) {
  Tape& t = *a.tape();
  Mat out = a.val().array().tanh();
  int ia = a.idx();
  return t.push(std::move(out), rg(a), nullptr, [ia](Tape& tp, Node& n) {
    tp.accum(ia, n.grad.cwiseProduct((1.0 - n.value.array().square()).matrix()));
  });
}

Var relu(const Var& a) {
  Tape& t = *a.tape();
  Mat out = a.val().cwiseMax(0.0);
  int ia = a.idx();
  return t.push(std::move(out), rg(a), nullptr, [ia](Tape& tp, Node& n) {
    const Mat& av = tp.node(ia).value;
    tp.accum(ia, n.grad.cwiseProduct((av.array() > 0.0).cast<double>().matrix()));
  });
}

Var log_op(const Var& a) {
  Tape& t = *a.tape();
  Mat out = a.val().array().log();
  int ia = a.idx();
  return t.push(std::move(out), rg(a), nullptr, [ia](Tape& tp, Node& n) {
    const Mat& av = tp.node(ia).value;
    tp.accum(ia, n.grad.cwiseQuotient(av));
  });
}

Var abs_op(const Var& a) {
  Tape& t = *a.tape();
  Mat out = a.val().cwiseAbs();
  int ia = a.idx();
  return t.push(std::move(out), rg(a), nullptr, [ia](Tape& tp, Node& n) {
    const Mat& av = tp.node(ia).value;
    tp.accum(ia, n.grad.cwiseProduct(av.unaryExpr([](double x) {
      return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    })));
  });
}

Var square(const Var& a) {
  Tape& t = *a.tape();
  Mat out = a.val().array().square();
  int ia = a.idx();
  return t.push(std::move(out), rg(a), nullptr, [ia](Tape& tp, Node& n) {
    const Mat& av = tp.node(ia).value;
    tp.accum(ia, (2.0 * n.grad.array() * av.array()).matrix());
  });
}

Var clamp_upper(const Var& a, double hi) {
  Tape& t = *a.tape();
  Mat out = a.val().cwiseMin(hi);
  int ia = a.idx();
  return t.push(std::move(out), rg(a), nullptr, [ia, hi](Tape& tp, Node& n) {
    const Mat& av = tp.node(ia).value;
    tp.accum(ia, n.grad.cwiseProduct((av.array() < hi).cast<double>().matrix()));
  });
}

namespace {

Mat softmax_rows_value(const Mat& a) {
  Mat out(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    Eigen::ArrayXd e = (a.row(r).array() - m).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

}  // namespace

Var softmax_rows(const Var& a) {
  Tape& t = *a.tape();
  int ia = a.idx();
  return t.push(softmax_rows_value(a.val()), rg(a), nullptr, [ia](Tape& tp, Node& n) {
    // dx = y .* (dy - rowsum(dy .* y))
    Mat g(n.value.rows(), n.value.cols());
    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
      const double dot = n.grad.row(r).dot(n.value.row(r));
      g.row(r) = n.value.row(r).cwiseProduct(n.grad.row(r).array().matrix() - Eigen::RowVectorXd::Constant(n.value.cols(), dot));
    }
    tp.accum(ia, g);
  });
}

Var log_softmax_rows(const Var& a) {
  Tape& t = *a.tape();
  Mat out(a.rows(), a.cols());
  const Mat& av = a.val();
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    const double m = av.row(r).maxCoeff();
    const double lse = std::log((av.row(r).array() - m).exp().sum()) + m;
    out.row(r) = av.row(r).array() - lse;
  }
  int ia = a.idx();
  return t.push(std::move(out), rg(a), nullptr, [ia](Tape& tp, Node& n) {
    // dx = dy - softmax(x) * rowsum(dy)
    Mat g(n.value.rows(), n.value.cols());
    for (Eigen::Index r = 0; r < n.value.rows(); ++r) {
      const double s = n.grad.row(r).sum();
      g.row(r) = n.grad.row(r) - s * n.value.row(r).array().exp().matrix();
    }
    tp.accum(ia, g);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  Tape& t = *x.tape();
  const Mat& xv = x.val();
  const Eigen::Index R = xv.rows(), C = xv.cols();
  Mat xhat(R, C);
  Eigen::VectorXd inv_std(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    const double mean = xv.row(r).mean();
    Eigen::RowVectorXd c = xv.row(r).array() - mean;
    const double var = c.squaredNorm() / static_cast<double>(C);
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = c * inv_std(r);
  }
  Mat out = (xhat.array().rowwise() * gamma.val().row(0).array()).rowwise() + beta.val().row(0).array();
  int ix = x.idx(), ig = gamma.idx(), ib = beta.idx();
  return t.push(std::move(out), rg(x) || rg(gamma) || rg(beta), nullptr,
                [ix, ig, ib, xhat, inv_std](Tape& tp, Node& n) {
    const Eigen::Index R = n.value.rows(), C = n.value.cols();
    const Eigen::RowVectorXd g = tp.node(ig).value.row(0);
    if (tp.node(ig).requires_grad)
      tp.accum(ig, n.grad.cwiseProduct(xhat).colwise().sum());
    if (tp.node(ib).requires_grad) tp.accum(ib, n.grad.colwise().sum());
    if (tp.node(ix).requires_grad) {
      Mat gx(R, C);
      for (Eigen::Index r = 0; r < R; ++r) {
        Eigen::RowVectorXd dxhat = n.grad.row(r).cwiseProduct(g);
        const double m1 = dxhat.mean();
        const double m2 = dxhat.dot(xhat.row(r)) / static_cast<double>(C);
        gx.row(r) = inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
      }
      tp.accum(ix, gx);
    }
  });
}

Var sum_all(const Var& a) {
  Tape& t = *a.tape();
  Mat out(1, 1);
  out(0, 0) = a.val().sum();
  int ia = a.idx();
  return t.push(std::move(out), rg(a), nullptr, [ia](Tape& tp, Node& n) {
    const Node& p = tp.node(ia);
    tp.accum(ia, Mat::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0)));
  });
}

Var mean_all(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.rows() * a.cols());
  return scale(sum_all(a), inv);
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::logic_error("concat_cols: empty input");
  Tape& t = *xs[0].tape();
  Eigen::Index R = xs[0].rows(), C = 0;
  for (const auto& x : xs) {
    check_same_tape(xs[0], x);
    if (x.rows() != R) throw std::logic_error("concat_cols: row mismatch");
    C += x.cols();
  }
  Mat out(R, C);
  std::vector<int> idxs;
  std::vector<Eigen::Index> widths;
  Eigen::Index off = 0;
  bool any = false;
  for (const auto& x : xs) {
    out.middleCols(off, x.cols()) = x.val();
    idxs.push_back(x.idx());
    widths.push_back(x.cols());
    off += x.cols();
    any = any || rg(x);
  }
  return t.push(std::move(out), any, nullptr, [idxs, widths](Tape& tp, Node& n) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      tp.accum(idxs[i], n.grad.middleCols(off, widths[i]));
      off += widths[i];
    }
  });
}

Var slice_cols(const Var& a, int start, int cnt) {
  Tape& t = *a.tape();
  int ia = a.idx();
  return t.push(a.val().middleCols(start, cnt), rg(a), nullptr, [ia, start, cnt](Tape& tp, Node& n) {
    const Node& p = tp.node(ia);
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    g.middleCols(start, cnt) = n.grad;
    tp.accum(ia, g);
  });
}

Var concat_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::logic_error("concat_rows: empty input");
  Tape& t = *xs[0].tape();
  Eigen::Index C = xs[0].cols(), R = 0;
  for (const auto& x : xs) {
    check_same_tape(xs[0], x);
    if (x.cols() != C) throw std::logic_error("concat_rows: col mismatch");
    R += x.rows();
  }
  Mat out(R, C);
  std::vector<int> idxs;
  std::vector<Eigen::Index> heights;
  Eigen::Index off = 0;
  bool any = false;
  for (const auto& x : xs) {
    out.middleRows(off, x.rows()) = x.val();
    idxs.push_back(x.idx());
    heights.push_back(x.rows());
    off += x.rows();
    any = any || rg(x);
  }
  return t.push(std::move(out), any, nullptr, [idxs, heights](Tape& tp, Node& n) {
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      tp.accum(idxs[i], n.grad.middleRows(off, heights[i]));
      off += heights[i];
    }
  });
}

Var slice_rows(const Var& a, int start, int cnt) {
  Tape& t = *a.tape();
  int ia = a.idx();
  return t.push(a.val().middleRows(start, cnt), rg(a), nullptr, [ia, start, cnt](Tape& tp, Node& n) {
    const Node& p = tp.node(ia);
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    g.middleRows(start, cnt) = n.grad;
    tp.accum(ia, g);
  });
}

Var gather_rows(const Var& table, const std::vector<int>& ids) {
  Tape& t = *table.tape();
  const Mat& tv = table.val();
  Mat out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw std::out_of_range("gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  int it = table.idx();
  std::vector<int> ids_copy = ids;
  return t.push(std::move(out), rg(table), nullptr, [it, ids_copy](Tape& tp, Node& n) {
    const Node& p = tp.node(it);
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < ids_copy.size(); ++i)
      g.row(ids_copy[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    tp.accum(it, g);
  });
}

Var gather_cols_per_row(const Var& a, const std::vector<int>& idx) {
  Tape& t = *a.tape();
  const Mat& av = a.val();
  if (static_cast<Eigen::Index>(idx.size()) != av.rows())
    throw std::logic_error("gather_cols_per_row: index size mismatch");
  Mat out(av.rows(), 1);
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    if (idx[r] < 0 || idx[r] >= av.cols()) throw std::out_of_range("gather_cols_per_row: col out of range");
    out(r, 0) = av(r, idx[r]);
  }
  int ia = a.idx();
  std::vector<int> ic = idx;
  return t.push(std::move(out), rg(a), nullptr, [ia, ic](Tape& tp, Node& n) {
    const Node& p = tp.node(ia);
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) g(r, ic[r]) = n.grad(r, 0);
    tp.accum(ia, g);
  });
}

Var straight_through(const Var& soft, const Mat& hard) {
  Tape& t = *soft.tape();
  if (hard.rows() != soft.rows() || hard.cols() != soft.cols())
    throw std::logic_error("straight_through: shape mismatch");
  int is = soft.idx();
  return t.push(hard, rg(soft), nullptr, [is](Tape& tp, Node& n) { tp.accum(is, n.grad); });
}

Var self_attention(const Var& q, const Var& k, const Var& v, int num_heads, int seq_len) {
  check_same_tape(q, k);
  check_same_tape(q, v);
  Tape& t = *q.tape();
  const Mat& qv = q.val();
  const Eigen::Index BT = qv.rows(), D = qv.cols();
  if (D % num_heads != 0) throw std::logic_error("self_attention: dim not divisible by heads");
  if (BT % seq_len != 0) throw std::logic_error("self_attention: rows not divisible by seq_len");
  const int B = static_cast<int>(BT / seq_len);
  const int hd = static_cast<int>(D) / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Mat out(BT, D);
  // Attention weights per (sequence, head), kept for backward.
  auto attn = std::make_shared<std::vector<Mat>>();
  attn->reserve(static_cast<std::size_t>(B) * num_heads);
  const Mat& kv = k.val();
  const Mat& vv = v.val();
  for (int b = 0; b < B; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq_len;
    for (int h = 0; h < num_heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * hd;
      Mat qh = qv.block(r0, c0, seq_len, hd);
      Mat kh = kv.block(r0, c0, seq_len, hd);
      Mat vh = vv.block(r0, c0, seq_len, hd);
      Mat s = (qh * kh.transpose()) * scale;
      Mat a = softmax_rows_value(s);
      out.block(r0, c0, seq_len, hd) = a * vh;
      attn->push_back(std::move(a));
    }
  }
  int iq = q.idx(), ik = k.idx(), iv = v.idx();
  bool needs = rg(q) || rg(k) || rg(v);
  return t.push(std::move(out), needs, nullptr,
                [iq, ik, iv, num_heads, seq_len, B, hd, scale, attn](Tape& tp, Node& n) {
    const Mat& qv = tp.node(iq).value;
    const Mat& kv = tp.node(ik).value;
    const Mat& vv = tp.node(iv).value;
    Mat gq = Mat::Zero(qv.rows(), qv.cols());
    Mat gk = Mat::Zero(kv.rows(), kv.cols());
    Mat gv = Mat::Zero(vv.rows(), vv.cols());
    std::size_t ai = 0;
    for (int b = 0; b < B; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq_len;
      for (int h = 0; h < num_heads; ++h, ++ai) {
        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * hd;
        const Mat& a = (*attn)[ai];
        Mat qh = qv.block(r0, c0, seq_len, hd);
        Mat kh = kv.block(r0, c0, seq_len, hd);
        Mat vh = vv.block(r0, c0, seq_len, hd);
        Mat go = n.grad.block(r0, c0, seq_len, hd);
        Mat ga = go * vh.transpose();
        gv.block(r0, c0, seq_len, hd) += a.transpose() * go;
        // softmax backward per row of the score matrix
        Mat gs(a.rows(), a.cols());
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
          const double dot = ga.row(r).dot(a.row(r));
          gs.row(r) = a.row(r).cwiseProduct(ga.row(r) - Eigen::RowVectorXd::Constant(a.cols(), dot));
        }
        gs *= scale;
        gq.block(r0, c0, seq_len, hd) += gs * kh;
        gk.block(r0, c0, seq_len, hd) += gs.transpose() * qh;
      }
    }
    if (tp.node(iq).requires_grad) tp.accum(iq, gq);
    if (tp.node(ik).requires_grad) tp.accum(ik, gk);
    if (tp.node(iv).requires_grad) tp.accum(iv, gv);
  });
}

Var im2col_seq(const Var& x, int batch, int seq_len, int kernel) {
  Tape& t = *x.tape();
  const Mat& xv = x.val();
  if (xv.rows() != static_cast<Eigen::Index>(batch) * seq_len)
    throw std::logic_error("im2col_seq: row count mismatch");
  const int E = static_cast<int>(xv.cols());
  const int W = std::max(seq_len - kernel + 1, 1);
  Mat out = Mat::Zero(static_cast<Eigen::Index>(batch) * W, static_cast<Eigen::Index>(kernel) * E);
  for (int b = 0; b < batch; ++b) {
    for (int w = 0; w < W; ++w) {
      for (int j = 0; j < kernel; ++j) {
        const int pos = w + j;
        if (pos >= seq_len) break;  // zero padding on the right
        out.block(static_cast<Eigen::Index>(b) * W + w, static_cast<Eigen::Index>(j) * E, 1, E) =
            xv.row(static_cast<Eigen::Index>(b) * seq_len + pos);
      }
    }
  }
  int ix = x.idx();
  return t.push(std::move(out), rg(x), nullptr, [ix, batch, seq_len, kernel, E](Tape& tp, Node& n) {
    const int W = std::max(seq_len - kernel + 1, 1);
    Mat g = Mat::Zero(static_cast<Eigen::Index>(batch) * seq_len, E);
    for (int b = 0; b < batch; ++b) {
      for (int w = 0; w < W; ++w) {
        for (int j = 0; j < kernel; ++j) {
          const int pos = w + j;
          if (pos >= seq_len) break;
          g.row(static_cast<Eigen::Index>(b) * seq_len + pos) +=
              n.grad.block(static_cast<Eigen::Index>(b) * W + w, static_cast<Eigen::Index>(j) * E, 1, E);
        }
      }
    }
    tp.accum(ix, g);
  });
}

Var rowgroup_max(const Var& x, int group) {
  Tape& t = *x.tape();
  const Mat& xv = x.val();
  if (xv.rows() % group != 0) throw std::logic_error("rowgroup_max: rows not divisible by group");
  const Eigen::Index B = xv.rows() / group, C = xv.cols();
  Mat out(B, C);
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(B * C));
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index c = 0; c < C; ++c) {
      double best = xv(b * group, c);
      int bi = 0;
      for (int r = 1; r < group; ++r) {
        const double v = xv(b * group + r, c);
        if (v > best) {
          best = v;
          bi = r;
        }
      }
      out(b, c) = best;
      (*arg)[static_cast<std::size_t>(b * C + c)] = bi;
    }
  }
  int ix = x.idx();
  return t.push(std::move(out), rg(x), nullptr, [ix, group, arg](Tape& tp, Node& n) {
    const Node& p = tp.node(ix);
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    const Eigen::Index B = n.value.rows(), C = n.value.cols();
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index c = 0; c < C; ++c)
        g(b * group + (*arg)[static_cast<std::size_t>(b * C + c)], c) = n.grad(b, c);
    tp.accum(ix, g);
  });
}

Var rowgroup_mean(const Var& x, int group, const std::vector<double>& mask) {
  Tape& t = *x.tape();
  const Mat& xv = x.val();
  if (xv.rows() % group != 0) throw std::logic_error("rowgroup_mean: rows not divisible by group");
  if (static_cast<Eigen::Index>(mask.size()) != xv.rows())
    throw std::logic_error("rowgroup_mean: mask size mismatch");
  const Eigen::Index B = xv.rows() / group, C = xv.cols();
  Mat out = Mat::Zero(B, C);
  std::vector<double> inv_count(static_cast<std::size_t>(B), 0.0);
  for (Eigen::Index b = 0; b < B; ++b) {
    double cnt = 0;
    for (int r = 0; r < group; ++r) {
      const double m = mask[static_cast<std::size_t>(b * group + r)];
      if (m != 0.0) {
        out.row(b) += xv.row(b * group + r);
        cnt += 1.0;
      }
    }
    if (cnt == 0.0) throw std::logic_error("rowgroup_mean: empty group");
    inv_count[static_cast<std::size_t>(b)] = 1.0 / cnt;
    out.row(b) *= inv_count[static_cast<std::size_t>(b)];
  }
  int ix = x.idx();
  std::vector<double> mk = mask;
  return t.push(std::move(out), rg(x), nullptr, [ix, group, mk, inv_count](Tape& tp, Node& n) {
    const Node& p = tp.node(ix);
    Mat g = Mat::Zero(p.value.rows(), p.value.cols());
    const Eigen::Index B = n.value.rows();
    for (Eigen::Index b = 0; b < B; ++b)
      for (int r = 0; r < group; ++r)
        if (mk[static_cast<std::size_t>(b * group + r)] != 0.0)
          g.row(b * group + r) = n.grad.row(b) * inv_count[static_cast<std::size_t>(b)];
    tp.accum(ix, g);
  });
}

}  // namespace seqadv::ad
