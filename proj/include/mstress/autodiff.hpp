#pragma once
// Define-by-run reverse-mode differentiation over Tensor. Recording an op
// computes its forward value immediately; backward() replays the tape in
// reverse and accumulates gradients for every slot.
//
// The tape recycles its value/grad/aux buffers across reset() calls, so a
// training loop that records the same computation shape every step performs
// no steady-state allocation. Index arrays passed to gather_rows and
// segment_mean are borrowed, not copied; they must outlive the tape ops.

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "mstress/errors.hpp"
#include "mstress/gemm.hpp"
#include "mstress/rng.hpp"
#include "mstress/tensor.hpp"

namespace mstress {

class Tape {
  enum class OpKind : uint8_t {
    kLeaf,
    kMatmul,
    kLinear,
    kEdgeCat,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kScale,
    kAddRowVec,
    kConcatCols,
    kSliceCols,
    kRelu,
    kSoftplus,
    kLog,
    kDropout,
    kLayerNorm,
    kSegmentMean,
    kGatherRows,
    kSumAll,
    kMeanAll,
  };

  struct Op {
    OpKind kind;
    int32_t a = -1, b = -1, c = -1;
    int32_t out = -1;
    int32_t aux = -1;
    double x = 0.0;
    int32_t i0 = 0, i1 = 0;
    const int32_t* idx = nullptr;
    const int32_t* idx2 = nullptr;
  };

 public:
  int32_t input(const Tensor& t) {
    int32_t slot = new_slot(t.rows, t.cols);
    values_[size_t(slot)].data = t.data;
    ops_.push_back({OpKind::kLeaf, -1, -1, -1, slot, -1, 0.0, 0, 0, nullptr});
    return slot;
  }

  const Tensor& value(int32_t slot) const { return values_[size_t(slot)]; }
  const Tensor& grad(int32_t slot) const { return grads_[size_t(slot)]; }

  int32_t matmul(int32_t a, int32_t b) {
    const Tensor& A = values_[size_t(a)];
    const Tensor& B = values_[size_t(b)];
    if (A.cols != B.rows)
      throw NumericError("matmul shape mismatch " + A.shape_str() + " x " +
                         B.shape_str());
    int32_t out = new_slot(A.rows, B.cols);
    Tensor& C = values_[size_t(out)];
    C.fill(0.0);
    gemm_nn(A.rows, A.cols, B.cols, A.data.data(), B.data.data(),
            C.data.data());
    ops_.push_back({OpKind::kMatmul, a, b, -1, out, -1, 0.0, 0, 0, nullptr});
    return out;
  }

  // Affine layer out = x * w + b with b broadcast over rows. Each output
  // element starts from its bias term and the product accumulates on top,
  // so one op replaces a matmul plus a row-vector add.
  int32_t linear(int32_t x, int32_t w, int32_t b) {
    const Tensor& X = values_[size_t(x)];
    const Tensor& W = values_[size_t(w)];
    const Tensor& B = values_[size_t(b)];
    if (X.cols != W.rows)
      throw NumericError("linear shape mismatch " + X.shape_str() + " x " +
                         W.shape_str());
    if (B.rows != 1 || B.cols != W.cols)
      throw NumericError("linear bias needs [1," + std::to_string(W.cols) +
                         "], got " + B.shape_str());
    int32_t out = new_slot(X.rows, W.cols);
    Tensor& C = values_[size_t(out)];
    for (int32_t i = 0; i < C.rows; ++i) {
      double* cr = C.row(i);
      for (int32_t j = 0; j < C.cols; ++j) cr[j] = B.data[size_t(j)];
    }
    gemm_nn(X.rows, X.cols, W.cols, X.data.data(), W.data.data(),
            C.data.data());
    ops_.push_back({OpKind::kLinear, x, w, b, out, -1, 0.0, 0, 0, nullptr});
    return out;
  }

  // Binary elementwise ops accept equal shapes, or a [1,1] scalar as rhs.
  int32_t add(int32_t a, int32_t b) { return binary(OpKind::kAdd, a, b); }
  int32_t sub(int32_t a, int32_t b) { return binary(OpKind::kSub, a, b); }
  int32_t mul(int32_t a, int32_t b) { return binary(OpKind::kMul, a, b); }
  int32_t div(int32_t a, int32_t b) { return binary(OpKind::kDiv, a, b); }

  int32_t scale(int32_t a, double s) {
    const Tensor& A = values_[size_t(a)];
    int32_t out = new_slot(A.rows, A.cols);
    Tensor& O = values_[size_t(out)];
    for (size_t i = 0; i < A.data.size(); ++i) O.data[i] = s * A.data[i];
    ops_.push_back({OpKind::kScale, a, -1, -1, out, -1, s, 0, 0, nullptr});
    return out;
  }

  int32_t add_rowvec(int32_t a, int32_t v) {
    const Tensor& A = values_[size_t(a)];
    const Tensor& V = values_[size_t(v)];
    if (V.rows != 1 || V.cols != A.cols)
      throw NumericError("add_rowvec needs [1," + std::to_string(A.cols) +
                         "], got " + V.shape_str());
    int32_t out = new_slot(A.rows, A.cols);
    Tensor& O = values_[size_t(out)];
    for (int32_t i = 0; i < A.rows; ++i) {
      const double* ar = A.row(i);
      double* orow = O.row(i);
      for (int32_t j = 0; j < A.cols; ++j) orow[j] = ar[j] + V.data[size_t(j)];
    }
    ops_.push_back({OpKind::kAddRowVec, a, v, -1, out, -1, 0.0, 0, 0, nullptr});
    return out;
  }

  int32_t concat_cols(int32_t a, int32_t b) {
    const Tensor& A = values_[size_t(a)];
    const Tensor& B = values_[size_t(b)];
    if (A.rows != B.rows)
      throw NumericError("concat_cols row mismatch " + A.shape_str() + " vs " +
                         B.shape_str());
    int32_t out = new_slot(A.rows, A.cols + B.cols);
    Tensor& O = values_[size_t(out)];
    for (int32_t i = 0; i < A.rows; ++i) {
      double* orow = O.row(i);
      const double* ar = A.row(i);
      const double* br = B.row(i);
      for (int32_t j = 0; j < A.cols; ++j) orow[j] = ar[j];
      for (int32_t j = 0; j < B.cols; ++j) orow[A.cols + j] = br[j];
    }
    ops_.push_back({OpKind::kConcatCols, a, b, -1, out, -1, 0.0, 0, 0,
                    nullptr});
    return out;
  }

  int32_t concat_cols(int32_t a, int32_t b, int32_t c) {
    return concat_cols(concat_cols(a, b), c);
  }

  int32_t slice_cols(int32_t a, int32_t c0, int32_t c1) {
    const Tensor& A = values_[size_t(a)];
    if (c0 < 0 || c1 > A.cols || c0 >= c1)
      throw NumericError("slice_cols bounds out of range for " +
                         A.shape_str());
    int32_t out = new_slot(A.rows, c1 - c0);
    Tensor& O = values_[size_t(out)];
    for (int32_t i = 0; i < A.rows; ++i) {
      const double* ar = A.row(i) + c0;
      double* orow = O.row(i);
      for (int32_t j = 0; j < c1 - c0; ++j) orow[j] = ar[j];
    }
    ops_.push_back({OpKind::kSliceCols, a, -1, -1, out, -1, 0.0, c0, c1,
                    nullptr});
    return out;
  }

  int32_t relu(int32_t a) {
    const Tensor& A = values_[size_t(a)];
    int32_t out = new_slot(A.rows, A.cols);
    Tensor& O = values_[size_t(out)];
    for (size_t i = 0; i < A.data.size(); ++i)
      O.data[i] = A.data[i] > 0.0 ? A.data[i] : 0.0;
    ops_.push_back({OpKind::kRelu, a, -1, -1, out, -1, 0.0, 0, 0, nullptr});
    return out;
  }

  int32_t softplus(int32_t a) {
    const Tensor& A = values_[size_t(a)];
    int32_t out = new_slot(A.rows, A.cols);
    Tensor& O = values_[size_t(out)];
    for (size_t i = 0; i < A.data.size(); ++i) {
      double x = A.data[i];
      O.data[i] = x > 30.0 ? x : std::log1p(std::exp(x));
    }
    ops_.push_back({OpKind::kSoftplus, a, -1, -1, out, -1, 0.0, 0, 0,
                    nullptr});
    return out;
  }

  int32_t log(int32_t a) {
    const Tensor& A = values_[size_t(a)];
    int32_t out = new_slot(A.rows, A.cols);
    Tensor& O = values_[size_t(out)];
    for (size_t i = 0; i < A.data.size(); ++i) O.data[i] = std::log(A.data[i]);
    ops_.push_back({OpKind::kLog, a, -1, -1, out, -1, 0.0, 0, 0, nullptr});
    return out;
  }

  // Inverted dropout: kept entries are scaled by 1/(1-p) so eval mode is the
  // identity. p = 0 or eval mode is the identity on the input slot and
  // records nothing.
  int32_t dropout(int32_t a, double p, Rng& rng, bool train) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout p must be in [0,1)");
    if (!train || p == 0.0) return a;
    const Tensor& A = values_[size_t(a)];
    int32_t out = new_slot(A.rows, A.cols);
    Tensor& O = values_[size_t(out)];
    int32_t aux = new_aux(A.rows, A.cols);
    Tensor& M = aux_[size_t(aux)];
    double keep_scale = 1.0 / (1.0 - p);
    for (size_t i = 0; i < A.data.size(); ++i) {
      M.data[i] = rng.uniform01() < p ? 0.0 : keep_scale;
      O.data[i] = A.data[i] * M.data[i];
    }
    ops_.push_back({OpKind::kDropout, a, -1, -1, out, aux, p, 0, 0, nullptr});
    return out;
  }

  // Row-wise normalization over the last axis with variance floor 1e-5,
  // then learnable gain and bias ([1,cols] each).
  int32_t layer_norm(int32_t a, int32_t gain, int32_t bias) {
    const Tensor& A = values_[size_t(a)];
    const Tensor& G = values_[size_t(gain)];
    const Tensor& B = values_[size_t(bias)];
    if (G.rows != 1 || G.cols != A.cols || B.rows != 1 || B.cols != A.cols)
      throw NumericError("layer_norm affine shapes must be [1," +
                         std::to_string(A.cols) + "]");
    int32_t out = new_slot(A.rows, A.cols);
    int32_t aux = new_aux(A.rows, 2);  // per-row mean and 1/std
    Tensor& O = values_[size_t(out)];
    Tensor& C = aux_[size_t(aux)];
    for (int32_t i = 0; i < A.rows; ++i) {
      const double* x = A.row(i);
      double mu = 0.0;
      for (int32_t j = 0; j < A.cols; ++j) mu += x[j];
      mu /= A.cols;
      double var = 0.0;
      for (int32_t j = 0; j < A.cols; ++j) var += (x[j] - mu) * (x[j] - mu);
      var /= A.cols;
      double istd = 1.0 / std::sqrt(var + 1e-5);
      C.at(i, 0) = mu;
      C.at(i, 1) = istd;
      double* o = O.row(i);
      for (int32_t j = 0; j < A.cols; ++j)
        o[j] = (x[j] - mu) * istd * G.data[size_t(j)] + B.data[size_t(j)];
    }
    ops_.push_back({OpKind::kLayerNorm, a, gain, bias, out, aux, 0.0, 0, 0,
                    nullptr});
    return out;
  }

  // Per-receiver mean of edge rows. receivers[e] in [0, num_nodes); nodes
  // with no incoming edge receive zeros.
  int32_t segment_mean(int32_t edges, const int32_t* receivers,
                       int32_t num_edges, int32_t num_nodes) {
    const Tensor& E = values_[size_t(edges)];
    if (E.rows != num_edges)
      throw NumericError("segment_mean: edge tensor rows " +
                         std::to_string(E.rows) + " != receiver count " +
                         std::to_string(num_edges));
    int32_t out = new_slot(num_nodes, E.cols);
    int32_t aux = new_aux(num_nodes, 1);  // in-degree per node
    Tensor& O = values_[size_t(out)];
    Tensor& C = aux_[size_t(aux)];
    O.fill(0.0);
    C.fill(0.0);
    for (int32_t e = 0; e < num_edges; ++e) C.data[size_t(receivers[e])] += 1.0;
    for (int32_t e = 0; e < num_edges; ++e) {
      const double* er = E.row(e);
      double* orow = O.row(receivers[e]);
      for (int32_t j = 0; j < E.cols; ++j) orow[j] += er[j];
    }
    for (int32_t v = 0; v < num_nodes; ++v) {
      double c = C.data[size_t(v)];
      if (c > 0.0) {
        double inv = 1.0 / c;
        double* orow = O.row(v);
        for (int32_t j = 0; j < E.cols; ++j) orow[j] *= inv;
      }
    }
    ops_.push_back({OpKind::kSegmentMean, edges, -1, -1, out, aux, 0.0,
                    num_edges, num_nodes, receivers});
    return out;
  }

  int32_t gather_rows(int32_t a, const int32_t* idx, int32_t count) {
    const Tensor& A = values_[size_t(a)];
    int32_t out = new_slot(count, A.cols);
    Tensor& O = values_[size_t(out)];
    for (int32_t i = 0; i < count; ++i) {
      const double* ar = A.row(idx[i]);
      double* orow = O.row(i);
      for (int32_t j = 0; j < A.cols; ++j) orow[j] = ar[j];
    }
    ops_.push_back({OpKind::kGatherRows, a, -1, -1, out, -1, 0.0, count, 0,
                    idx});
    return out;
  }

  // Edge-update input rows [e_i | v_send(i) | v_recv(i)] assembled in one
  // pass. Equivalent to two gathers and a three-way column concat, without
  // materializing the intermediates. Index arrays are borrowed.
  int32_t edge_cat(int32_t e, int32_t v, const int32_t* senders,
                   const int32_t* receivers, int32_t count) {
    const Tensor& E = values_[size_t(e)];
    const Tensor& V = values_[size_t(v)];
    if (E.rows != count)
      throw NumericError("edge_cat: edge tensor rows " +
                         std::to_string(E.rows) + " != edge count " +
                         std::to_string(count));
    int32_t out = new_slot(count, E.cols + 2 * V.cols);
    Tensor& O = values_[size_t(out)];
    for (int32_t i = 0; i < count; ++i) {
      double* orow = O.row(i);
      const double* er = E.row(i);
      const double* sr = V.row(senders[i]);
      const double* rr = V.row(receivers[i]);
      for (int32_t j = 0; j < E.cols; ++j) orow[j] = er[j];
      for (int32_t j = 0; j < V.cols; ++j) orow[E.cols + j] = sr[j];
      for (int32_t j = 0; j < V.cols; ++j) orow[E.cols + V.cols + j] = rr[j];
    }
    ops_.push_back({OpKind::kEdgeCat, e, v, -1, out, -1, 0.0, count, 0,
                    senders, receivers});
    return out;
  }

  int32_t sum_all(int32_t a) { return reduce(OpKind::kSumAll, a); }
  int32_t mean_all(int32_t a) { return reduce(OpKind::kMeanAll, a); }

  // Mean squared error against a constant target, averaged over all entries.
  int32_t mse(int32_t pred, int32_t target) {
    int32_t d = sub(pred, target);
    return mean_all(mul(d, d));
  }

  void backward(int32_t loss) {
    const Tensor& L = values_[size_t(loss)];
    if (L.rows != 1 || L.cols != 1)
      throw NumericError("backward needs a scalar loss, got " +
                         L.shape_str());
    grads_.resize(values_.size());
    for (size_t i = 0; i < used_; ++i) {
      grads_[i].resize(values_[i].rows, values_[i].cols);
      grads_[i].fill(0.0);
    }
    grads_[size_t(loss)].data[0] = 1.0;
    for (size_t n = ops_.size(); n-- > 0;) step_backward(ops_[n]);
  }

  // Forgets all ops but keeps buffer capacity for the next recording.
  void reset() {
    ops_.clear();
    used_ = 0;
    aux_used_ = 0;
  }

 private:
  int32_t new_slot(int32_t r, int32_t c) {
    if (used_ == values_.size()) values_.emplace_back();
    values_[used_].resize(r, c);
    return int32_t(used_++);
  }
  int32_t new_aux(int32_t r, int32_t c) {
    if (aux_used_ == aux_.size()) aux_.emplace_back();
    aux_[aux_used_].resize(r, c);
    return int32_t(aux_used_++);
  }

  int32_t binary(OpKind kind, int32_t a, int32_t b) {
    const Tensor& A = values_[size_t(a)];
    const Tensor& B = values_[size_t(b)];
    bool scalar_rhs = B.rows == 1 && B.cols == 1;
    if (!scalar_rhs && !A.same_shape(B))
      throw NumericError("elementwise shape mismatch " + A.shape_str() +
                         " vs " + B.shape_str());
    int32_t out = new_slot(A.rows, A.cols);
    Tensor& O = values_[size_t(out)];
    auto apply = [&](auto f) {
      if (scalar_rhs) {
        double bv = B.data[0];
        for (size_t i = 0; i < A.data.size(); ++i) O.data[i] = f(A.data[i], bv);
      } else {
        for (size_t i = 0; i < A.data.size(); ++i)
          O.data[i] = f(A.data[i], B.data[i]);
      }
    };
    switch (kind) {
      case OpKind::kAdd: apply([](double x, double y) { return x + y; }); break;
      case OpKind::kSub: apply([](double x, double y) { return x - y; }); break;
      case OpKind::kMul: apply([](double x, double y) { return x * y; }); break;
      case OpKind::kDiv: apply([](double x, double y) { return x / y; }); break;
      default: throw NumericError("not a binary op");
    }
    ops_.push_back({kind, a, b, -1, out, -1, 0.0, 0, 0, nullptr});
    return out;
  }

  int32_t reduce(OpKind kind, int32_t a) {
    const Tensor& A = values_[size_t(a)];
    int32_t out = new_slot(1, 1);
    double s = 0.0;
    for (double v : A.data) s += v;
    values_[size_t(out)].data[0] =
        kind == OpKind::kMeanAll ? s / double(A.size()) : s;
    ops_.push_back({kind, a, -1, -1, out, -1, 0.0, 0, 0, nullptr});
    return out;
  }

  void step_backward(const Op& op) {
    Tensor& dout = grads_[size_t(op.out)];
    switch (op.kind) {
      case OpKind::kLeaf:
        break;
      case OpKind::kMatmul: {
        const Tensor& A = values_[size_t(op.a)];
        const Tensor& B = values_[size_t(op.b)];
        Tensor& dA = grads_[size_t(op.a)];
        Tensor& dB = grads_[size_t(op.b)];
        // dA += dout * B^T, via an explicit transpose of the (small) rhs so
        // the product stays on the contiguous kernel.
        scratch_.resize(B.cols, B.rows);
        for (int32_t i = 0; i < B.rows; ++i)
          for (int32_t j = 0; j < B.cols; ++j)
            scratch_.at(j, i) = B.at(i, j);
        gemm_nn(dout.rows, dout.cols, B.rows, dout.data.data(),
                scratch_.data.data(), dA.data.data());
        gemm_tn(A.cols, A.rows, dout.cols, A.data.data(), dout.data.data(),
                dB.data.data());
        break;
      }
      case OpKind::kLinear: {
        const Tensor& X = values_[size_t(op.a)];
        const Tensor& W = values_[size_t(op.b)];
        Tensor& dX = grads_[size_t(op.a)];
        Tensor& dW = grads_[size_t(op.b)];
        Tensor& db = grads_[size_t(op.c)];
        gemm_nt(dout.rows, dout.cols, W.rows, dout.data.data(), W.data.data(),
                dX.data.data());
        gemm_tn(X.cols, X.rows, dout.cols, X.data.data(), dout.data.data(),
                dW.data.data());
        for (int32_t i = 0; i < dout.rows; ++i) {
          const double* dr = dout.row(i);
          for (int32_t j = 0; j < dout.cols; ++j) db.data[size_t(j)] += dr[j];
        }
        break;
      }
      case OpKind::kEdgeCat: {
        Tensor& dE = grads_[size_t(op.a)];
        Tensor& dV = grads_[size_t(op.b)];
        const int32_t ec = dE.cols, vc = dV.cols;
        for (int32_t i = 0; i < op.i0; ++i) {
          const double* dr = dout.row(i);
          double* der = dE.row(i);
          double* dsr = dV.row(op.idx[i]);
          double* drr = dV.row(op.idx2[i]);
          for (int32_t j = 0; j < ec; ++j) der[j] += dr[j];
          for (int32_t j = 0; j < vc; ++j) dsr[j] += dr[ec + j];
          for (int32_t j = 0; j < vc; ++j) drr[j] += dr[ec + vc + j];
        }
        break;
      }
      case OpKind::kAdd: {
        accumulate(op.a, dout, 1.0);
        accumulate_maybe_scalar(op.b, dout, 1.0);
        break;
      }
      case OpKind::kSub: {
        accumulate(op.a, dout, 1.0);
        accumulate_maybe_scalar(op.b, dout, -1.0);
        break;
      }
      case OpKind::kMul: {
        const Tensor& A = values_[size_t(op.a)];
        const Tensor& B = values_[size_t(op.b)];
        Tensor& dA = grads_[size_t(op.a)];
        Tensor& dB = grads_[size_t(op.b)];
        if (B.rows == 1 && B.cols == 1 && !A.same_shape(B)) {
          double bv = B.data[0], acc = 0.0;
          for (size_t i = 0; i < A.data.size(); ++i) {
            dA.data[i] += dout.data[i] * bv;
            acc += dout.data[i] * A.data[i];
          }
          dB.data[0] += acc;
        } else {
          for (size_t i = 0; i < A.data.size(); ++i) {
            dA.data[i] += dout.data[i] * B.data[i];
            dB.data[i] += dout.data[i] * A.data[i];
          }
        }
        break;
      }
      case OpKind::kDiv: {
        const Tensor& A = values_[size_t(op.a)];
        const Tensor& B = values_[size_t(op.b)];
        Tensor& dA = grads_[size_t(op.a)];
        Tensor& dB = grads_[size_t(op.b)];
        if (B.rows == 1 && B.cols == 1 && !A.same_shape(B)) {
          double bv = B.data[0], acc = 0.0;
          for (size_t i = 0; i < A.data.size(); ++i) {
            dA.data[i] += dout.data[i] / bv;
            acc += -dout.data[i] * A.data[i] / (bv * bv);
          }
          dB.data[0] += acc;
        } else {
          for (size_t i = 0; i < A.data.size(); ++i) {
            dA.data[i] += dout.data[i] / B.data[i];
            dB.data[i] += -dout.data[i] * A.data[i] / (B.data[i] * B.data[i]);
          }
        }
        break;
      }
      case OpKind::kScale:
        accumulate(op.a, dout, op.x);
        break;
      case OpKind::kAddRowVec: {
        Tensor& dA = grads_[size_t(op.a)];
        Tensor& dV = grads_[size_t(op.b)];
        for (int32_t i = 0; i < dout.rows; ++i) {
          const double* dr = dout.row(i);
          double* dar = dA.row(i);
          for (int32_t j = 0; j < dout.cols; ++j) {
            dar[j] += dr[j];
            dV.data[size_t(j)] += dr[j];
          }
        }
        break;
      }
      case OpKind::kConcatCols: {
        Tensor& dA = grads_[size_t(op.a)];
        Tensor& dB = grads_[size_t(op.b)];
        for (int32_t i = 0; i < dout.rows; ++i) {
          const double* dr = dout.row(i);
          double* dar = dA.row(i);
          double* dbr = dB.row(i);
          for (int32_t j = 0; j < dA.cols; ++j) dar[j] += dr[j];
          for (int32_t j = 0; j < dB.cols; ++j) dbr[j] += dr[dA.cols + j];
        }
        break;
      }
      case OpKind::kSliceCols: {
        Tensor& dA = grads_[size_t(op.a)];
        for (int32_t i = 0; i < dout.rows; ++i) {
          const double* dr = dout.row(i);
          double* dar = dA.row(i) + op.i0;
          for (int32_t j = 0; j < op.i1 - op.i0; ++j) dar[j] += dr[j];
        }
        break;
      }
      case OpKind::kRelu: {
        const Tensor& O = values_[size_t(op.out)];
        Tensor& dA = grads_[size_t(op.a)];
        for (size_t i = 0; i < O.data.size(); ++i)
          if (O.data[i] > 0.0) dA.data[i] += dout.data[i];
        break;
      }
      case OpKind::kSoftplus: {
        const Tensor& A = values_[size_t(op.a)];
        Tensor& dA = grads_[size_t(op.a)];
        for (size_t i = 0; i < A.data.size(); ++i)
          dA.data[i] += dout.data[i] / (1.0 + std::exp(-A.data[i]));
        break;
      }
      case OpKind::kLog: {
        const Tensor& A = values_[size_t(op.a)];
        Tensor& dA = grads_[size_t(op.a)];
        for (size_t i = 0; i < A.data.size(); ++i)
          dA.data[i] += dout.data[i] / A.data[i];
        break;
      }
      case OpKind::kDropout: {
        const Tensor& M = aux_[size_t(op.aux)];
        Tensor& dA = grads_[size_t(op.a)];
        for (size_t i = 0; i < M.data.size(); ++i)
          dA.data[i] += dout.data[i] * M.data[i];
        break;
      }
      case OpKind::kLayerNorm: {
        const Tensor& A = values_[size_t(op.a)];
        const Tensor& G = values_[size_t(op.b)];
        const Tensor& C = aux_[size_t(op.aux)];
        Tensor& dA = grads_[size_t(op.a)];
        Tensor& dG = grads_[size_t(op.b)];
        Tensor& dB = grads_[size_t(op.c)];
        int32_t d = A.cols;
        for (int32_t i = 0; i < A.rows; ++i) {
          const double* x = A.row(i);
          const double* dr = dout.row(i);
          double mu = C.at(i, 0), istd = C.at(i, 1);
          double mean_dy = 0.0, mean_dyy = 0.0;
          for (int32_t j = 0; j < d; ++j) {
            double y = (x[j] - mu) * istd;
            double dy = dr[j] * G.data[size_t(j)];
            dG.data[size_t(j)] += dr[j] * y;
            dB.data[size_t(j)] += dr[j];
            mean_dy += dy;
            mean_dyy += dy * y;
          }
          mean_dy /= d;
          mean_dyy /= d;
          double* dar = dA.row(i);
          for (int32_t j = 0; j < d; ++j) {
            double y = (x[j] - mu) * istd;
            double dy = dr[j] * G.data[size_t(j)];
            dar[j] += istd * (dy - mean_dy - y * mean_dyy);
          }
        }
        break;
      }
      case OpKind::kSegmentMean: {
        const Tensor& C = aux_[size_t(op.aux)];
        Tensor& dE = grads_[size_t(op.a)];
        for (int32_t e = 0; e < op.i0; ++e) {
          int32_t v = op.idx[e];
          double inv = 1.0 / C.data[size_t(v)];
          const double* dr = dout.row(v);
          double* der = dE.row(e);
          for (int32_t j = 0; j < dE.cols; ++j) der[j] += dr[j] * inv;
        }
        break;
      }
      case OpKind::kGatherRows: {
        Tensor& dA = grads_[size_t(op.a)];
        for (int32_t i = 0; i < op.i0; ++i) {
          const double* dr = dout.row(i);
          double* dar = dA.row(op.idx[i]);
          for (int32_t j = 0; j < dA.cols; ++j) dar[j] += dr[j];
        }
        break;
      }
      case OpKind::kSumAll: {
        Tensor& dA = grads_[size_t(op.a)];
        double g = dout.data[0];
        for (auto& v : dA.data) v += g;
        break;
      }
      case OpKind::kMeanAll: {
        Tensor& dA = grads_[size_t(op.a)];
        double g = dout.data[0] / double(dA.size());
        for (auto& v : dA.data) v += g;
        break;
      }
    }
  }

  void accumulate(int32_t slot, const Tensor& dout, double s) {
    Tensor& d = grads_[size_t(slot)];
    for (size_t i = 0; i < d.data.size(); ++i) d.data[i] += s * dout.data[i];
  }
  // rhs of a broadcast binary op: a [1,1] slot absorbs the full sum.
  void accumulate_maybe_scalar(int32_t slot, const Tensor& dout, double s) {
    Tensor& d = grads_[size_t(slot)];
    if (d.size() == 1 && dout.size() > 1) {
      double acc = 0.0;
      for (double v : dout.data) acc += v;
      d.data[0] += s * acc;
    } else {
      accumulate(slot, dout, s);
    }
  }

  std::vector<Op> ops_;
  // Deques so slot references stay valid while new slots are appended.
  std::deque<Tensor> values_;
  std::deque<Tensor> grads_;
  std::deque<Tensor> aux_;
  size_t used_ = 0;
  size_t aux_used_ = 0;
  Tensor scratch_;
};

// Compares reverse-mode gradients against central finite differences.
// `record` must read the current contents of `params`, push one input slot
// per parameter (in order) into `slots`, then build a scalar loss and push
// its slot last. Returns the maximum relative error over parameter entries.
// Only deterministic recordings are checkable; dropout must run in eval mode.
inline double grad_check(
    const std::function<void(Tape&, std::vector<int32_t>&)>& record,
    std::vector<Tensor*> params, double h = 1e-5, double denom_floor = 1e-8) {
  if (h <= 0.0) throw ConfigError("grad_check step must be positive");
  if (denom_floor <= 0.0) throw ConfigError("grad_check floor must be positive");
  Tape tape;
  std::vector<int32_t> slots;
  record(tape, slots);
  tape.backward(slots.back());
  auto eval_loss = [&] {
    Tape scratch;
    std::vector<int32_t> tmp;
    record(scratch, tmp);
    return scratch.value(tmp.back()).data[0];
  };
  double max_rel = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    const Tensor& analytic = tape.grad(slots[p]);
    for (size_t i = 0; i < params[p]->data.size(); ++i) {
      double saved = params[p]->data[i];
      auto at = [&](double delta) {
        params[p]->data[i] = saved + delta;
        return eval_loss();
      };
      // Five-point stencil keeps truncation error at O(h^4), so the
      // comparison is limited by roundoff rather than curvature.
      double fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) /
                  (12.0 * h);
      params[p]->data[i] = saved;
      double an = analytic.data[i];
      // Components below the floor are only held to absolute precision;
      // central differences cannot resolve them against roundoff.
      double denom = std::max({std::abs(fd), std::abs(an), denom_floor});
      max_rel = std::max(max_rel, std::abs(fd - an) / denom);
    }
  }
  return max_rel;
}

}  // namespace mstress
