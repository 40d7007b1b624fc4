#pragma once

// Minimal dense tensor core with reverse-mode differentiation. A Graph is a
// tape of 2-D matrices; ops record backward closures that accumulate into
// node gradients, and leaf nodes forward their gradient into an external
// parameter store. Single-threaded and deterministic: node order is creation
// order, backward runs in exact reverse.

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "scoreperf/common.hpp"

namespace scoreperf::neural {

template <class S>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<S> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), S(0)) {}

  S& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  const S& at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return v.size(); }

  template <class T>
  Mat<T> cast() const {
    Mat<T> out(rows, cols);
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
    return out;
  }
};

// Named parameter tensors plus parallel gradient buffers. Iteration order is
// the sorted name order everywhere (deterministic).
template <class S>
struct ParamStore {
  std::map<std::string, Mat<S>> value;
  std::map<std::string, Mat<S>> grad;

  Mat<S>& add(const std::string& name, int rows, int cols) {
    auto [it, fresh] = value.emplace(name, Mat<S>(rows, cols));
    if (!fresh) throw InternalError("duplicate parameter " + name);
    grad.emplace(name, Mat<S>(rows, cols));
    return it->second;
  }

  Mat<S>& at(const std::string& name) {
    auto it = value.find(name);
    if (it == value.end()) throw InternalError("unknown parameter " + name);
    return it->second;
  }

  const Mat<S>& at(const std::string& name) const {
    auto it = value.find(name);
    if (it == value.end()) throw InternalError("unknown parameter " + name);
    return it->second;
  }

  void zero_grad() {
    for (auto& [name, g] : grad) std::fill(g.v.begin(), g.v.end(), S(0));
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, m] : value) n += m.size();
    return n;
  }

  template <class T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& [name, m] : value) out.add(name, m.rows, m.cols).v = m.template cast<T>().v;
    return out;
  }
};

template <class S>
class Graph {
 public:
  using Ref = int;

  Ref constant(Mat<S> m) { return push(std::move(m), false, {}); }

  Ref leaf(ParamStore<S>& store, const std::string& name) {
    Mat<S>* sink = &store.grad.at(name);
    Ref r = push(store.at(name), true, {});
    nodes_[static_cast<std::size_t>(r)].back = [this, r, sink] {
      Mat<S>& g = grad(r);
      for (std::size_t i = 0; i < g.v.size(); ++i) sink->v[i] += g.v[i];
    };
    return r;
  }

  const Mat<S>& value(Ref r) const { return nodes_[static_cast<std::size_t>(r)].val; }
  Mat<S>& grad(Ref r) { return nodes_[static_cast<std::size_t>(r)].grad; }

  // ---- elementwise -------------------------------------------------------

  Ref add(Ref a, Ref b) {
    const Mat<S>&A = value(a), &B = value(b);
    check(A.rows == B.rows && A.cols == B.cols, "add: shape mismatch");
    Mat<S> out(A.rows, A.cols);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = A.v[i] + B.v[i];
    Ref r = push(std::move(out), needs(a) || needs(b), [this, a, b](Ref self) {
      const Mat<S>& g = grad(self);
      if (needs(a)) accum(a, g.v);
      if (needs(b)) accum(b, g.v);
    });
    return r;
  }

  Ref add_rowvec(Ref a, Ref bias) {
    const Mat<S>&A = value(a), &B = value(bias);
    check(B.rows == 1 && B.cols == A.cols, "add_rowvec: shape mismatch");
    Mat<S> out = A;
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < A.cols; ++j) out.at(i, j) += B.at(0, j);
    return push(std::move(out), needs(a) || needs(bias), [this, a, bias](Ref self) {
      const Mat<S>& g = grad(self);
      if (needs(a)) accum(a, g.v);
      if (needs(bias)) {
        Mat<S>& gb = grad(bias);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
      }
    });
  }

  Ref mul(Ref a, Ref b) {
    const Mat<S>&A = value(a), &B = value(b);
    check(A.rows == B.rows && A.cols == B.cols, "mul: shape mismatch");
    Mat<S> out(A.rows, A.cols);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = A.v[i] * B.v[i];
    return push(std::move(out), needs(a) || needs(b), [this, a, b](Ref self) {
      const Mat<S>& g = grad(self);
      if (needs(a)) {
        Mat<S>& ga = grad(a);
        const Mat<S>& B2 = value(b);
        for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * B2.v[i];
      }
      if (needs(b)) {
        Mat<S>& gb = grad(b);
        const Mat<S>& A2 = value(a);
        for (std::size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i] * A2.v[i];
      }
    });
  }

  Ref scale(Ref a, S c) {
    Mat<S> out = value(a);
    for (auto& x : out.v) x *= c;
    return push(std::move(out), needs(a), [this, a, c](Ref self) {
      const Mat<S>& g = grad(self);
      if (!needs(a)) return;
      Mat<S>& ga = grad(a);
      for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * c;
    });
  }

  Ref silu(Ref a) {
    const Mat<S>& A = value(a);
    Mat<S> out(A.rows, A.cols);
    for (std::size_t i = 0; i < A.v.size(); ++i) {
      S s = sigmoid(A.v[i]);
      out.v[i] = A.v[i] * s;
    }
    return push(std::move(out), needs(a), [this, a](Ref self) {
      if (!needs(a)) return;
      const Mat<S>& g = grad(self);
      const Mat<S>& A2 = value(a);
      Mat<S>& ga = grad(a);
      for (std::size_t i = 0; i < g.v.size(); ++i) {
        S s = sigmoid(A2.v[i]);
        ga.v[i] += g.v[i] * (s + A2.v[i] * s * (S(1) - s));
      }
    });
  }

  // ---- linear algebra ----------------------------------------------------

  Ref matmul(Ref a, Ref b) {
    const Mat<S>&A = value(a), &B = value(b);
    check(A.cols == B.rows, "matmul: inner dim mismatch");
    Mat<S> out(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i)
      for (int k = 0; k < A.cols; ++k) {
        S aik = A.at(i, k);
        if (aik == S(0)) continue;
        for (int j = 0; j < B.cols; ++j) out.at(i, j) += aik * B.at(k, j);
      }
    return push(std::move(out), needs(a) || needs(b), [this, a, b](Ref self) {
      const Mat<S>& g = grad(self);
      const Mat<S>&A2 = value(a), &B2 = value(b);
      if (needs(a)) {  // dA += g * B^T
        Mat<S>& ga = grad(a);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) {
            S gij = g.at(i, j);
            if (gij == S(0)) continue;
            for (int k = 0; k < A2.cols; ++k) ga.at(i, k) += gij * B2.at(k, j);
          }
      }
      if (needs(b)) {  // dB += A^T * g
        Mat<S>& gb = grad(b);
        for (int i = 0; i < A2.rows; ++i)
          for (int k = 0; k < A2.cols; ++k) {
            S aik = A2.at(i, k);
            if (aik == S(0)) continue;
            for (int j = 0; j < g.cols; ++j) gb.at(k, j) += aik * g.at(i, j);
          }
      }
    });
  }

  // a * b^T  with a [r x k], b [c x k] -> [r x c]
  Ref matmul_nt(Ref a, Ref b) {
    const Mat<S>&A = value(a), &B = value(b);
    check(A.cols == B.cols, "matmul_nt: inner dim mismatch");
    Mat<S> out(A.rows, B.rows);
    for (int i = 0; i < A.rows; ++i)
      for (int j = 0; j < B.rows; ++j) {
        S acc = S(0);
        for (int k = 0; k < A.cols; ++k) acc += A.at(i, k) * B.at(j, k);
        out.at(i, j) = acc;
      }
    return push(std::move(out), needs(a) || needs(b), [this, a, b](Ref self) {
      const Mat<S>& g = grad(self);
      const Mat<S>&A2 = value(a), &B2 = value(b);
      if (needs(a)) {  // dA += g * B
        Mat<S>& ga = grad(a);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) {
            S gij = g.at(i, j);
            if (gij == S(0)) continue;
            for (int k = 0; k < B2.cols; ++k) ga.at(i, k) += gij * B2.at(j, k);
          }
      }
      if (needs(b)) {  // dB += g^T * A
        Mat<S>& gb = grad(b);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) {
            S gij = g.at(i, j);
            if (gij == S(0)) continue;
            for (int k = 0; k < A2.cols; ++k) gb.at(j, k) += gij * A2.at(i, k);
          }
      }
    });
  }

  // ---- shape ops ---------------------------------------------------------

  Ref slice_cols(Ref a, int c0, int c1) {
    const Mat<S>& A = value(a);
    check(0 <= c0 && c0 < c1 && c1 <= A.cols, "slice_cols: bad range");
    Mat<S> out(A.rows, c1 - c0);
    for (int i = 0; i < A.rows; ++i)
      for (int j = c0; j < c1; ++j) out.at(i, j - c0) = A.at(i, j);
    return push(std::move(out), needs(a), [this, a, c0](Ref self) {
      if (!needs(a)) return;
      const Mat<S>& g = grad(self);
      Mat<S>& ga = grad(a);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ga.at(i, j + c0) += g.at(i, j);
    });
  }

  Ref concat_cols(const std::vector<Ref>& parts) {
    check(!parts.empty(), "concat_cols: empty");
    int rows = value(parts[0]).rows, cols = 0;
    for (Ref p : parts) {
      check(value(p).rows == rows, "concat_cols: row mismatch");
      cols += value(p).cols;
    }
    Mat<S> out(rows, cols);
    int off = 0;
    for (Ref p : parts) {
      const Mat<S>& P = value(p);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < P.cols; ++j) out.at(i, off + j) = P.at(i, j);
      off += P.cols;
    }
    bool ng = false;
    for (Ref p : parts) ng = ng || needs(p);
    return push(std::move(out), ng, [this, parts](Ref self) {
      const Mat<S>& g = grad(self);
      int off2 = 0;
      for (Ref p : parts) {
        const Mat<S>& P = value(p);
        if (needs(p)) {
          Mat<S>& gp = grad(p);
          for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < P.cols; ++j) gp.at(i, j) += g.at(i, off2 + j);
        }
        off2 += P.cols;
      }
    });
  }

  Ref concat_rows(const std::vector<Ref>& parts) {
    check(!parts.empty(), "concat_rows: empty");
    int cols = value(parts[0]).cols, rows = 0;
    for (Ref p : parts) {
      check(value(p).cols == cols, "concat_rows: col mismatch");
      rows += value(p).rows;
    }
    Mat<S> out(rows, cols);
    int off = 0;
    for (Ref p : parts) {
      const Mat<S>& P = value(p);
      for (int i = 0; i < P.rows; ++i)
        for (int j = 0; j < cols; ++j) out.at(off + i, j) = P.at(i, j);
      off += P.rows;
    }
    bool ng = false;
    for (Ref p : parts) ng = ng || needs(p);
    return push(std::move(out), ng, [this, parts](Ref self) {
      const Mat<S>& g = grad(self);
      int off2 = 0;
      for (Ref p : parts) {
        const Mat<S>& P = value(p);
        if (needs(p)) {
          Mat<S>& gp = grad(p);
          for (int i = 0; i < P.rows; ++i)
            for (int j = 0; j < g.cols; ++j) gp.at(i, j) += g.at(off2 + i, j);
        }
        off2 += P.rows;
      }
    });
  }

  // Row-major reshape (element order preserved).
  Ref reshape(Ref a, int rows, int cols) {
    const Mat<S>& A = value(a);
    check(static_cast<long long>(rows) * cols == static_cast<long long>(A.rows) * A.cols,
          "reshape: size mismatch");
    Mat<S> out(rows, cols);
    out.v = A.v;
    return push(std::move(out), needs(a), [this, a](Ref self) {
      if (!needs(a)) return;
      const Mat<S>& g = grad(self);
      Mat<S>& ga = grad(a);
      for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
    });
  }

  Ref gather_rows(Ref table, std::vector<int> ids) {
    const Mat<S>& T = value(table);
    for (int id : ids) check(0 <= id && id < T.rows, "gather_rows: id out of range");
    Mat<S> out(static_cast<int>(ids.size()), T.cols);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int j = 0; j < T.cols; ++j) out.at(static_cast<int>(i), j) = T.at(ids[i], j);
    return push(std::move(out), needs(table), [this, table, ids = std::move(ids)](Ref self) {
      if (!needs(table)) return;
      const Mat<S>& g = grad(self);
      Mat<S>& gt = grad(table);
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < g.cols; ++j) gt.at(ids[i], j) += g.at(static_cast<int>(i), j);
    });
  }

  Ref sum_list(const std::vector<Ref>& parts) {
    check(!parts.empty(), "sum_list: empty");
    Mat<S> out = value(parts[0]);
    for (std::size_t p = 1; p < parts.size(); ++p) {
      const Mat<S>& P = value(parts[p]);
      check(P.rows == out.rows && P.cols == out.cols, "sum_list: shape mismatch");
      for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += P.v[i];
    }
    bool ng = false;
    for (Ref p : parts) ng = ng || needs(p);
    return push(std::move(out), ng, [this, parts](Ref self) {
      const Mat<S>& g = grad(self);
      for (Ref p : parts)
        if (needs(p)) accum(p, g.v);
    });
  }

  // ---- normalization / attention pieces -----------------------------------

  Ref layernorm(Ref a, Ref gamma, Ref beta, S eps = S(1e-5)) {
    const Mat<S>&A = value(a), &G = value(gamma), &B = value(beta);
    check(G.rows == 1 && G.cols == A.cols && B.rows == 1 && B.cols == A.cols,
          "layernorm: shape mismatch");
    Mat<S> out(A.rows, A.cols);
    Mat<S> xhat(A.rows, A.cols);
    std::vector<S> inv_std(static_cast<std::size_t>(A.rows));
    for (int i = 0; i < A.rows; ++i) {
      S mean = S(0);
      for (int j = 0; j < A.cols; ++j) mean += A.at(i, j);
      mean /= static_cast<S>(A.cols);
      S var = S(0);
      for (int j = 0; j < A.cols; ++j) {
        S d = A.at(i, j) - mean;
        var += d * d;
      }
      var /= static_cast<S>(A.cols);
      S istd = S(1) / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(i)] = istd;
      for (int j = 0; j < A.cols; ++j) {
        xhat.at(i, j) = (A.at(i, j) - mean) * istd;
        out.at(i, j) = xhat.at(i, j) * G.at(0, j) + B.at(0, j);
      }
    }
    return push(std::move(out), needs(a) || needs(gamma) || needs(beta),
                [this, a, gamma, beta, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Ref self) {
                  const Mat<S>& g = grad(self);
                  const Mat<S>& G2 = value(gamma);
                  if (needs(gamma)) {
                    Mat<S>& gg = grad(gamma);
                    for (int i = 0; i < g.rows; ++i)
                      for (int j = 0; j < g.cols; ++j) gg.at(0, j) += g.at(i, j) * xhat.at(i, j);
                  }
                  if (needs(beta)) {
                    Mat<S>& gb = grad(beta);
                    for (int i = 0; i < g.rows; ++i)
                      for (int j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
                  }
                  if (needs(a)) {
                    Mat<S>& ga = grad(a);
                    const int C = g.cols;
                    for (int i = 0; i < g.rows; ++i) {
                      S mean_dxhat = S(0), mean_dxhat_xhat = S(0);
                      for (int j = 0; j < C; ++j) {
                        S dxhat = g.at(i, j) * G2.at(0, j);
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat.at(i, j);
                      }
                      mean_dxhat /= static_cast<S>(C);
                      mean_dxhat_xhat /= static_cast<S>(C);
                      for (int j = 0; j < C; ++j) {
                        S dxhat = g.at(i, j) * G2.at(0, j);
                        ga.at(i, j) += inv_std[static_cast<std::size_t>(i)] *
                                       (dxhat - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat);
                      }
                    }
                  }
                });
  }

  // Row softmax; when causal, entry (i, j) is masked for j > i.
  Ref softmax_rows(Ref a, bool causal) {
    const Mat<S>& A = value(a);
    Mat<S> out(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i) {
      int limit = causal ? std::min(i + 1, A.cols) : A.cols;
      check(limit > 0, "softmax_rows: fully masked row");
      S mx = A.at(i, 0);
      for (int j = 1; j < limit; ++j) mx = std::max(mx, A.at(i, j));
      S denom = S(0);
      for (int j = 0; j < limit; ++j) {
        out.at(i, j) = std::exp(A.at(i, j) - mx);
        denom += out.at(i, j);
      }
      for (int j = 0; j < limit; ++j) out.at(i, j) /= denom;
      for (int j = limit; j < A.cols; ++j) out.at(i, j) = S(0);
    }
    Mat<S> probs = out;  // saved for backward
    return push(std::move(out), needs(a), [this, a, probs = std::move(probs), causal](Ref self) {
      if (!needs(a)) return;
      const Mat<S>& g = grad(self);
      Mat<S>& ga = grad(a);
      for (int i = 0; i < g.rows; ++i) {
        int limit = causal ? std::min(i + 1, g.cols) : g.cols;
        S dot = S(0);
        for (int j = 0; j < limit; ++j) dot += g.at(i, j) * probs.at(i, j);
        for (int j = 0; j < limit; ++j)
          ga.at(i, j) += probs.at(i, j) * (g.at(i, j) - dot);
      }
    });
  }

  // Weighted cross entropy over rows: sum_i w_i * (logsumexp(x_i) - x_i[t_i]).
  // Rows with weight 0 contribute nothing (and receive no gradient).
  Ref ce_rows(Ref logits, std::vector<int> targets, std::vector<S> weights) {
    const Mat<S>& X = value(logits);
    check(static_cast<int>(targets.size()) == X.rows, "ce_rows: target count");
    check(weights.size() == targets.size(), "ce_rows: weight count");
    Mat<S> probs(X.rows, X.cols);
    S total = S(0);
    for (int i = 0; i < X.rows; ++i) {
      if (weights[static_cast<std::size_t>(i)] == S(0)) continue;
      check(0 <= targets[static_cast<std::size_t>(i)] && targets[static_cast<std::size_t>(i)] < X.cols,
            "ce_rows: target out of range");
      S mx = X.at(i, 0);
      for (int j = 1; j < X.cols; ++j) mx = std::max(mx, X.at(i, j));
      S denom = S(0);
      for (int j = 0; j < X.cols; ++j) {
        probs.at(i, j) = std::exp(X.at(i, j) - mx);
        denom += probs.at(i, j);
      }
      for (int j = 0; j < X.cols; ++j) probs.at(i, j) /= denom;
      total += weights[static_cast<std::size_t>(i)] *
               (std::log(denom) + mx - X.at(i, targets[static_cast<std::size_t>(i)]));
    }
    Mat<S> out(1, 1);
    out.at(0, 0) = total;
    return push(std::move(out), needs(logits),
                [this, logits, probs = std::move(probs), targets = std::move(targets),
                 weights = std::move(weights)](Ref self) {
                  if (!needs(logits)) return;
                  const Mat<S>& g = grad(self);
                  Mat<S>& gx = grad(logits);
                  S scale = g.at(0, 0);
                  for (int i = 0; i < gx.rows; ++i) {
                    S w = weights[static_cast<std::size_t>(i)];
                    if (w == S(0)) continue;
                    for (int j = 0; j < gx.cols; ++j) {
                      S onehot = (j == targets[static_cast<std::size_t>(i)]) ? S(1) : S(0);
                      gx.at(i, j) += scale * w * (probs.at(i, j) - onehot);
                    }
                  }
                });
  }

  Ref add_scalars(const std::vector<Ref>& parts) { return sum_list(parts); }

  void backward(Ref root) {
    Mat<S>& g = grad(root);
    check(value(root).rows == 1 && value(root).cols == 1, "backward: root must be scalar");
    g = Mat<S>(1, 1);
    g.at(0, 0) = S(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.back) n.back();
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> val;
    Mat<S> grad;
    bool needs_grad = false;
    std::function<void()> back;
  };

  std::vector<Node> nodes_;

  static S sigmoid(S x) { return S(1) / (S(1) + std::exp(-x)); }

  static void check(bool cond, const char* msg) {
    if (!cond) throw InternalError(std::string("graph: ") + msg);
  }

  bool needs(Ref r) const { return nodes_[static_cast<std::size_t>(r)].needs_grad; }

  void accum(Ref r, const std::vector<S>& g) {
    Mat<S>& dst = grad(r);
    for (std::size_t i = 0; i < g.size(); ++i) dst.v[i] += g[i];
  }

  Ref push(Mat<S> val, bool needs_grad, std::function<void(Ref)> back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    n.grad = Mat<S>(n.val.rows, n.val.cols);
    nodes_.push_back(std::move(n));
    Ref r = static_cast<Ref>(nodes_.size() - 1);
    if (back) nodes_.back().back = [this, r, back = std::move(back)] { back(r); };
    return r;
  }
};

}  // namespace scoreperf::neural
