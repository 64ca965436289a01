#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "cqa/rng.hpp"
#include "cqa/tensor.hpp"

namespace cqa {

// Reverse-mode tape over 2-D tensors. Nodes are append-only, so every parent
// index is smaller than its child's; backward() walks the tape once in
// reverse. Kernels never mutate their inputs and check outputs for NaN/Inf.
template <typename T>
class Tape {
 public:
  using Ref = std::int32_t;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // sized lazily on first contribution
    std::vector<Ref> parents;
    std::function<void(Tape&, Ref)> backprop;
    bool needs_grad = false;
  };

  Ref leaf(Tensor<T> value, bool needs_grad = true) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Ref>(nodes_.size() - 1);
  }
  Ref constant(Tensor<T> value) { return leaf(std::move(value), false); }

  const Tensor<T>& value(Ref id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor<T>& grad(Ref id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool has_grad(Ref id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }
  std::size_t num_nodes() const { return nodes_.size(); }

  // --- core kernels ------------------------------------------------------

  Ref matmul(Ref a, Ref b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    if (A.cols() != B.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
    Tensor<T> C(A.rows(), B.cols());
    emap(C) = cmap(A) * cmap(B);
    return push(std::move(C), {a, b}, [](Tape& t, Ref self) {
      auto [a2, b2] = t.parents2(self);
      const Tensor<T>& G = t.nodes_[self].grad;
      if (t.wants(a2)) emap(t.grad_buf(a2)) += cmap(G) * cmap(t.value(b2)).transpose();
      if (t.wants(b2)) emap(t.grad_buf(b2)) += cmap(t.value(a2)).transpose() * cmap(G);
    });
  }

  Ref add(Ref a, Ref b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    if (!A.same_shape(B)) throw ShapeMismatch("add: shapes differ");
    Tensor<T> C = A;
    for (std::int64_t i = 0; i < C.size(); ++i) C.at(i) += B.at(i);
    return push(std::move(C), {a, b}, [](Tape& t, Ref self) {
      auto [a2, b2] = t.parents2(self);
      const Tensor<T>& G = t.nodes_[self].grad;
      if (t.wants(a2)) t.axpy(G, T(1), a2);
      if (t.wants(b2)) t.axpy(G, T(1), b2);
    });
  }

  Ref sub(Ref a, Ref b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    if (!A.same_shape(B)) throw ShapeMismatch("sub: shapes differ");
    Tensor<T> C = A;
    for (std::int64_t i = 0; i < C.size(); ++i) C.at(i) -= B.at(i);
    return push(std::move(C), {a, b}, [](Tape& t, Ref self) {
      auto [a2, b2] = t.parents2(self);
      const Tensor<T>& G = t.nodes_[self].grad;
      if (t.wants(a2)) t.axpy(G, T(1), a2);
      if (t.wants(b2)) t.axpy(G, T(-1), b2);
    });
  }

  // Broadcast a 1 x n bias over every row of an m x n matrix.
  Ref add_rowvec(Ref a, Ref bias) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(bias);
    if (B.rows() != 1 || B.cols() != A.cols()) throw ShapeMismatch("add_rowvec: bias must be 1 x cols");
    Tensor<T> C = A;
    for (std::int64_t r = 0; r < C.rows(); ++r)
      for (std::int64_t c = 0; c < C.cols(); ++c) C(r, c) += B(0, c);
    return push(std::move(C), {a, bias}, [](Tape& t, Ref self) {
      auto [a2, b2] = t.parents2(self);
      const Tensor<T>& G = t.nodes_[self].grad;
      if (t.wants(a2)) t.axpy(G, T(1), a2);
      if (t.wants(b2)) {
        Tensor<T>& gb = t.grad_buf(b2);
        for (std::int64_t r = 0; r < G.rows(); ++r)
          for (std::int64_t c = 0; c < G.cols(); ++c) gb(0, c) += G(r, c);
      }
    });
  }

  Ref mul(Ref a, Ref b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    if (!A.same_shape(B)) throw ShapeMismatch("mul: shapes differ");
    Tensor<T> C = A;
    for (std::int64_t i = 0; i < C.size(); ++i) C.at(i) *= B.at(i);
    return push(std::move(C), {a, b}, [](Tape& t, Ref self) {
      auto [a2, b2] = t.parents2(self);
      const Tensor<T>& G = t.nodes_[self].grad;
      if (t.wants(a2)) {
        Tensor<T>& ga = t.grad_buf(a2);
        const Tensor<T>& B2 = t.value(b2);
        for (std::int64_t i = 0; i < G.size(); ++i) ga.at(i) += G.at(i) * B2.at(i);
      }
      if (t.wants(b2)) {
        Tensor<T>& gb = t.grad_buf(b2);
        const Tensor<T>& A2 = t.value(a2);
        for (std::int64_t i = 0; i < G.size(); ++i) gb.at(i) += G.at(i) * A2.at(i);
      }
    });
  }

  Ref scale(Ref a, T c) {
    Tensor<T> C = value(a);
    for (std::int64_t i = 0; i < C.size(); ++i) C.at(i) *= c;
    return push(std::move(C), {a}, [c](Tape& t, Ref self) {
      Ref a2 = t.nodes_[self].parents[0];
      if (t.wants(a2)) t.axpy(t.nodes_[self].grad, c, a2);
    });
  }

  // Multiply each row of X (m x n) by the matching entry of s (m x 1).
  Ref scale_rows(Ref x, Ref s) {
    const Tensor<T>& X = value(x);
    const Tensor<T>& S = value(s);
    if (S.rows() != X.rows() || S.cols() != 1) throw ShapeMismatch("scale_rows: scale must be rows x 1");
    Tensor<T> C = X;
    for (std::int64_t r = 0; r < C.rows(); ++r)
      for (std::int64_t c = 0; c < C.cols(); ++c) C(r, c) *= S(r, 0);
    return push(std::move(C), {x, s}, [](Tape& t, Ref self) {
      auto [x2, s2] = t.parents2(self);
      const Tensor<T>& G = t.nodes_[self].grad;
      const Tensor<T>& X2 = t.value(x2);
      const Tensor<T>& S2 = t.value(s2);
      if (t.wants(x2)) {
        Tensor<T>& gx = t.grad_buf(x2);
        for (std::int64_t r = 0; r < G.rows(); ++r)
          for (std::int64_t c = 0; c < G.cols(); ++c) gx(r, c) += G(r, c) * S2(r, 0);
      }
      if (t.wants(s2)) {
        Tensor<T>& gs = t.grad_buf(s2);
        for (std::int64_t r = 0; r < G.rows(); ++r) {
          T acc = T(0);
          for (std::int64_t c = 0; c < G.cols(); ++c) acc += G(r, c) * X2(r, c);
          gs(r, 0) += acc;
        }
      }
    });
  }

  // Per-row dot product of two m x n matrices -> m x 1.
  Ref rows_dot(Ref a, Ref b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    if (!A.same_shape(B)) throw ShapeMismatch("rows_dot: shapes differ");
    Tensor<T> C(A.rows(), 1);
    for (std::int64_t r = 0; r < A.rows(); ++r) {
      T acc = T(0);
      for (std::int64_t c = 0; c < A.cols(); ++c) acc += A(r, c) * B(r, c);
      C(r, 0) = acc;
    }
    return push(std::move(C), {a, b}, [](Tape& t, Ref self) {
      auto [a2, b2] = t.parents2(self);
      const Tensor<T>& G = t.nodes_[self].grad;
      const Tensor<T>& A2 = t.value(a2);
      const Tensor<T>& B2 = t.value(b2);
      if (t.wants(a2)) {
        Tensor<T>& ga = t.grad_buf(a2);
        for (std::int64_t r = 0; r < A2.rows(); ++r)
          for (std::int64_t c = 0; c < A2.cols(); ++c) ga(r, c) += G(r, 0) * B2(r, c);
      }
      if (t.wants(b2)) {
        Tensor<T>& gb = t.grad_buf(b2);
        for (std::int64_t r = 0; r < A2.rows(); ++r)
          for (std::int64_t c = 0; c < A2.cols(); ++c) gb(r, c) += G(r, 0) * A2(r, c);
      }
    });
  }

  Ref concat_cols(const std::vector<Ref>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
    std::int64_t rows = value(parts[0]).rows();
    std::int64_t cols = 0;
    for (Ref p : parts) {
      if (value(p).rows() != rows) throw ShapeMismatch("concat_cols: row counts differ");
      cols += value(p).cols();
    }
    Tensor<T> C(rows, cols);
    std::int64_t off = 0;
    for (Ref p : parts) {
      const Tensor<T>& P = value(p);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < P.cols(); ++c) C(r, off + c) = P(r, c);
      off += P.cols();
    }
    return push(std::move(C), parts, [](Tape& t, Ref self) {
      const Tensor<T>& G = t.nodes_[self].grad;
      std::int64_t off2 = 0;
      for (Ref p : t.nodes_[self].parents) {
        const std::int64_t w = t.value(p).cols();
        if (t.wants(p)) {
          Tensor<T>& gp = t.grad_buf(p);
          for (std::int64_t r = 0; r < G.rows(); ++r)
            for (std::int64_t c = 0; c < w; ++c) gp(r, c) += G(r, off2 + c);
        }
        off2 += w;
      }
    });
  }

  Ref slice_cols(Ref a, std::int64_t first, std::int64_t width) {
    const Tensor<T>& A = value(a);
    if (first < 0 || width < 0 || first + width > A.cols()) throw ShapeMismatch("slice_cols: out of range");
    Tensor<T> C(A.rows(), width);
    for (std::int64_t r = 0; r < A.rows(); ++r)
      for (std::int64_t c = 0; c < width; ++c) C(r, c) = A(r, first + c);
    return push(std::move(C), {a}, [first, width](Tape& t, Ref self) {
      Ref a2 = t.nodes_[self].parents[0];
      if (!t.wants(a2)) return;
      const Tensor<T>& G = t.nodes_[self].grad;
      Tensor<T>& ga = t.grad_buf(a2);
      for (std::int64_t r = 0; r < G.rows(); ++r)
        for (std::int64_t c = 0; c < width; ++c) ga(r, first + c) += G(r, c);
    });
  }

  // Rows of X re-indexed by idx: Y[r] = X[idx[r]].
  Ref gather_rows(Ref x, std::vector<std::int32_t> idx) {
    const Tensor<T>& X = value(x);
    Tensor<T> C(static_cast<std::int64_t>(idx.size()), X.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0 || idx[r] >= X.rows()) throw ShapeMismatch("gather_rows: index out of range");
      for (std::int64_t c = 0; c < X.cols(); ++c) C(static_cast<std::int64_t>(r), c) = X(idx[r], c);
    }
    return push(std::move(C), {x}, [idx = std::move(idx)](Tape& t, Ref self) {
      Ref x2 = t.nodes_[self].parents[0];
      if (!t.wants(x2)) return;
      const Tensor<T>& G = t.nodes_[self].grad;
      Tensor<T>& gx = t.grad_buf(x2);
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::int64_t c = 0; c < G.cols(); ++c) gx(idx[r], c) += G(static_cast<std::int64_t>(r), c);
    });
  }

  // y[r] = X(r, idx[r]); used to pick the log-probability of the true class.
  Ref pick_cols(Ref x, std::vector<std::int32_t> idx) {
    const Tensor<T>& X = value(x);
    if (static_cast<std::int64_t>(idx.size()) != X.rows()) throw ShapeMismatch("pick_cols: one index per row");
    Tensor<T> C(X.rows(), 1);
    for (std::int64_t r = 0; r < X.rows(); ++r) {
      if (idx[static_cast<std::size_t>(r)] < 0 || idx[static_cast<std::size_t>(r)] >= X.cols())
        throw ShapeMismatch("pick_cols: index out of range");
      C(r, 0) = X(r, idx[static_cast<std::size_t>(r)]);
    }
    return push(std::move(C), {x}, [idx = std::move(idx)](Tape& t, Ref self) {
      Ref x2 = t.nodes_[self].parents[0];
      if (!t.wants(x2)) return;
      const Tensor<T>& G = t.nodes_[self].grad;
      Tensor<T>& gx = t.grad_buf(x2);
      for (std::int64_t r = 0; r < G.rows(); ++r) gx(r, idx[static_cast<std::size_t>(r)]) += G(r, 0);
    });
  }

  // Per-segment row sums: Y[s] = sum of rows r with seg[r] == s.
  Ref segment_sum(Ref x, std::vector<std::int32_t> seg, std::int32_t num_segments) {
    const Tensor<T>& X = value(x);
    if (static_cast<std::int64_t>(seg.size()) != X.rows()) throw ShapeMismatch("segment_sum: one id per row");
    Tensor<T> C(num_segments, X.cols());
    for (std::size_t r = 0; r < seg.size(); ++r) {
      if (seg[r] < 0 || seg[r] >= num_segments) throw ShapeMismatch("segment_sum: id out of range");
      for (std::int64_t c = 0; c < X.cols(); ++c) C(seg[r], c) += X(static_cast<std::int64_t>(r), c);
    }
    return push(std::move(C), {x}, [seg = std::move(seg)](Tape& t, Ref self) {
      Ref x2 = t.nodes_[self].parents[0];
      if (!t.wants(x2)) return;
      const Tensor<T>& G = t.nodes_[self].grad;
      Tensor<T>& gx = t.grad_buf(x2);
      for (std::size_t r = 0; r < seg.size(); ++r)
        for (std::int64_t c = 0; c < G.cols(); ++c) gx(static_cast<std::int64_t>(r), c) += G(seg[r], c);
    });
  }

  Ref segment_mean(Ref x, const std::vector<std::int32_t>& seg, std::int32_t num_segments) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(num_segments), 0);
    for (std::int32_t s : seg) counts[static_cast<std::size_t>(s)]++;
    Ref sum = segment_sum(x, seg, num_segments);
    Tensor<T> inv(num_segments, 1);
    for (std::int32_t s = 0; s < num_segments; ++s)
      inv(s, 0) = counts[static_cast<std::size_t>(s)] > 0 ? T(1) / static_cast<T>(counts[static_cast<std::size_t>(s)]) : T(0);
    return scale_rows(sum, constant(std::move(inv)));
  }

  Ref segment_max(Ref x, std::vector<std::int32_t> seg, std::int32_t num_segments) {
    const Tensor<T>& X = value(x);
    if (static_cast<std::int64_t>(seg.size()) != X.rows()) throw ShapeMismatch("segment_max: one id per row");
    Tensor<T> C(num_segments, X.cols());
    std::vector<std::int32_t> amax(static_cast<std::size_t>(num_segments * X.cols()), -1);
    for (std::size_t r = 0; r < seg.size(); ++r) {
      for (std::int64_t c = 0; c < X.cols(); ++c) {
        std::size_t slot = static_cast<std::size_t>(seg[r] * X.cols() + c);
        if (amax[slot] < 0 || X(static_cast<std::int64_t>(r), c) > C(seg[r], c)) {
          C(seg[r], c) = X(static_cast<std::int64_t>(r), c);
          amax[slot] = static_cast<std::int32_t>(r);
        }
      }
    }
    for (std::int32_t s = 0; s < num_segments; ++s)
      if (amax[static_cast<std::size_t>(s * X.cols())] < 0)
        throw ShapeMismatch("segment_max: empty segment");
    return push(std::move(C), {x}, [amax = std::move(amax)](Tape& t, Ref self) {
      Ref x2 = t.nodes_[self].parents[0];
      if (!t.wants(x2)) return;
      const Tensor<T>& G = t.nodes_[self].grad;
      Tensor<T>& gx = t.grad_buf(x2);
      for (std::int64_t s = 0; s < G.rows(); ++s)
        for (std::int64_t c = 0; c < G.cols(); ++c)
          gx(amax[static_cast<std::size_t>(s * G.cols() + c)], c) += G(s, c);
    });
  }

  // Softmax over rows sharing a segment id, independently per column.
  // Realizes attention normalization over each node's in-neighbors.
  Ref segment_softmax(Ref x, std::vector<std::int32_t> seg, std::int32_t num_segments) {
    const Tensor<T>& X = value(x);
    if (static_cast<std::int64_t>(seg.size()) != X.rows()) throw ShapeMismatch("segment_softmax: one id per row");
    const std::int64_t n = X.cols();
    Tensor<T> mx(num_segments, n);
    mx.fill(std::numeric_limits<T>::lowest());
    for (std::size_t r = 0; r < seg.size(); ++r)
      for (std::int64_t c = 0; c < n; ++c)
        mx(seg[r], c) = std::max(mx(seg[r], c), X(static_cast<std::int64_t>(r), c));
    Tensor<T> Z(num_segments, n);
    Tensor<T> Y(X.rows(), n);
    for (std::size_t r = 0; r < seg.size(); ++r)
      for (std::int64_t c = 0; c < n; ++c) {
        T e = std::exp(X(static_cast<std::int64_t>(r), c) - mx(seg[r], c));
        Y(static_cast<std::int64_t>(r), c) = e;
        Z(seg[r], c) += e;
      }
    for (std::size_t r = 0; r < seg.size(); ++r)
      for (std::int64_t c = 0; c < n; ++c) Y(static_cast<std::int64_t>(r), c) /= Z(seg[r], c);
    return push(std::move(Y), {x}, [seg = std::move(seg), num_segments](Tape& t, Ref self) {
      Ref x2 = t.nodes_[self].parents[0];
      if (!t.wants(x2)) return;
      const Tensor<T>& G = t.nodes_[self].grad;
      const Tensor<T>& Y2 = t.value(self);
      Tensor<T> dot(num_segments, G.cols());
      for (std::size_t r = 0; r < seg.size(); ++r)
        for (std::int64_t c = 0; c < G.cols(); ++c)
          dot(seg[r], c) += G(static_cast<std::int64_t>(r), c) * Y2(static_cast<std::int64_t>(r), c);
      Tensor<T>& gx = t.grad_buf(x2);
      for (std::size_t r = 0; r < seg.size(); ++r)
        for (std::int64_t c = 0; c < G.cols(); ++c)
          gx(static_cast<std::int64_t>(r), c) +=
              Y2(static_cast<std::int64_t>(r), c) * (G(static_cast<std::int64_t>(r), c) - dot(seg[r], c));
    });
  }

  // --- activations --------------------------------------------------------

  Ref sigmoid(Ref a) {
    Tensor<T> C = value(a);
    for (std::int64_t i = 0; i < C.size(); ++i) C.at(i) = T(1) / (T(1) + std::exp(-C.at(i)));
    return push(std::move(C), {a}, [](Tape& t, Ref self) {
      Ref a2 = t.nodes_[self].parents[0];
      if (!t.wants(a2)) return;
      const Tensor<T>& G = t.nodes_[self].grad;
      const Tensor<T>& Y = t.value(self);
      Tensor<T>& ga = t.grad_buf(a2);
      for (std::int64_t i = 0; i < G.size(); ++i) ga.at(i) += G.at(i) * Y.at(i) * (T(1) - Y.at(i));
    });
  }

  Ref leaky_relu(Ref a, T slope = T(0.01)) {
    const Tensor<T>& A = value(a);
    Tensor<T> C = A;
    for (std::int64_t i = 0; i < C.size(); ++i)
      if (C.at(i) < T(0)) C.at(i) *= slope;
    return push(std::move(C), {a}, [slope](Tape& t, Ref self) {
      Ref a2 = t.nodes_[self].parents[0];
      if (!t.wants(a2)) return;
      const Tensor<T>& G = t.nodes_[self].grad;
      const Tensor<T>& X = t.value(a2);
      Tensor<T>& ga = t.grad_buf(a2);
      for (std::int64_t i = 0; i < G.size(); ++i) ga.at(i) += G.at(i) * (X.at(i) > T(0) ? T(1) : slope);
    });
  }

  Ref softmax_rows(Ref a) {
    const Tensor<T>& A = value(a);
    Tensor<T> C(A.rows(), A.cols());
    for (std::int64_t r = 0; r < A.rows(); ++r) {
      T mx = A(r, 0);
      for (std::int64_t c = 1; c < A.cols(); ++c) mx = std::max(mx, A(r, c));
      T z = T(0);
      for (std::int64_t c = 0; c < A.cols(); ++c) {
        C(r, c) = std::exp(A(r, c) - mx);
        z += C(r, c);
      }
      for (std::int64_t c = 0; c < A.cols(); ++c) C(r, c) /= z;
    }
    return push(std::move(C), {a}, [](Tape& t, Ref self) {
      Ref a2 = t.nodes_[self].parents[0];
      if (!t.wants(a2)) return;
      const Tensor<T>& G = t.nodes_[self].grad;
      const Tensor<T>& Y = t.value(self);
      Tensor<T>& ga = t.grad_buf(a2);
      for (std::int64_t r = 0; r < G.rows(); ++r) {
        T dot = T(0);
        for (std::int64_t c = 0; c < G.cols(); ++c) dot += G(r, c) * Y(r, c);
        for (std::int64_t c = 0; c < G.cols(); ++c) ga(r, c) += Y(r, c) * (G(r, c) - dot);
      }
    });
  }

  Ref log_softmax_rows(Ref a) {
    const Tensor<T>& A = value(a);
    Tensor<T> C(A.rows(), A.cols());
    for (std::int64_t r = 0; r < A.rows(); ++r) {
      T mx = A(r, 0);
      for (std::int64_t c = 1; c < A.cols(); ++c) mx = std::max(mx, A(r, c));
      T z = T(0);
      for (std::int64_t c = 0; c < A.cols(); ++c) z += std::exp(A(r, c) - mx);
      T lz = std::log(z) + mx;
      for (std::int64_t c = 0; c < A.cols(); ++c) C(r, c) = A(r, c) - lz;
    }
    return push(std::move(C), {a}, [](Tape& t, Ref self) {
      Ref a2 = t.nodes_[self].parents[0];
      if (!t.wants(a2)) return;
      const Tensor<T>& G = t.nodes_[self].grad;
      const Tensor<T>& Y = t.value(self);
      Tensor<T>& ga = t.grad_buf(a2);
      for (std::int64_t r = 0; r < G.rows(); ++r) {
        T gsum = T(0);
        for (std::int64_t c = 0; c < G.cols(); ++c) gsum += G(r, c);
        for (std::int64_t c = 0; c < G.cols(); ++c) ga(r, c) += G(r, c) - std::exp(Y(r, c)) * gsum;
      }
    });
  }

  // Inverted dropout keyed by (seed, site, step): masks are reproducible and
  // independent of evaluation order. Training-mode only; eval skips the call.
  Ref dropout(Ref a, T rate, std::uint64_t seed, std::uint64_t site, std::uint64_t step) {
    if (rate < T(0) || rate >= T(1)) throw NumericError("dropout rate must be in [0,1)");
    if (rate == T(0)) return a;
    const Tensor<T>& A = value(a);
    auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(A.size()));
    const T keep_scale = T(1) / (T(1) - rate);
    const std::uint64_t stream = CounterRng::mix(site * 0x100000001b3ull + step);
    Tensor<T> C = A;
    for (std::int64_t i = 0; i < A.size(); ++i) {
      T m = CounterRng::uniform(seed, stream, static_cast<std::uint64_t>(i)) >= static_cast<double>(rate)
                ? keep_scale
                : T(0);
      (*mask)[static_cast<std::size_t>(i)] = m;
      C.at(i) *= m;
    }
    return push(std::move(C), {a}, [mask](Tape& t, Ref self) {
      Ref a2 = t.nodes_[self].parents[0];
      if (!t.wants(a2)) return;
      const Tensor<T>& G = t.nodes_[self].grad;
      Tensor<T>& ga = t.grad_buf(a2);
      for (std::int64_t i = 0; i < G.size(); ++i) ga.at(i) += G.at(i) * (*mask)[static_cast<std::size_t>(i)];
    });
  }

  struct BatchNormOpts {
    bool train = true;
    bool update_running = true;
    T momentum = T(0.1);
    T eps = T(1e-5);
  };

  // Normalization over the row (node / batch) axis with learnable per-column
  // affine. Running statistics live outside the tape and are updated as a
  // side effect in training mode.
  Ref batch_norm(Ref x, Ref gamma, Ref beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                 const BatchNormOpts& opts) {
    const Tensor<T>& X = value(x);
    const std::int64_t m = X.rows(), n = X.cols();
    require_shape(value(gamma), 1, n, "batch_norm gamma");
    require_shape(value(beta), 1, n, "batch_norm beta");
    require_shape(running_mean, 1, n, "batch_norm running mean");
    require_shape(running_var, 1, n, "batch_norm running var");

    auto xhat = std::make_shared<Tensor<T>>(m, n);
    auto invstd = std::make_shared<Tensor<T>>(1, n);
    Tensor<T> Y(m, n);
    if (opts.train) {
      for (std::int64_t c = 0; c < n; ++c) {
        T mean = T(0);
        for (std::int64_t r = 0; r < m; ++r) mean += X(r, c);
        mean /= static_cast<T>(m);
        T var = T(0);
        for (std::int64_t r = 0; r < m; ++r) {
          T d = X(r, c) - mean;
          var += d * d;
        }
        var /= static_cast<T>(m);
        const T is = T(1) / std::sqrt(var + opts.eps);
        (*invstd)(0, c) = is;
        for (std::int64_t r = 0; r < m; ++r) {
          (*xhat)(r, c) = (X(r, c) - mean) * is;
          Y(r, c) = value(gamma)(0, c) * (*xhat)(r, c) + value(beta)(0, c);
        }
        if (opts.update_running) {
          running_mean(0, c) = (T(1) - opts.momentum) * running_mean(0, c) + opts.momentum * mean;
          running_var(0, c) = (T(1) - opts.momentum) * running_var(0, c) + opts.momentum * var;
        }
      }
    } else {
      for (std::int64_t c = 0; c < n; ++c) {
        const T is = T(1) / std::sqrt(running_var(0, c) + opts.eps);
        (*invstd)(0, c) = is;
        for (std::int64_t r = 0; r < m; ++r) {
          (*xhat)(r, c) = (X(r, c) - running_mean(0, c)) * is;
          Y(r, c) = value(gamma)(0, c) * (*xhat)(r, c) + value(beta)(0, c);
        }
      }
    }
    const bool train = opts.train;
    return push(std::move(Y), {x, gamma, beta}, [xhat, invstd, train](Tape& t, Ref self) {
      Ref x2 = t.nodes_[self].parents[0];
      Ref g2 = t.nodes_[self].parents[1];
      Ref b2 = t.nodes_[self].parents[2];
      const Tensor<T>& G = t.nodes_[self].grad;
      const std::int64_t m = G.rows(), n = G.cols();
      if (t.wants(g2)) {
        Tensor<T>& gg = t.grad_buf(g2);
        for (std::int64_t c = 0; c < n; ++c) {
          T acc = T(0);
          for (std::int64_t r = 0; r < m; ++r) acc += G(r, c) * (*xhat)(r, c);
          gg(0, c) += acc;
        }
      }
      if (t.wants(b2)) {
        Tensor<T>& gb = t.grad_buf(b2);
        for (std::int64_t c = 0; c < n; ++c) {
          T acc = T(0);
          for (std::int64_t r = 0; r < m; ++r) acc += G(r, c);
          gb(0, c) += acc;
        }
      }
      if (t.wants(x2)) {
        Tensor<T>& gx = t.grad_buf(x2);
        const Tensor<T>& gamma_v = t.value(g2);
        if (train) {
          for (std::int64_t c = 0; c < n; ++c) {
            T sum_g = T(0), sum_gx = T(0);
            for (std::int64_t r = 0; r < m; ++r) {
              sum_g += G(r, c);
              sum_gx += G(r, c) * (*xhat)(r, c);
            }
            const T k = gamma_v(0, c) * (*invstd)(0, c) / static_cast<T>(m);
            for (std::int64_t r = 0; r < m; ++r)
              gx(r, c) += k * (static_cast<T>(m) * G(r, c) - sum_g - (*xhat)(r, c) * sum_gx);
          }
        } else {
          for (std::int64_t c = 0; c < n; ++c) {
            const T k = gamma_v(0, c) * (*invstd)(0, c);
            for (std::int64_t r = 0; r < m; ++r) gx(r, c) += k * G(r, c);
          }
        }
      }
    });
  }

  // --- reductions ---------------------------------------------------------

  Ref sum_all(Ref a) {
    const Tensor<T>& A = value(a);
    T acc = T(0);
    for (std::int64_t i = 0; i < A.size(); ++i) acc += A.at(i);
    return push(Tensor<T>::scalar(acc), {a}, [](Tape& t, Ref self) {
      Ref a2 = t.nodes_[self].parents[0];
      if (!t.wants(a2)) return;
      const T g = t.nodes_[self].grad(0, 0);
      Tensor<T>& ga = t.grad_buf(a2);
      for (std::int64_t i = 0; i < ga.size(); ++i) ga.at(i) += g;
    });
  }

  Ref mean_all(Ref a) {
    const std::int64_t n = value(a).size();
    return scale(sum_all(a), T(1) / static_cast<T>(n));
  }

  // --- backward pass ------------------------------------------------------

  void backward(Ref loss) {
    Node& ln = nodes_[static_cast<std::size_t>(loss)];
    if (ln.value.rows() != 1 || ln.value.cols() != 1)
      throw ShapeMismatch("backward: loss must be a 1x1 scalar");
    grad_buf(loss)(0, 0) += T(1);
    for (Ref i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.empty() || !n.backprop) continue;
      for (Ref p : n.parents)
        if (p >= i) throw GraphCycle("tape node depends on a later node");
      n.backprop(*this, i);
    }
  }

  // Gradient buffer, allocated (zeroed) on first touch.
  Tensor<T>& grad_buf(Ref id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }

 private:
  using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  static Eigen::Map<const EMat> cmap(const Tensor<T>& t) {
    return Eigen::Map<const EMat>(t.data(), t.rows(), t.cols());
  }
  static Eigen::Map<EMat> emap(Tensor<T>& t) { return Eigen::Map<EMat>(t.data(), t.rows(), t.cols()); }

  bool wants(Ref id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  std::pair<Ref, Ref> parents2(Ref self) const {
    const Node& n = nodes_[static_cast<std::size_t>(self)];
    return {n.parents[0], n.parents[1]};
  }

  void axpy(const Tensor<T>& g, T c, Ref dst) {
    Tensor<T>& gd = grad_buf(dst);
    for (std::int64_t i = 0; i < g.size(); ++i) gd.at(i) += c * g.at(i);
  }

  Ref push(Tensor<T> value, std::vector<Ref> parents, std::function<void(Tape&, Ref)> backprop) {
    require_finite(value, "tape kernel");
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    for (Ref p : n.parents)
      if (nodes_[static_cast<std::size_t>(p)].needs_grad) n.needs_grad = true;
    if (n.needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<Ref>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace cqa
