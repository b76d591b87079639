// Copyright 2026 The Macrid Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Tape-based reverse-mode differentiation over dense matrices.
//
// A Tape records every operation applied to its variables in creation order;
// backward() walks the record in reverse and accumulates gradients. Only the
// primitives the model needs are provided. Every primitive checks its output
// for non-finite values and raises NumericError naming the operation.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "macrid/error.hpp"
#include "macrid/tensor.hpp"

namespace macrid::ad {

inline constexpr double kNormEps = 1e-8;

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const BasicTensor<T>& value() const { return tape_->value(id_); }
  const BasicTensor<T>& grad() const { return tape_->grad(id_); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const noexcept { return id_; }
  Tape<T>* tape() const noexcept { return tape_; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var<T> parameter(BasicTensor<T> value) {
    return push("parameter", std::move(value), {}, nullptr, true);
  }
  Var<T> constant(BasicTensor<T> value) {
    return push("constant", std::move(value), {}, nullptr, false);
  }

  // Records an operation whose value has already been computed. The backward
  // callback receives the node id and must accumulate into the inputs'
  // gradient buffers via grad_buffer().
  Var<T> record(const char* op, BasicTensor<T> value,
                std::vector<std::size_t> inputs, Backward backward) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_[in].needs_grad;
    if (check_finite_ && !value.all_finite()) {
      throw NumericError(op, std::string("non-finite value produced by ") +
                                 op + " (node " +
                                 std::to_string(nodes_.size()) + ")");
    }
    return push(op, std::move(value), std::move(inputs),
                needs ? std::move(backward) : nullptr, needs);
  }

  void backward(Var<T> root) {
    const auto& rv = value(root.id());
    if (rv.size() != 1) {
      fail(ErrorKind::kDimension,
           "backward requires a scalar root, got " + rv.shape_str());
    }
    grad_buffer(root.id())[0] = T(1);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

  const BasicTensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  const char* op(std::size_t id) const { return nodes_[id].op; }
  std::size_t input(std::size_t id, std::size_t k) const {
    return nodes_[id].inputs[k];
  }

  // Gradient of the root w.r.t. node `id`; zeros if nothing flowed there.
  const BasicTensor<T>& grad(std::size_t id) {
    return grad_buffer(id);
  }
  BasicTensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  std::size_t size() const noexcept { return nodes_.size(); }
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    const char* op;
    BasicTensor<T> value;
    BasicTensor<T> grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool needs_grad;
  };

  Var<T> push(const char* op, BasicTensor<T> value,
              std::vector<std::size_t> inputs, Backward backward, bool needs) {
    nodes_.push_back(Node{op, std::move(value), {}, std::move(inputs),
                          std::move(backward), needs});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool check_finite_ = true;
};

namespace detail {

enum class Broadcast { kSame, kRow, kCol, kScalar };

template <typename T>
Broadcast broadcast_kind(const BasicTensor<T>& a, const BasicTensor<T>& b,
                         const char* op) {
  if (a.same_shape(b)) return Broadcast::kSame;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  fail(ErrorKind::kDimension, std::string(op) + ": cannot broadcast " +
                                  b.shape_str() + " onto " + a.shape_str());
}

inline std::size_t bindex(Broadcast kind, std::size_t r, std::size_t c,
                          std::size_t cols) {
  switch (kind) {
    case Broadcast::kSame: return r * cols + c;
    case Broadcast::kRow: return c;
    case Broadcast::kCol: return r;
    case Broadcast::kScalar: return 0;
  }
  return 0;
}

// Elementwise binary op with broadcasting of the right operand.
// fwd(x, y) -> out; dx(x, y, out) and dy(x, y, out) are partial derivatives.
template <typename T, typename F, typename DX, typename DY>
Var<T> binary(const char* op, Var<T> a, Var<T> b, F fwd, DX dx, DY dy) {
  Tape<T>& tape = *a.tape();
  const auto& av = a.value();
  const auto& bv = b.value();
  const Broadcast kind = broadcast_kind(av, bv, op);
  BasicTensor<T> out(av.rows(), av.cols());
  const std::size_t cols = av.cols();
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = fwd(av[r * cols + c], bv[bindex(kind, r, c, cols)]);
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(
      op, std::move(out), {ia, ib},
      [ia, ib, kind, dx, dy](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& x = t.value(ia);
        const auto& y = t.value(ib);
        const auto& o = t.value(self);
        const std::size_t cols = x.cols();
        if (t.needs_grad(ia)) {
          auto& gx = t.grad_buffer(ia);
          for (std::size_t i = 0; i < x.size(); ++i) {
            const std::size_t j = bindex(kind, i / cols, i % cols, cols);
            gx[i] += g[i] * dx(x[i], y[j], o[i]);
          }
        }
        if (t.needs_grad(ib)) {
          auto& gy = t.grad_buffer(ib);
          for (std::size_t i = 0; i < x.size(); ++i) {
            const std::size_t j = bindex(kind, i / cols, i % cols, cols);
            gy[j] += g[i] * dy(x[i], y[j], o[i]);
          }
        }
      });
}

template <typename T, typename F, typename D>
Var<T> unary(const char* op, Var<T> a, F fwd, D deriv) {
  const auto& av = a.value();
  BasicTensor<T> out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  const std::size_t ia = a.id();
  return a.tape()->record(op, std::move(out), {ia},
                          [ia, deriv](Tape<T>& t, std::size_t self) {
                            const auto& g = t.grad(self);
                            const auto& x = t.value(ia);
                            const auto& o = t.value(self);
                            auto& gx = t.grad_buffer(ia);
                            for (std::size_t i = 0; i < x.size(); ++i) {
                              gx[i] += g[i] * deriv(x[i], o[i]);
                            }
                          });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false) {
  BasicTensor<T> out = macrid::matmul(a.value(), b.value(), trans_a, trans_b);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(
      "matmul", std::move(out), {ia, ib},
      [ia, ib, trans_a, trans_b](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& x = t.value(ia);
        const auto& y = t.value(ib);
        // out = op(x) op(y)
        if (t.needs_grad(ia)) {
          auto& gx = t.grad_buffer(ia);
          if (!trans_a) gemm(g, false, y, !trans_b, gx, T(1));
          else gemm(y, trans_b, g, true, gx, T(1));
        }
        if (t.needs_grad(ib)) {
          auto& gy = t.grad_buffer(ib);
          if (!trans_b) gemm(x, !trans_a, g, false, gy, T(1));
          else gemm(g, true, x, trans_a, gy, T(1));
        }
      });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const auto& av = a.value();
  BasicTensor<T> out(av.cols(), av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(c, r) = av(r, c);
  const std::size_t ia = a.id();
  return a.tape()->record("transpose", std::move(out), {ia},
                          [ia](Tape<T>& t, std::size_t self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad_buffer(ia);
                            for (std::size_t r = 0; r < gx.rows(); ++r)
                              for (std::size_t c = 0; c < gx.cols(); ++c)
                                gx(r, c) += g(c, r);
                          });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y, T) { return T(1) / y; },
      [](T, T y, T o) { return -o / y; });
}

template <typename T>
Var<T> scale(Var<T> a, double s) {
  const T k = static_cast<T>(s);
  return detail::unary<T>(
      "scale", a, [k](T x) { return k * x; }, [k](T, T) { return k; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, double s) {
  const T k = static_cast<T>(s);
  return detail::unary<T>(
      "add_scalar", a, [k](T x) { return x + k; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return detail::unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](T, T o) { return T(1) - o * o; });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return detail::unary<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T o) { return o; });
}

template <typename T>
Var<T> log(Var<T> a) {
  return detail::unary<T>(
      "log", a, [](T x) { return std::log(x); },
      [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> sqrt(Var<T> a) {
  return detail::unary<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); },
      [](T, T o) { return T(0.5) / o; });
}

// Clamp to [lo, hi]; the gradient is zero where the clamp is active.
template <typename T>
Var<T> clamp(Var<T> a, double lo, double hi) {
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  return detail::unary<T>(
      "clamp", a, [l, h](T x) { return std::clamp(x, l, h); },
      [l, h](T x, T) { return (x >= l && x <= h) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions (accumulated in double)

template <typename T>
Var<T> sum(Var<T> a) {
  double s = 0.0;
  for (T x : a.value().flat()) s += static_cast<double>(x);
  const std::size_t ia = a.id();
  return a.tape()->record("sum", BasicTensor<T>::scalar(static_cast<T>(s)),
                          {ia}, [ia](Tape<T>& t, std::size_t self) {
                            const T g = t.grad(self)[0];
                            for (T& v : t.grad_buffer(ia).flat()) v += g;
                          });
}

// Column sums: [r x c] -> [1 x c].
template <typename T>
Var<T> sum_rows(Var<T> a) {
  const auto& av = a.value();
  std::vector<double> acc(av.cols(), 0.0);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) acc[c] += av(r, c);
  BasicTensor<T> out(1, av.cols());
  for (std::size_t c = 0; c < av.cols(); ++c) out[c] = static_cast<T>(acc[c]);
  const std::size_t ia = a.id();
  return a.tape()->record("sum_rows", std::move(out), {ia},
                          [ia](Tape<T>& t, std::size_t self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad_buffer(ia);
                            for (std::size_t r = 0; r < gx.rows(); ++r)
                              for (std::size_t c = 0; c < gx.cols(); ++c)
                                gx(r, c) += g[c];
                          });
}

// Row sums: [r x c] -> [r x 1].
template <typename T>
Var<T> sum_cols(Var<T> a) {
  const auto& av = a.value();
  BasicTensor<T> out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (T x : av.row(r)) s += x;
    out[r] = static_cast<T>(s);
  }
  const std::size_t ia = a.id();
  return a.tape()->record("sum_cols", std::move(out), {ia},
                          [ia](Tape<T>& t, std::size_t self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad_buffer(ia);
                            for (std::size_t r = 0; r < gx.rows(); ++r)
                              for (std::size_t c = 0; c < gx.cols(); ++c)
                                gx(r, c) += g[r];
                          });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  const auto& av = a.value();
  BasicTensor<T> out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto x = av.row(r);
    auto y = out.row(r);
    const T mx = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) {
      y[c] = std::exp(x[c] - mx);
      s += y[c];
    }
    for (T& v : y) v = static_cast<T>(v / s);
  }
  const std::size_t ia = a.id();
  return a.tape()->record(
      "softmax", std::move(out), {ia}, [ia](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& y = t.value(self);
        auto& gx = t.grad_buffer(ia);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double inner = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) inner += g(r, c) * y(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c)
            gx(r, c) += y(r, c) * static_cast<T>(g(r, c) - inner);
        }
      });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> a) {
  const auto& av = a.value();
  BasicTensor<T> out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto x = av.row(r);
    const T mx = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (T v : x) s += std::exp(static_cast<double>(v - mx));
    const double lse = static_cast<double>(mx) + std::log(s);
    for (std::size_t c = 0; c < x.size(); ++c)
      out(r, c) = static_cast<T>(x[c] - lse);
  }
  const std::size_t ia = a.id();
  return a.tape()->record(
      "log_softmax", std::move(out), {ia}, [ia](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& y = t.value(self);
        auto& gx = t.grad_buffer(ia);
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double gs = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) gs += g(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c)
            gx(r, c) += g(r, c) - static_cast<T>(std::exp(y(r, c)) * gs);
        }
      });
}

// x / (||x|| + 1e-8) per row.
template <typename T>
Var<T> row_l2_normalize(Var<T> a) {
  const auto& av = a.value();
  BasicTensor<T> out(av.rows(), av.cols());
  BasicTensor<T> norms(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const double n = l2_norm(av.row(r));
    norms[r] = static_cast<T>(n);
    for (std::size_t c = 0; c < av.cols(); ++c)
      out(r, c) = static_cast<T>(av(r, c) / (n + kNormEps));
  }
  const std::size_t ia = a.id();
  return a.tape()->record(
      "row_l2_normalize", std::move(out), {ia},
      [ia, norms = std::move(norms)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& x = t.value(ia);
        auto& gx = t.grad_buffer(ia);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const double n = norms[r];
          const double d = n + kNormEps;
          double xg = 0.0;
          for (std::size_t c = 0; c < x.cols(); ++c) xg += x(r, c) * g(r, c);
          const double k = n > 0.0 ? xg / (n * d * d) : 0.0;
          for (std::size_t c = 0; c < x.cols(); ++c)
            gx(r, c) += static_cast<T>(g(r, c) / d - x(r, c) * k);
        }
      });
}

// Pairwise cosine similarity between the rows of a and the rows of b:
// [m x d], [n x d] -> [m x n].
template <typename T>
Var<T> cosine(Var<T> a, Var<T> b) {
  return matmul(row_l2_normalize(a), row_l2_normalize(b), false, true);
}

// out[0, i] = log sum_k w[i, k] * exp(l[k, i]) for logits l [K x M] and
// nonnegative mixture weights w [M x K]. Terms with zero weight are skipped,
// so one-hot weights are allowed.
template <typename T>
Var<T> log_mix_exp(Var<T> l, Var<T> w) {
  const auto& lv = l.value();
  const auto& wv = w.value();
  if (lv.rows() != wv.cols() || lv.cols() != wv.rows()) {
    fail(ErrorKind::kDimension, "log_mix_exp: logits " + lv.shape_str() +
                                    " vs weights " + wv.shape_str());
  }
  const std::size_t k_count = lv.rows(), m = lv.cols();
  BasicTensor<T> out(1, m);
  for (std::size_t i = 0; i < m; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < k_count; ++k)
      if (wv(i, k) > T(0)) mx = std::max(mx, lv(k, i));
    double s = 0.0;
    for (std::size_t k = 0; k < k_count; ++k)
      if (wv(i, k) > T(0)) s += wv(i, k) * std::exp(double(lv(k, i) - mx));
    out[i] = static_cast<T>(mx + std::log(s));
  }
  const std::size_t il = l.id(), iw = w.id();
  return l.tape()->record(
      "log_mix_exp", std::move(out), {il, iw},
      [il, iw](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& o = t.value(self);
        const auto& lv = t.value(il);
        const auto& wv = t.value(iw);
        const bool gl = t.needs_grad(il), gw = t.needs_grad(iw);
        for (std::size_t i = 0; i < lv.cols(); ++i) {
          for (std::size_t k = 0; k < lv.rows(); ++k) {
            // exp(l - out) = share of component k before weighting.
            const double e = std::exp(double(lv(k, i)) - double(o[i]));
            if (gl) t.grad_buffer(il)(k, i) += static_cast<T>(g[i] * wv(i, k) * e);
            if (gw) t.grad_buffer(iw)(i, k) += static_cast<T>(g[i] * e);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing

template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> idx) {
  const auto& av = a.value();
  BasicTensor<T> out(idx.size(), av.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= av.rows()) fail(ErrorKind::kDimension, "gather_rows: index out of range");
    std::copy_n(av.row(idx[r]).begin(), av.cols(), out.row(r).begin());
  }
  const std::size_t ia = a.id();
  return a.tape()->record(
      "gather_rows", std::move(out), {ia},
      [ia, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad_buffer(ia);
        for (std::size_t r = 0; r < idx.size(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) gx(idx[r], c) += g(r, c);
      });
}

template <typename T>
Var<T> gather_cols(Var<T> a, std::vector<std::size_t> idx) {
  const auto& av = a.value();
  BasicTensor<T> out(av.rows(), idx.size());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < idx.size(); ++c) {
      if (idx[c] >= av.cols()) fail(ErrorKind::kDimension, "gather_cols: index out of range");
      out(r, c) = av(r, idx[c]);
    }
  const std::size_t ia = a.id();
  return a.tape()->record(
      "gather_cols", std::move(out), {ia},
      [ia, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gx = t.grad_buffer(ia);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < idx.size(); ++c) gx(r, idx[c]) += g(r, c);
      });
}

// Columns [begin, end).
template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& av = a.value();
  if (begin > end || end > av.cols()) fail(ErrorKind::kDimension, "slice_cols: bad range");
  BasicTensor<T> out(av.rows(), end - begin);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = av(r, c);
  const std::size_t ia = a.id();
  return a.tape()->record("slice_cols", std::move(out), {ia},
                          [ia, begin](Tape<T>& t, std::size_t self) {
                            const auto& g = t.grad(self);
                            auto& gx = t.grad_buffer(ia);
                            for (std::size_t r = 0; r < g.rows(); ++r)
                              for (std::size_t c = 0; c < g.cols(); ++c)
                                gx(r, c + begin) += g(r, c);
                          });
}

// Elementwise product with a constant mask (dropout). The mask is part of the
// recorded value, so gradient checks see it as fixed.
template <typename T>
Var<T> apply_mask(Var<T> a, const BasicTensor<T>& mask) {
  if (!a.value().same_shape(mask)) {
    fail(ErrorKind::kDimension, "apply_mask: mask " + mask.shape_str() +
                                    " vs " + a.value().shape_str());
  }
  return mul(a, a.tape()->constant(mask));
}

}  // namespace macrid::ad
