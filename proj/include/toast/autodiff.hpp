// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records primitive operations in execution order. Each recorded node
// owns its forward value and, when any input participates in
// differentiation, a closure that propagates the node's gradient to its
// inputs. Because nodes are appended as they are computed, the node vector is
// already a topological order; backward() walks it once in reverse.
//
// Parameters enter the tape through Tape::param(), which references the
// tensor instead of copying it. Gradients reach a parameter's grad buffer
// only when it has requires_grad() set.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "toast/tensor.hpp"

namespace toast {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool needs_grad() const { return tape->needs_grad(id); }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) {
    Node node;
    node.value = std::move(value);
    check(node.value, "constant");
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  /// References `p` for the lifetime of the tape.
  Var<T> param(const Tensor<T>& p) {
    Node node;
    node.param = &p;
    node.needs_grad = p.requires_grad();
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward fn,
                const char* op = "op") {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn), op);
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward fn,
                const char* op = "op") {
    check(value, op);
    Node node;
    node.value = std::move(value);
    for (const auto& in : inputs) {
      if (in.tape != this) throw std::logic_error(std::string(op) + ": input from another tape");
      node.needs_grad = node.needs_grad || nodes_[in.id].needs_grad;
    }
    if (node.needs_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param != nullptr ? *n.param : n.value;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient buffer of a node, zero-allocated on first access.
  std::span<T> grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(value(id).size(), T{0});
    return n.grad;
  }

  /// Gradient computed by the last backward() call; empty if none reached it.
  std::span<const T> grad_of(Var<T> v) const { return nodes_[v.id].grad; }

  /// Computes gradients of a scalar loss with respect to every node that
  /// needs them. When `accumulate_into_params` is set, gradients of
  /// parameter leaves are added into the parameters' grad buffers.
  void backward(Var<T> loss, bool accumulate_into_params = true) {
    if (loss.tape != this) throw std::logic_error("backward: loss from another tape");
    if (value(loss.id).size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " +
                       shape_string(value(loss.id).shape()));
    }
    for (auto& n : nodes_) n.grad.clear();
    if (!nodes_[loss.id].needs_grad) return;
    grad(loss.id)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
    if (accumulate_into_params) {
      for (auto& n : nodes_) {
        if (n.param != nullptr && n.needs_grad && !n.grad.empty()) n.param->accumulate_grad(n.grad);
      }
    }
  }

  /// Visits every parameter leaf that received a gradient in the last
  /// backward() call. A parameter bound more than once is visited once per
  /// binding.
  template <typename Fn>
  void for_each_param_grad(Fn&& fn) const {
    for (const auto& n : nodes_) {
      if (n.param != nullptr && n.needs_grad && !n.grad.empty()) {
        fn(*n.param, std::span<const T>(n.grad));
      }
    }
  }

  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* param = nullptr;
    bool needs_grad = false;
    std::vector<T> grad;
    Backward backward;
  };

  void check(const Tensor<T>& v, const char* op) const {
    if (!check_finite_) return;
    for (T x : v.data()) {
      if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }

#ifdef NDEBUG
  bool check_finite_ = false;
#else
  bool check_finite_ = true;
#endif
  std::vector<Node> nodes_;
};

namespace kernels {

// C[m×n] += A[m×k] · B[k×n]
template <typename T>
void matmul_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×k] += A[m×n] · B[k×n]ᵀ
template <typename T>
void matmul_bt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  std::vector<T> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  matmul_acc(a, bt.data(), c, m, n, k);
}

// C[k×n] += A[m×k]ᵀ · B[m×n]
template <typename T>
void matmul_at_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kernels

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void require_same_shape(Var<T> a, Var<T> b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                      " vs " + shape_string(b.shape()));
}

template <typename T>
void require_matrix(Var<T> a, const char* op) {
  require(a.value().rank() == 2, std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

template <typename T>
T gelu_inner_scale() {
  return static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul: inner dimensions differ: " + shape_string(a.shape()) +
                                     " x " + shape_string(b.shape()));
  Tensor<T> c(Shape{m, n});
  kernels::matmul_acc(a.value().raw(), b.value().raw(), c.raw(), m, k, n);
  return a.tape->record(
      std::move(c), {a, b},
      [a, b, m, k, n](Tape<T>& t, std::size_t self) {
        const T* dc = t.grad(self).data();
        if (t.needs_grad(a.id)) kernels::matmul_bt_acc(dc, t.value(b.id).raw(), t.grad(a.id).data(), m, n, k);
        if (t.needs_grad(b.id)) kernels::matmul_at_acc(t.value(a.id).raw(), dc, t.grad(b.id).data(), m, k, n);
      },
      "matmul");
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  detail::require(shape_size(shape) == a.value().size(), "reshape: size mismatch");
  return a.tape->record(
      a.value().reshaped(std::move(shape)), {a},
      [a](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        auto ga = t.grad(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      },
      "reshape");
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape->record(
      std::move(out), {a, b},
      [a, b](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        for (Var<T> in : {a, b}) {
          if (!t.needs_grad(in.id)) continue;
          auto gi = t.grad(in.id);
          for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
        }
      },
      "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape->record(
      std::move(out), {a, b},
      [a, b](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        if (t.needs_grad(a.id)) {
          auto ga = t.grad(a.id);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.needs_grad(b.id)) {
          auto gb = t.grad(b.id);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      },
      "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->record(
      std::move(out), {a, b},
      [a, b](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        if (t.needs_grad(a.id)) {
          auto ga = t.grad(a.id);
          const auto& bv = t.value(b.id);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.needs_grad(b.id)) {
          auto gb = t.grad(b.id);
          const auto& av = t.value(a.id);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
      },
      "mul");
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return a.tape->record(
      std::move(out), {a},
      [a, factor](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        auto ga = t.grad(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
      },
      "scale");
}

/// x[..., d] + bias[d], broadcast over leading axes.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const std::size_t d = bias.value().size();
  detail::require(bias.value().rank() == 1 && x.shape().back() == d,
                  "add_bias: bias " + shape_string(bias.shape()) + " vs input " + shape_string(x.shape()));
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  const auto& bv = bias.value();
  const std::size_t rows = xv.size() / d;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] + bv[c];
  }
  return x.tape->record(
      std::move(out), {x, bias},
      [x, bias, rows, d](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        if (t.needs_grad(x.id)) {
          auto gx = t.grad(x.id);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (t.needs_grad(bias.id)) {
          auto gb = t.grad(bias.id);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
          }
        }
      },
      "add_bias");
}

template <typename T>
T gelu_value(T x) {
  const T k = detail::gelu_inner_scale<T>();
  const T inner = k * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

/// GELU, tanh approximation.
template <typename T>
Var<T> gelu(Var<T> a) {
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(av[i]);
  return a.tape->record(
      std::move(out), {a},
      [a](Tape<T>& t, std::size_t self) {
        const T k = detail::gelu_inner_scale<T>();
        auto g = t.grad(self);
        auto ga = t.grad(a.id);
        const auto& av = t.value(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T x = av[i];
          const T th = std::tanh(k * (x + T(0.044715) * x * x * x));
          const T dinner = k * (T(1) + T(3) * T(0.044715) * x * x);
          ga[i] += g[i] * (T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner);
        }
      },
      "gelu");
}

/// min(max(x, 0), 1). Gradient is 1 strictly inside (0, 1) and 0 elsewhere.
template <typename T>
Var<T> relu_clamp01(Var<T> a) {
  Tensor<T> out(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(av[i], T(0)), T(1));
  return a.tape->record(
      std::move(out), {a},
      [a](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        auto ga = t.grad(a.id);
        const auto& av = t.value(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (av[i] > T(0) && av[i] < T(1)) ga[i] += g[i];
        }
      },
      "relu_clamp01");
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (T x : a.value().data()) s += x;
  return a.tape->record(
      Tensor<T>::scalar(s), {a},
      [a](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        for (T& x : t.grad(a.id)) x += g;
      },
      "sum");
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

/// Softmax along `axis`, stabilised by subtracting the per-slice maximum.
template <typename T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  const Shape& shape = a.shape();
  detail::require(axis < shape.size(), "softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  Tensor<T> out(shape);
  const auto& av = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = av[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, av[base + j * inner]);
      T z = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(av[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  Var<T> result = a.tape->record(
      std::move(out), {a},
      [a, outer, inner, len](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        auto ga = t.grad(a.id);
        const auto& y = t.value(self);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T dot = 0;
            for (std::size_t j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
            for (std::size_t j = 0; j < len; ++j) {
              const std::size_t idx = base + j * inner;
              ga[idx] += y[idx] * (g[idx] - dot);
            }
          }
        }
      },
      "softmax");
  return result;
}

/// Normalises over the last axis then applies gain and bias.
template <typename T>
Var<T> layernorm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-8)) {
  const std::size_t d = x.shape().back();
  detail::require(gain.value().size() == d && bias.value().size() == d,
                  "layernorm: gain/bias width does not match input " + shape_string(x.shape()));
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  const std::size_t rows = xv.size() / d;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv.raw() + r * d;
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (row[c] - mu) * inv;
      (*xhat)[r * d + c] = h;
      out[r * d + c] = h * gv[c] + bv[c];
    }
  }
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, rows, d, xhat, inv_std](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        if (t.needs_grad(gain.id)) {
          auto gg = t.grad(gain.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gg[c] += g[r * d + c] * (*xhat)[r * d + c];
        }
        if (t.needs_grad(bias.id)) {
          auto gb = t.grad(bias.id);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
        }
        if (t.needs_grad(x.id)) {
          auto gx = t.grad(x.id);
          const auto& gv = t.value(gain.id);
          const T inv_d = T(1) / static_cast<T>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t c = 0; c < d; ++c) {
              const T dh = g[r * d + c] * gv[c];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[r * d + c];
            }
            mean_dh *= inv_d;
            mean_dh_h *= inv_d;
            const T inv = (*inv_std)[r];
            for (std::size_t c = 0; c < d; ++c) {
              const T dh = g[r * d + c] * gv[c];
              gx[r * d + c] += inv * (dh - mean_dh - (*xhat)[r * d + c] * mean_dh_h);
            }
          }
        }
      },
      "layernorm");
}

// ---------------------------------------------------------------------------
// Similarity

namespace detail {

template <typename T>
T norm(const T* v, std::size_t d) {
  T s = 0;
  for (std::size_t i = 0; i < d; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

}  // namespace detail

/// Row-wise cosine similarity of z[N×d] with v[d]; result has shape [N].
/// Norms below eps are replaced by eps, so zero rows score 0.
template <typename T>
Var<T> cosine_sim_rows(Var<T> z, Var<T> v, T eps = T(1e-8)) {
  detail::require_matrix(z, "cosine_sim_rows");
  const std::size_t n = z.dim(0), d = z.dim(1);
  detail::require(v.value().size() == d, "cosine_sim_rows: vector width mismatch");
  const auto& zv = z.value();
  const auto& vv = v.value();
  const T raw_nv = detail::norm(vv.raw(), d);
  const T nv = std::max(raw_nv, eps);
  auto nz = std::make_shared<std::vector<T>>(n);
  Tensor<T> out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = zv.raw() + i * d;
    T dot = 0;
    for (std::size_t c = 0; c < d; ++c) dot += row[c] * vv[c];
    const T raw = detail::norm(row, d);
    (*nz)[i] = raw;
    out[i] = dot / (std::max(raw, eps) * nv);
  }
  return z.tape->record(
      std::move(out), {z, v},
      [z, v, n, d, nz, raw_nv, nv, eps](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        const auto& zv = t.value(z.id);
        const auto& vv = t.value(v.id);
        const auto& s = t.value(self);
        const bool gz = t.needs_grad(z.id), gvv = t.needs_grad(v.id);
        for (std::size_t i = 0; i < n; ++i) {
          if (g[i] == T(0)) continue;
          const T* row = zv.raw() + i * d;
          const T raw = (*nz)[i];
          const T nzi = std::max(raw, eps);
          const T denom = nzi * nv;
          if (gz) {
            auto gzz = t.grad(z.id);
            const T self_term = raw > eps ? s[i] / (nzi * nzi) : T(0);
            for (std::size_t c = 0; c < d; ++c)
              gzz[i * d + c] += g[i] * (vv[c] / denom - self_term * row[c]);
          }
          if (gvv) {
            auto gv = t.grad(v.id);
            const T self_term = raw_nv > eps ? s[i] / (nv * nv) : T(0);
            for (std::size_t c = 0; c < d; ++c) gv[c] += g[i] * (row[c] / denom - self_term * vv[c]);
          }
        }
      },
      "cosine_sim_rows");
}

/// Cosine similarity of two vectors as a one-element tensor.
template <typename T>
Var<T> cosine_sim(Var<T> a, Var<T> b, T eps = T(1e-8)) {
  const std::size_t d = a.value().size();
  detail::require(b.value().size() == d && d >= 1, "cosine_sim: width mismatch");
  Var<T> row = reshape(a, Shape{1, d});
  return cosine_sim_rows(row, b, eps);
}

/// Multiplies row i of z[N×d] by s[i].
template <typename T>
Var<T> scale_rows(Var<T> z, Var<T> s) {
  detail::require_matrix(z, "scale_rows");
  const std::size_t n = z.dim(0), d = z.dim(1);
  detail::require(s.value().size() == n, "scale_rows: weight count mismatch");
  Tensor<T> out(z.shape());
  const auto& zv = z.value();
  const auto& sv = s.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] = sv[i] * zv[i * d + c];
  return z.tape->record(
      std::move(out), {z, s},
      [z, s, n, d](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        if (t.needs_grad(z.id)) {
          auto gz = t.grad(z.id);
          const auto& sv = t.value(s.id);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) gz[i * d + c] += g[i * d + c] * sv[i];
        }
        if (t.needs_grad(s.id)) {
          auto gs = t.grad(s.id);
          const auto& zv = t.value(z.id);
          for (std::size_t i = 0; i < n; ++i) {
            T acc = 0;
            for (std::size_t c = 0; c < d; ++c) acc += g[i * d + c] * zv[i * d + c];
            gs[i] += acc;
          }
        }
      },
      "scale_rows");
}

// ---------------------------------------------------------------------------
// Row manipulation

/// Rows [begin, end) of a matrix.
template <typename T>
Var<T> rows(Var<T> a, std::size_t begin, std::size_t end) {
  detail::require_matrix(a, "rows");
  const std::size_t d = a.dim(1);
  detail::require(begin < end && end <= a.dim(0), "rows: range out of bounds");
  const auto& av = a.value();
  Tensor<T> out(Shape{end - begin, d},
                std::vector<T>(av.data().begin() + begin * d, av.data().begin() + end * d));
  return a.tape->record(
      std::move(out), {a},
      [a, begin, d](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        auto ga = t.grad(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * d + i] += g[i];
      },
      "rows");
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t d = parts[0].shape().back();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    detail::require(s.back() == d && s.size() <= 2, "concat_rows: width mismatch");
    total += p.value().size() / d;
  }
  std::vector<T> data;
  data.reserve(total * d);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return parts[0].tape->record(
      Tensor<T>(Shape{total, d}, std::move(data)), parts,
      [parts](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        std::size_t offset = 0;
        for (const auto& p : parts) {
          const std::size_t len = t.value(p.id).size();
          if (t.needs_grad(p.id)) {
            auto gp = t.grad(p.id);
            for (std::size_t i = 0; i < len; ++i) gp[i] += g[offset + i];
          }
          offset += len;
        }
      },
      "concat_rows");
}

/// Mean over rows of a matrix, shape [1×d].
template <typename T>
Var<T> mean_rows(Var<T> a) {
  detail::require_matrix(a, "mean_rows");
  const std::size_t n = a.dim(0), d = a.dim(1);
  Tensor<T> out(Shape{1, d});
  const auto& av = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) out[c] += av[i * d + c];
  for (std::size_t c = 0; c < d; ++c) out[c] /= static_cast<T>(n);
  return a.tape->record(
      std::move(out), {a},
      [a, n, d](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        auto ga = t.grad(a.id);
        const T inv = T(1) / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < d; ++c) ga[i * d + c] += g[c] * inv;
      },
      "mean_rows");
}

// ---------------------------------------------------------------------------
// Losses

/// Softmax cross-entropy of a logit vector against a class index.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::size_t label) {
  const auto& lv = logits.value();
  const std::size_t c = lv.size();
  detail::require(label < c, "cross_entropy: label out of range");
  T mx = lv[0];
  for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, lv[i]);
  T z = 0;
  for (std::size_t i = 0; i < c; ++i) z += std::exp(lv[i] - mx);
  const T lse = mx + std::log(z);
  return logits.tape->record(
      Tensor<T>::scalar(lse - lv[label]), {logits},
      [logits, label, c, lse](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        auto gl = t.grad(logits.id);
        const auto& lv = t.value(logits.id);
        for (std::size_t i = 0; i < c; ++i) {
          const T p = std::exp(lv[i] - lse);
          gl[i] += g * (p - (i == label ? T(1) : T(0)));
        }
      },
      "cross_entropy");
}

/// Mean of squared differences over all elements.
template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  Var<T> diff = sub(a, b);
  return mean(mul(diff, diff));
}

// ---------------------------------------------------------------------------
// Attention

template <typename T>
struct AttentionResult {
  Var<T> out;       // [N×d]
  Tensor<T> probs;  // [H×N×N], rows sum to 1
};

/// Multi-head scaled dot-product attention over pre-projected Q, K, V.
/// Head h uses columns [h·d/H, (h+1)·d/H).
template <typename T>
AttentionResult<T> multihead_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
  detail::require_matrix(q, "attention");
  detail::require_same_shape(q, k, "attention");
  detail::require_same_shape(q, v, "attention");
  const std::size_t n = q.dim(0), d = q.dim(1);
  detail::require(heads >= 1 && d % heads == 0, "attention: width not divisible by heads");
  const std::size_t dh = d / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();

  auto probs = std::make_shared<Tensor<T>>(Shape{heads, n, n});
  Tensor<T> out(Shape{n, d});
  std::vector<T> scores(n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      const T* qi = qv.raw() + i * d + off;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        const T* kj = kv.raw() + j * d + off;
        T dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
        scores[j] = dot * scale_factor;
        mx = std::max(mx, scores[j]);
      }
      T z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      T* prow = probs->raw() + (h * n + i) * n;
      T* orow = out.raw() + i * d + off;
      for (std::size_t j = 0; j < n; ++j) {
        const T p = scores[j] / z;
        prow[j] = p;
        const T* vj = vv.raw() + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) orow[c] += p * vj[c];
      }
    }
  }
  Tensor<T> probs_copy = *probs;
  Var<T> result = q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, n, d, heads, dh, scale_factor, probs](Tape<T>& t, std::size_t self) {
        auto g = t.grad(self);
        const auto& qv = t.value(q.id);
        const auto& kv = t.value(k.id);
        const auto& vv = t.value(v.id);
        const bool need_q = t.needs_grad(q.id), need_k = t.needs_grad(k.id), need_v = t.needs_grad(v.id);
        std::vector<T> dp(n);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < n; ++i) {
            const T* prow = probs->raw() + (h * n + i) * n;
            const T* gi = g.data() + i * d + off;
            if (need_v) {
              auto gv = t.grad(v.id);
              for (std::size_t j = 0; j < n; ++j) {
                T* gvj = gv.data() + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) gvj[c] += prow[j] * gi[c];
              }
            }
            if (!need_q && !need_k) continue;
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const T* vj = vv.raw() + j * d + off;
              T acc = 0;
              for (std::size_t c = 0; c < dh; ++c) acc += gi[c] * vj[c];
              dp[j] = acc;
              dot += acc * prow[j];
            }
            const T* qi = qv.raw() + i * d + off;
            for (std::size_t j = 0; j < n; ++j) {
              const T ds = prow[j] * (dp[j] - dot) * scale_factor;
              if (ds == T(0)) continue;
              const T* kj = kv.raw() + j * d + off;
              if (need_q) {
                T* gq = t.grad(q.id).data() + i * d + off;
                for (std::size_t c = 0; c < dh; ++c) gq[c] += ds * kj[c];
              }
              if (need_k) {
                T* gk = t.grad(k.id).data() + j * d + off;
                for (std::size_t c = 0; c < dh; ++c) gk[c] += ds * qi[c];
              }
            }
          }
        }
      },
      "attention");
  return {result, std::move(probs_copy)};
}

}  // namespace toast
