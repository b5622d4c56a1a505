#pragma once

// Tape-based reverse-mode automatic differentiation over dense tensors.
//
// A Tape is rebuilt for every forward pass. Nodes are appended in evaluation
// order, so reverse iteration is a valid topological order for backward().
// Broadcasting is limited to a smaller operand whose shape equals the
// trailing dimensions of the larger one (bias over a leading batch dim) or a
// single-element operand.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "npc/tensor.hpp"

namespace npc::ad {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  bool valid() const { return tape != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Node that never receives a gradient.
  Var constant(Tensor value) { return push(std::move(value), false, {}); }
  /// Differentiable leaf (parameters, or inputs under gradient checks).
  Var leaf(Tensor value) { return push(std::move(value), grad_enabled_, {}); }

  /// Registers an op result. The backward rule is kept only if a parent needs it.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_)
      for (const auto& p : parents) needs = needs || nodes_[p.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_)
      for (const auto& p : parents) needs = needs || nodes_[p.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var& v) const { return nodes_[v.id].requires_grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  /// Adjoint of a node; zeros if nothing flowed into it.
  Tensor grad(std::size_t id) const {
    const auto& n = nodes_[id];
    return n.has_grad ? n.grad : Tensor::zeros_like(n.value);
  }
  Tensor grad(const Var& v) const { return grad(v.id); }

  /// Mutable adjoint buffer for accumulation, allocated on first use.
  Tensor& grad_ref(std::size_t id) {
    auto& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor::zeros_like(n.value);
      n.has_grad = true;
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Disables backward-rule recording for subsequent ops (inference passes).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Propagates adjoints from a single-element loss through the tape.
  void backward(const Var& loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
    if (nodes_[loss.id].value.size() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " +
                       nodes_[loss.id].value.shape().str());
    for (auto& n : nodes_) {
      n.has_grad = false;
    }
    grad_ref(loss.id).fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool needs_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor{}, false, needs_grad, std::move(fn)});
    return Var{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline void check_same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr)
    throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

// Returns true if `small` broadcasts against `big` (equal, trailing, or single element).
inline bool broadcastable(const Shape& big, const Shape& small) {
  if (big == small) return true;
  if (small.numel() == 1 && small.rank() <= 1) return true;
  if (small.rank() >= big.rank()) return false;
  const std::size_t off = big.rank() - small.rank();
  for (std::size_t i = 0; i < small.rank(); ++i)
    if (big[off + i] != small[i]) return false;
  return true;
}

inline void accumulate_broadcast(Tensor& dst, const Tensor& src) {
  // dst is the (possibly smaller) operand; src has the output shape.
  const std::size_t n = dst.size();
  if (n == src.size()) {
    dst += src;
    return;
  }
  for (std::size_t i = 0; i < src.size(); ++i) dst[i % n] += src[i];
}

enum class Binary { kAdd, kSub, kMul };

inline Var binary(const Var& a, const Var& b, Binary kind, const char* name) {
  check_same_tape(a, b, name);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool a_big = av.size() >= bv.size();
  const Shape& big = a_big ? av.shape() : bv.shape();
  const Shape& small = a_big ? bv.shape() : av.shape();
  if (!broadcastable(big, small))
    throw ShapeError(std::string(name) + ": incompatible shapes " + av.shape().str() + " and " +
                     bv.shape().str());
  Tensor out(big);
  const std::size_t na = av.size(), nb = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i % na], y = bv[i % nb];
    out[i] = kind == Binary::kAdd ? x + y : kind == Binary::kSub ? x - y : x * y;
  }
  Tape& t = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {a, b}, [ia, ib, kind](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) {
      if (kind == Binary::kMul) {
        const Tensor& bv2 = tp.value(ib);
        Tensor ga(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv2[i % bv2.size()];
        accumulate_broadcast(tp.grad_ref(ia), ga);
      } else {
        accumulate_broadcast(tp.grad_ref(ia), g);
      }
    }
    if (tp.requires_grad(ib)) {
      if (kind == Binary::kMul) {
        const Tensor& av2 = tp.value(ia);
        Tensor gb(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av2[i % av2.size()];
        accumulate_broadcast(tp.grad_ref(ib), gb);
      } else if (kind == Binary::kSub) {
        Tensor gb(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
        accumulate_broadcast(tp.grad_ref(ib), gb);
      } else {
        accumulate_broadcast(tp.grad_ref(ib), g);
      }
    }
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) { return detail::binary(a, b, detail::Binary::kAdd, "add"); }
inline Var sub(const Var& a, const Var& b) { return detail::binary(a, b, detail::Binary::kSub, "sub"); }
inline Var mul(const Var& a, const Var& b) { return detail::binary(a, b, detail::Binary::kMul, "mul"); }

/// Multiplies by a constant scalar.
inline Var scale(const Var& x, double c) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, c](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_ref(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& x) { return scale(x, c); }
inline Var operator*(const Var& x, double c) { return scale(x, c); }
inline Var operator-(const Var& x) { return scale(x, -1.0); }

/// Matrix product. Supports [m,k]x[k,n], [k]x[k,n] and [m,k]x[k].
inline Var matmul(const Var& a, const Var& b) {
  detail::check_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Shape& as = av.shape();
  const Shape& bs = bv.shape();
  std::size_t m, k, n;
  Shape out_shape;
  if (as.rank() == 2 && bs.rank() == 2) {
    m = as[0], k = as[1], n = bs[1];
    if (bs[0] != k) throw ShapeError("matmul: inner dims differ, " + as.str() + " x " + bs.str());
    out_shape = Shape{m, n};
  } else if (as.rank() == 1 && bs.rank() == 2) {
    m = 1, k = as[0], n = bs[1];
    if (bs[0] != k) throw ShapeError("matmul: inner dims differ, " + as.str() + " x " + bs.str());
    out_shape = Shape{n};
  } else if (as.rank() == 2 && bs.rank() == 1) {
    m = as[0], k = as[1], n = 1;
    if (bs[0] != k) throw ShapeError("matmul: inner dims differ, " + as.str() + " x " + bs.str());
    out_shape = Shape{m};
  } else {
    throw ShapeError("matmul: unsupported ranks " + as.str() + " x " + bs.str());
  }
  Tensor out(out_shape);
  const double* A = av.data();
  const double* B = bv.data();
  double* C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& tp, const Tensor& g) {
    const double* G = g.data();
    if (tp.requires_grad(ia)) {
      // dA = G B^T
      const double* B2 = tp.value(ib).data();
      double* GA = tp.grad_ref(ia).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* brow = B2 + p * n;
          const double* grow = G + i * n;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          GA[i * k + p] += s;
        }
    }
    if (tp.requires_grad(ib)) {
      // dB = A^T G
      const double* A2 = tp.value(ia).data();
      double* GB = tp.grad_ref(ib).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A2[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = GB + p * n;
          const double* grow = G + i * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
    }
  });
}

namespace detail {

// Elementwise op whose derivative is expressed through input x and output y.
template <class F, class D>
Var elementwise(const Var& x, F f, D dydx) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t ix = x.id;
  Tape& t = *x.tape;
  const std::size_t iy = t.size();
  return t.record(std::move(out), {x}, [ix, iy, dydx](Tape& tp, const Tensor& g) {
    const Tensor& xv2 = tp.value(ix);
    const Tensor& yv2 = tp.value(iy);
    Tensor& gx = tp.grad_ref(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dydx(xv2[i], yv2[i]);
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var tanh(const Var& x) {
  return detail::elementwise(x, [](double v) { return std::tanh(v); },
                             [](double, double y) { return 1.0 - y * y; });
}
inline Var sigmoid(const Var& x) {
  return detail::elementwise(x, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}
inline Var relu(const Var& x) {
  return detail::elementwise(x, [](double v) { return v > 0 ? v : 0.0; },
                             [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}
inline Var square(const Var& x) {
  return detail::elementwise(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}
inline Var log(const Var& x) {
  for (double v : x.value().values())
    if (!(v > 0)) throw std::domain_error("log: non-positive input " + std::to_string(v));
  return detail::elementwise(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t ix = x.id;
  return x.tape->record(Tensor::scalar(s), {x}, [ix](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_ref(ix);
    const double gv = g[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv;
  });
}

inline Var mean(const Var& x) {
  const std::size_t n = x.value().size();
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

inline Var reshape(const Var& x, Shape s) {
  Tensor out = x.value().reshaped(s);
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_ref(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

namespace detail {
// outer x axis x inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};
inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.rank(); ++i) r.inner *= s[i];
  return r;
}
}  // namespace detail

/// Concatenates along `axis`; all other dims must agree.
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.rank()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + s0.str());
  Shape out_shape = s0;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check_same_tape(parts[0], p, "concat");
    const Shape& s = p.shape();
    bool ok = s.rank() == s0.rank();
    for (std::size_t i = 0; ok && i < s.rank(); ++i)
      if (i != axis && s[i] != s0[i]) ok = false;
    if (!ok) throw ShapeError("concat: shape " + s.str() + " does not match " + s0.str() + " off axis " + std::to_string(axis));
    total += s[axis];
  }
  out_shape[axis] = total;
  Tensor out(out_shape);
  const auto os = detail::split_axis(out_shape, axis);
  std::vector<std::size_t> offsets, lens, ids;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto ps = detail::split_axis(p.shape(), axis);
    const Tensor& pv = p.value();
    for (std::size_t o = 0; o < os.outer; ++o)
      for (std::size_t l = 0; l < ps.len; ++l)
        for (std::size_t in = 0; in < os.inner; ++in)
          out[(o * os.len + off + l) * os.inner + in] = pv[(o * ps.len + l) * os.inner + in];
    offsets.push_back(off);
    lens.push_back(ps.len);
    ids.push_back(p.id);
    off += ps.len;
  }
  return parts[0].tape->record(
      std::move(out), std::span<const Var>(parts.data(), parts.size()),
      [os, offsets, lens, ids](Tape& tp, const Tensor& g) {
        for (std::size_t q = 0; q < ids.size(); ++q) {
          if (!tp.requires_grad(ids[q])) continue;
          Tensor& gp = tp.grad_ref(ids[q]);
          for (std::size_t o = 0; o < os.outer; ++o)
            for (std::size_t l = 0; l < lens[q]; ++l)
              for (std::size_t in = 0; in < os.inner; ++in)
                gp[(o * lens[q] + l) * os.inner + in] += g[(o * os.len + offsets[q] + l) * os.inner + in];
        }
      });
}

/// Takes `len` entries starting at `start` along `axis`.
inline Var slice(const Var& x, std::size_t axis, std::size_t start, std::size_t len) {
  const Shape& s = x.shape();
  if (axis >= s.rank() || start + len > s[axis] || len == 0)
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") on axis " + std::to_string(axis) + " out of bounds for " + s.str());
  Shape out_shape = s;
  out_shape[axis] = len;
  Tensor out(out_shape);
  const auto xs = detail::split_axis(s, axis);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < xs.outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t in = 0; in < xs.inner; ++in)
        out[(o * len + l) * xs.inner + in] = xv[(o * xs.len + start + l) * xs.inner + in];
  const std::size_t ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, xs, start, len](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad_ref(ix);
    for (std::size_t o = 0; o < xs.outer; ++o)
      for (std::size_t l = 0; l < len; ++l)
        for (std::size_t in = 0; in < xs.inner; ++in)
          gx[(o * xs.len + start + l) * xs.inner + in] += g[(o * len + l) * xs.inner + in];
  });
}

/// Mean softmax cross-entropy over rows. logits is [B,C] (or [C] with one label).
inline Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const Shape& s = logits.shape();
  if (s.rank() != 1 && s.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be [C] or [B,C], got " + s.str());
  const std::size_t rows = s.rank() == 2 ? s[0] : 1;
  const std::size_t classes = s.back();
  if (labels.size() != rows)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw std::out_of_range("softmax_cross_entropy: class id " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
  const Tensor& z = logits.value();
  Tensor probs(Shape{rows, classes});
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = z[r * classes];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z[r * classes + c]);
    double se = 0.0;
    for (std::size_t c = 0; c < classes; ++c) se += std::exp(z[r * classes + c] - mx);
    const double lse = mx + std::log(se);
    loss += lse - z[r * classes + labels[r]];
    for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(z[r * classes + c] - lse);
  }
  loss /= static_cast<double>(rows);
  const std::size_t il = logits.id;
  return logits.tape->record(
      Tensor::scalar(loss), {logits}, [il, probs, labels, rows, classes](Tape& tp, const Tensor& g) {
        Tensor& gl = tp.grad_ref(il);
        const double w = g[0] / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < classes; ++c) {
            const double onehot = static_cast<int>(c) == labels[r] ? 1.0 : 0.0;
            gl[r * classes + c] += w * (probs[r * classes + c] - onehot);
          }
      });
}

/// Row-wise matrix-vector product: m is [B, R*C] read as B matrices R x C, v is [B, C].
inline Var batched_matvec(const Var& m, const Var& v, std::size_t out_rows) {
  detail::check_same_tape(m, v, "batched_matvec");
  const Shape& ms = m.shape();
  const Shape& vs = v.shape();
  const bool batched = vs.rank() == 2;
  const std::size_t B = batched ? vs[0] : 1;
  const std::size_t C = vs.back();
  if ((batched && (ms.rank() != 2 || ms[0] != B || ms[1] != out_rows * C)) ||
      (!batched && (ms.rank() != 1 || ms[0] != out_rows * C)))
    throw ShapeError("batched_matvec: matrix " + ms.str() + " incompatible with vector " + vs.str() +
                     " for " + std::to_string(out_rows) + " output rows");
  Tensor out(batched ? Shape{B, out_rows} : Shape{out_rows});
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < out_rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += mv[(b * out_rows + r) * C + c] * vv[b * C + c];
      out[b * out_rows + r] = s;
    }
  const std::size_t im = m.id, iv = v.id;
  return m.tape->record(std::move(out), {m, v}, [im, iv, B, C, out_rows](Tape& tp, const Tensor& g) {
    const Tensor& mv2 = tp.value(im);
    const Tensor& vv2 = tp.value(iv);
    if (tp.requires_grad(im)) {
      Tensor& gm = tp.grad_ref(im);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < out_rows; ++r)
          for (std::size_t c = 0; c < C; ++c) gm[(b * out_rows + r) * C + c] += g[b * out_rows + r] * vv2[b * C + c];
    }
    if (tp.requires_grad(iv)) {
      Tensor& gv = tp.grad_ref(iv);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < out_rows; ++r)
          for (std::size_t c = 0; c < C; ++c) gv[b * C + c] += g[b * out_rows + r] * mv2[(b * out_rows + r) * C + c];
    }
  });
}

/// out[b,:] = sum_k weights[k][b] * parts[k][b,:]. Weights are constants; rows
/// of a rank-1 part count as a single batch row.
inline Var weighted_sum(const std::vector<Var>& parts, const std::vector<std::vector<double>>& weights) {
  if (parts.empty() || parts.size() != weights.size())
    throw ShapeError("weighted_sum: need one weight row per part");
  const Shape& s0 = parts[0].shape();
  const std::size_t B = s0.rank() == 2 ? s0[0] : 1;
  const std::size_t C = s0.back();
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts[k].shape() != s0) throw ShapeError("weighted_sum: part shape " + parts[k].shape().str() + " differs from " + s0.str());
    if (weights[k].size() != B) throw ShapeError("weighted_sum: weight row length differs from batch size");
  }
  Tensor out(s0);
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t b = 0; b < B; ++b) {
      const double w = weights[k][b];
      for (std::size_t c = 0; c < C; ++c) out[b * C + c] += w * pv[b * C + c];
    }
    ids.push_back(parts[k].id);
  }
  return parts[0].tape->record(std::move(out), std::span<const Var>(parts.data(), parts.size()),
                               [ids, weights, B, C](Tape& tp, const Tensor& g) {
                                 for (std::size_t k = 0; k < ids.size(); ++k) {
                                   if (!tp.requires_grad(ids[k])) continue;
                                   Tensor& gp = tp.grad_ref(ids[k]);
                                   for (std::size_t b = 0; b < B; ++b)
                                     for (std::size_t c = 0; c < C; ++c) gp[b * C + c] += weights[k][b] * g[b * C + c];
                                 }
                               });
}

inline bool is_finite(const Var& v) { return v.value().all_finite(); }

}  // namespace npc::ad
