#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lvs/kernels.hpp"
#include "lvs/tensor.hpp"

namespace lvs {

// Handle to a tape node. Only meaningful together with the tape that made it.
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

namespace detail {

// Type-dispatched kernel shims: f32 goes through the runtime ISA table, f64
// always uses the scalar reference.
template <typename T>
struct Kern;

template <>
struct Kern<float> {
  static void matmul(const float* A, const float* B, float* C, int64_t M, int64_t K, int64_t N) {
    kern::active().matmul_f32(A, B, C, M, K, N);
  }
  static void matmul_acc_bt(const float* dC, const float* B, float* dA, int64_t M, int64_t K,
                            int64_t N) {
    kern::active().matmul_acc_bt_f32(dC, B, dA, M, K, N);
  }
  static void matmul_acc_at(const float* A, const float* dC, float* dB, int64_t M, int64_t K,
                            int64_t N) {
    kern::active().matmul_acc_at_f32(A, dC, dB, M, K, N);
  }
  static void conv3x3(const float* x, const float* w, const float* b, float* y, int64_t Cin,
                      int64_t Cout, int64_t H, int64_t W) {
    kern::active().conv3x3_f32(x, w, b, y, Cin, Cout, H, W);
  }
  static void conv3x3_dx(const float* dy, const float* w, float* dx, int64_t Cin, int64_t Cout,
                         int64_t H, int64_t W) {
    kern::active().conv3x3_dx_f32(dy, w, dx, Cin, Cout, H, W);
  }
  static void conv3x3_dw(const float* x, const float* dy, float* dw, float* db, int64_t Cin,
                         int64_t Cout, int64_t H, int64_t W) {
    kern::active().conv3x3_dw_f32(x, dy, dw, db, Cin, Cout, H, W);
  }
  static void add(const float* a, const float* b, float* o, int64_t n) {
    kern::active().add_f32(a, b, o, n);
  }
  static void sub(const float* a, const float* b, float* o, int64_t n) {
    kern::active().sub_f32(a, b, o, n);
  }
  static void mul(const float* a, const float* b, float* o, int64_t n) {
    kern::active().mul_f32(a, b, o, n);
  }
  static void mul_acc(const float* a, const float* b, float* o, int64_t n) {
    kern::active().mul_acc_f32(a, b, o, n);
  }
  static void scale(const float* x, float s, float* o, int64_t n) {
    kern::active().scale_f32(x, s, o, n);
  }
  static void axpy(float alpha, const float* x, float* y, int64_t n) {
    kern::active().axpy_f32(alpha, x, y, n);
  }
  static float reduce_add(const float* x, int64_t n) { return kern::active().reduce_add_f32(x, n); }
  static float dot_blocked(const float* a, const float* b, int64_t n) {
    return kern::active().dot_blocked_f32(a, b, n);
  }
};

template <>
struct Kern<double> {
  static void matmul(const double* A, const double* B, double* C, int64_t M, int64_t K, int64_t N) {
    kern::ref::matmul(A, B, C, M, K, N);
  }
  static void matmul_acc_bt(const double* dC, const double* B, double* dA, int64_t M, int64_t K,
                            int64_t N) {
    kern::ref::matmul_acc_bt(dC, B, dA, M, K, N);
  }
  static void matmul_acc_at(const double* A, const double* dC, double* dB, int64_t M, int64_t K,
                            int64_t N) {
    kern::ref::matmul_acc_at(A, dC, dB, M, K, N);
  }
  static void conv3x3(const double* x, const double* w, const double* b, double* y, int64_t Cin,
                      int64_t Cout, int64_t H, int64_t W) {
    kern::ref::conv3x3(x, w, b, y, Cin, Cout, H, W);
  }
  static void conv3x3_dx(const double* dy, const double* w, double* dx, int64_t Cin, int64_t Cout,
                         int64_t H, int64_t W) {
    kern::ref::conv3x3_dx(dy, w, dx, Cin, Cout, H, W);
  }
  static void conv3x3_dw(const double* x, const double* dy, double* dw, double* db, int64_t Cin,
                         int64_t Cout, int64_t H, int64_t W) {
    kern::ref::conv3x3_dw(x, dy, dw, db, Cin, Cout, H, W);
  }
  static void add(const double* a, const double* b, double* o, int64_t n) {
    kern::ref::add(a, b, o, n);
  }
  static void sub(const double* a, const double* b, double* o, int64_t n) {
    kern::ref::sub(a, b, o, n);
  }
  static void mul(const double* a, const double* b, double* o, int64_t n) {
    kern::ref::mul(a, b, o, n);
  }
  static void mul_acc(const double* a, const double* b, double* o, int64_t n) {
    kern::ref::mul_acc(a, b, o, n);
  }
  static void scale(const double* x, double s, double* o, int64_t n) {
    kern::ref::scale(x, s, o, n);
  }
  static void axpy(double alpha, const double* x, double* y, int64_t n) {
    kern::ref::axpy(alpha, x, y, n);
  }
  static double reduce_add(const double* x, int64_t n) { return kern::ref::reduce_add(x, n); }
  static double dot_blocked(const double* a, const double* b, int64_t n) {
    return kern::ref::dot_blocked(a, b, n);
  }
};

}  // namespace detail

// Reverse-mode tape over a closed op set. One tape per forward pass; nodes are
// created in program order and backward replays them in exact reverse, so a
// given graph always accumulates gradients in the same order.
//
// Forward scalar-op counts accumulate into flops() as nodes are recorded; the
// counts are pure functions of shapes, never of data.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  // --- node plumbing ---

  Var leaf(Tensor<T> value) { return push(std::move(value), {}, nullptr, true); }
  Var constant(Tensor<T> value) { return push(std::move(value), {}, nullptr, false); }

  // Custom op entry point used by the geometry / rendering / attention
  // modules. `backward` receives the gradient wrt this node's value and must
  // accumulate (+=) into parent grads via grad_acc().
  Var node(Tensor<T> value, std::vector<Var> parents, BackwardFn backward, int64_t flop_count = 0) {
    bool rg = false;
    for (Var p : parents) rg = rg || needs_grad(p);
    flops_ += flop_count;
    return push(std::move(value), std::move(parents), rg ? std::move(backward) : nullptr, rg);
  }

  const Tensor<T>& value(Var v) const { return nodes_[check(v)].value; }
  // In-place edit of a stored value. Only safe before any dependent node is
  // recorded; later nodes bake the old bytes into their forward results.
  Tensor<T>& value_mut(Var v) { return nodes_[check(v)].value; }
  const Tensor<T>& grad(Var v) const { return nodes_[check(v)].grad; }
  bool needs_grad(Var v) const { return nodes_[check(v)].requires_grad; }

  // Gradient accumulator of `v`; zero-initialized at first touch.
  Tensor<T>& grad_acc(Var v) {
    Node& n = nodes_[check(v)];
    if (n.grad.numel() == 0 && n.value.numel() > 0) n.grad = Tensor<T>::zeros(n.value.shape());
    return n.grad;
  }

  int64_t flops() const { return flops_; }
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse creation order,
  // visiting only nodes that can reach `loss`.
  void backward(Var loss) {
    Node& ln = nodes_[check(loss)];
    if (ln.value.numel() != 1)
      throw DimError("backward: loss must be a single scalar, got " + shape_str(ln.value.shape()));
    if (!ln.requires_grad) throw DimError("backward: loss does not depend on any leaf");
    std::vector<char> live(nodes_.size(), 0);
    live[loss.id] = 1;
    for (int32_t i = loss.id; i >= 0; --i) {
      if (!live[i]) continue;
      for (Var p : nodes_[i].parents)
        if (nodes_[p.id].requires_grad) live[p.id] = 1;
    }
    grad_acc(loss)[0] = T(1);
    for (int32_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!live[i] || !n.backward) continue;
      if (n.grad.numel() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  // --- elementwise and shape ops ---

  Var add(Var a, Var b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    require_same(va, vb, "add");
    Tensor<T> out(va.shape());
    detail::Kern<T>::add(va.data(), vb.data(), out.data(), out.numel());
    return node(std::move(out), {a, b},
                [a, b](Tape& t, const Tensor<T>& g) {
                  if (t.needs_grad(a)) detail::Kern<T>::axpy(T(1), g.data(), t.grad_acc(a).data(), g.numel());
                  if (t.needs_grad(b)) detail::Kern<T>::axpy(T(1), g.data(), t.grad_acc(b).data(), g.numel());
                },
                va.numel());
  }

  Var sub(Var a, Var b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    require_same(va, vb, "sub");
    Tensor<T> out(va.shape());
    detail::Kern<T>::sub(va.data(), vb.data(), out.data(), out.numel());
    return node(std::move(out), {a, b},
                [a, b](Tape& t, const Tensor<T>& g) {
                  if (t.needs_grad(a)) detail::Kern<T>::axpy(T(1), g.data(), t.grad_acc(a).data(), g.numel());
                  if (t.needs_grad(b)) detail::Kern<T>::axpy(T(-1), g.data(), t.grad_acc(b).data(), g.numel());
                },
                va.numel());
  }

  Var mul(Var a, Var b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    require_same(va, vb, "mul");
    Tensor<T> out(va.shape());
    detail::Kern<T>::mul(va.data(), vb.data(), out.data(), out.numel());
    return node(std::move(out), {a, b},
                [a, b](Tape& t, const Tensor<T>& g) {
                  if (t.needs_grad(a))
                    detail::Kern<T>::mul_acc(g.data(), t.value(b).data(), t.grad_acc(a).data(), g.numel());
                  if (t.needs_grad(b))
                    detail::Kern<T>::mul_acc(g.data(), t.value(a).data(), t.grad_acc(b).data(), g.numel());
                },
                va.numel());
  }

  Var scale(Var x, double s) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out(vx.shape());
    detail::Kern<T>::scale(vx.data(), T(s), out.data(), out.numel());
    return node(std::move(out), {x},
                [x, s](Tape& t, const Tensor<T>& g) {
                  if (t.needs_grad(x)) detail::Kern<T>::axpy(T(s), g.data(), t.grad_acc(x).data(), g.numel());
                },
                vx.numel());
  }

  Var offset(Var x, double c) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out(vx.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = vx[i] + T(c);
    return node(std::move(out), {x},
                [x](Tape& t, const Tensor<T>& g) {
                  if (t.needs_grad(x)) detail::Kern<T>::axpy(T(1), g.data(), t.grad_acc(x).data(), g.numel());
                },
                vx.numel());
  }

  Var neg(Var x) { return scale(x, -1.0); }

  // x[..., C] + b[C]
  Var add_bias(Var x, Var b) {
    const Tensor<T>&vx = value(x), &vb = value(b);
    if (vx.rank() < 1 || vb.rank() != 1 || vx.dim(-1) != vb.dim(0))
      throw DimError("add_bias: " + shape_str(vx.shape()) + " vs " + shape_str(vb.shape()));
    int64_t C = vb.dim(0), P = vx.numel() / C;
    Tensor<T> out(vx.shape());
    for (int64_t p = 0; p < P; ++p)
      for (int64_t c = 0; c < C; ++c) out[p * C + c] = vx[p * C + c] + vb[c];
    return node(std::move(out), {x, b},
                [x, b, P, C](Tape& t, const Tensor<T>& g) {
                  if (t.needs_grad(x)) detail::Kern<T>::axpy(T(1), g.data(), t.grad_acc(x).data(), g.numel());
                  if (t.needs_grad(b)) {
                    Tensor<T>& gb = t.grad_acc(b);
                    for (int64_t p = 0; p < P; ++p)
                      for (int64_t c = 0; c < C; ++c) gb[c] += g[p * C + c];
                  }
                },
                vx.numel());
  }

  Var sigmoid(Var x) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out(vx.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-vx[i]));
    Var self = node(std::move(out), {x}, nullptr, 4 * vx.numel());
    set_backward(self, [x, self](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x)) return;
      const Tensor<T>& y = t.value(self);
      Tensor<T>& gx = t.grad_acc(x);
      for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
    return self;
  }

  Var tanh_(Var x) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out(vx.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(vx[i]);
    Var self = node(std::move(out), {x}, nullptr, 4 * vx.numel());
    set_backward(self, [x, self](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x)) return;
      const Tensor<T>& y = t.value(self);
      Tensor<T>& gx = t.grad_acc(x);
      for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
    });
    return self;
  }

  // Exact erf form.
  Var gelu(Var x) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out(vx.shape());
    const T inv_sqrt2 = T(0.70710678118654752440);
    for (int64_t i = 0; i < out.numel(); ++i)
      out[i] = T(0.5) * vx[i] * (T(1) + std::erf(vx[i] * inv_sqrt2));
    return node(std::move(out), {x},
                [x](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  const Tensor<T>& vx = t.value(x);
                  Tensor<T>& gx = t.grad_acc(x);
                  const T inv_sqrt2 = T(0.70710678118654752440);
                  const T inv_sqrt2pi = T(0.39894228040143267794);
                  for (int64_t i = 0; i < g.numel(); ++i) {
                    T xi = vx[i];
                    T cdf = T(0.5) * (T(1) + std::erf(xi * inv_sqrt2));
                    T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xi * xi);
                    gx[i] += g[i] * (cdf + xi * pdf);
                  }
                },
                8 * vx.numel());
  }

  Var recip(Var x) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out(vx.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / vx[i];
    Var self = node(std::move(out), {x}, nullptr, vx.numel());
    set_backward(self, [x, self](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x)) return;
      const Tensor<T>& y = t.value(self);
      Tensor<T>& gx = t.grad_acc(x);
      for (int64_t i = 0; i < g.numel(); ++i) gx[i] -= g[i] * y[i] * y[i];
    });
    return self;
  }

  Var abs_(Var x) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out(vx.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(vx[i]);
    return node(std::move(out), {x},
                [x](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  const Tensor<T>& vx = t.value(x);
                  Tensor<T>& gx = t.grad_acc(x);
                  for (int64_t i = 0; i < g.numel(); ++i)
                    gx[i] += vx[i] > T(0) ? g[i] : (vx[i] < T(0) ? -g[i] : T(0));
                },
                vx.numel());
  }

  Var clamp_min(Var x, double m) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out(vx.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = vx[i] > T(m) ? vx[i] : T(m);
    return node(std::move(out), {x},
                [x, m](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  const Tensor<T>& vx = t.value(x);
                  Tensor<T>& gx = t.grad_acc(x);
                  for (int64_t i = 0; i < g.numel(); ++i)
                    if (vx[i] > T(m)) gx[i] += g[i];
                },
                vx.numel());
  }

  Var softmax(Var x, int axis) {
    const Tensor<T>& vx = value(x);
    int r = vx.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimError("softmax: bad axis");
    int64_t n = vx.shape()[axis];
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < r; ++i) inner *= vx.shape()[i];
    for (int i = 0; i < axis; ++i) outer *= vx.shape()[i];
    Tensor<T> out(vx.shape());
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        const T* src = vx.data() + o * n * inner + in;
        T* dst = out.data() + o * n * inner + in;
        T mx = src[0];
        for (int64_t k = 1; k < n; ++k) mx = std::max(mx, src[k * inner]);
        T sum = 0;
        for (int64_t k = 0; k < n; ++k) {
          T e = std::exp(src[k * inner] - mx);
          dst[k * inner] = e;
          sum += e;
        }
        T inv = T(1) / sum;
        for (int64_t k = 0; k < n; ++k) dst[k * inner] *= inv;
      }
    Var self = node(std::move(out), {x}, nullptr, 12 * vx.numel());
    set_backward(self, [x, self, outer, inner, n](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x)) return;
      const Tensor<T>& y = t.value(self);
      Tensor<T>& gx = t.grad_acc(x);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          int64_t base = o * n * inner + in;
          T dot = 0;
          for (int64_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
          for (int64_t k = 0; k < n; ++k)
            gx[base + k * inner] += y[base + k * inner] * (g[base + k * inner] - dot);
        }
    });
    return self;
  }

  Var sum_all(Var x) {
    const Tensor<T>& vx = value(x);
    Tensor<T> out = Tensor<T>::scalar(detail::Kern<T>::reduce_add(vx.data(), vx.numel()));
    return node(std::move(out), {x},
                [x](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  Tensor<T>& gx = t.grad_acc(x);
                  T gv = g[0];
                  for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += gv;
                },
                vx.numel());
  }

  Var mean_all(Var x) { return scale(sum_all(x), 1.0 / double(value(x).numel())); }

  Var reshape(Var x, Shape shape) {
    Tensor<T> out = value(x).reshaped(std::move(shape));
    Shape orig = value(x).shape();
    return node(std::move(out), {x},
                [x, orig](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  detail::Kern<T>::axpy(T(1), g.data(), t.grad_acc(x).data(), g.numel());
                },
                0);
  }

  Var concat_last(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimError("concat_last: no inputs");
    Shape lead = value(parts[0]).shape();
    lead.pop_back();
    int64_t P = 1;
    for (int64_t d : lead) P *= d;
    int64_t Ctot = 0;
    std::vector<int64_t> widths;
    for (Var v : parts) {
      Shape s = value(v).shape();
      int64_t c = s.back();
      s.pop_back();
      if (s != lead) throw DimError("concat_last: leading dims differ");
      widths.push_back(c);
      Ctot += c;
    }
    Shape out_shape = lead;
    out_shape.push_back(Ctot);
    Tensor<T> out(out_shape);
    for (int64_t p = 0; p < P; ++p) {
      int64_t off = 0;
      for (size_t i = 0; i < parts.size(); ++i) {
        const Tensor<T>& v = value(parts[i]);
        for (int64_t c = 0; c < widths[i]; ++c) out[p * Ctot + off + c] = v[p * widths[i] + c];
        off += widths[i];
      }
    }
    std::vector<Var> ps = parts;
    return node(std::move(out), ps,
                [ps, widths, P, Ctot](Tape& t, const Tensor<T>& g) {
                  int64_t off = 0;
                  for (size_t i = 0; i < ps.size(); ++i) {
                    if (t.needs_grad(ps[i])) {
                      Tensor<T>& gp = t.grad_acc(ps[i]);
                      for (int64_t p = 0; p < P; ++p)
                        for (int64_t c = 0; c < widths[i]; ++c)
                          gp[p * widths[i] + c] += g[p * Ctot + off + c];
                    }
                    off += widths[i];
                  }
                },
                0);
  }

  Var slice_last(Var x, int64_t start, int64_t len) {
    const Tensor<T>& vx = value(x);
    int64_t C = vx.dim(-1);
    if (start < 0 || len < 0 || start + len > C) throw DimError("slice_last: range out of bounds");
    Shape out_shape = vx.shape();
    out_shape.back() = len;
    int64_t P = vx.numel() / C;
    Tensor<T> out(out_shape);
    for (int64_t p = 0; p < P; ++p)
      for (int64_t c = 0; c < len; ++c) out[p * len + c] = vx[p * C + start + c];
    return node(std::move(out), {x},
                [x, start, len, C, P](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  Tensor<T>& gx = t.grad_acc(x);
                  for (int64_t p = 0; p < P; ++p)
                    for (int64_t c = 0; c < len; ++c) gx[p * C + start + c] += g[p * len + c];
                },
                0);
  }

  // out[p] = x[p, :] * s[p] with s shaped like x minus its last axis.
  Var row_scale(Var x, Var s) {
    const Tensor<T>&vx = value(x), &vs = value(s);
    Shape lead = vx.shape();
    lead.pop_back();
    if (vs.shape() != lead)
      throw DimError("row_scale: scale shape " + shape_str(vs.shape()) + " vs rows " + shape_str(lead));
    int64_t C = vx.dim(-1), P = vs.numel();
    Tensor<T> out(vx.shape());
    for (int64_t p = 0; p < P; ++p)
      detail::Kern<T>::scale(vx.data() + p * C, vs[p], out.data() + p * C, C);
    return node(std::move(out), {x, s},
                [x, s, P, C](Tape& t, const Tensor<T>& g) {
                  if (t.needs_grad(x)) {
                    const Tensor<T>& vs = t.value(s);
                    Tensor<T>& gx = t.grad_acc(x);
                    for (int64_t p = 0; p < P; ++p)
                      detail::Kern<T>::axpy(vs[p], g.data() + p * C, gx.data() + p * C, C);
                  }
                  if (t.needs_grad(s)) {
                    const Tensor<T>& vx = t.value(x);
                    Tensor<T>& gs = t.grad_acc(s);
                    for (int64_t p = 0; p < P; ++p)
                      gs[p] += detail::Kern<T>::dot_blocked(g.data() + p * C, vx.data() + p * C, C);
                  }
                },
                2 * vx.numel());
  }

  // out[p, c] = sum_m w[p, m] * tokens[p, m, c]
  Var mix_tokens(Var w, Var tokens) {
    const Tensor<T>&vw = value(w), &vt = value(tokens);
    Shape lead = vw.shape();
    int64_t M = lead.back();
    lead.pop_back();
    Shape tlead = vt.shape();
    int64_t C = tlead.back();
    tlead.pop_back();
    int64_t tm = tlead.back();
    tlead.pop_back();
    if (tlead != lead || tm != M)
      throw DimError("mix_tokens: weights " + shape_str(vw.shape()) + " vs tokens " + shape_str(vt.shape()));
    int64_t P = 1;
    for (int64_t d : lead) P *= d;
    Shape out_shape = lead;
    out_shape.push_back(C);
    Tensor<T> out(out_shape);
    for (int64_t p = 0; p < P; ++p)
      for (int64_t m = 0; m < M; ++m)
        detail::Kern<T>::axpy(vw[p * M + m], vt.data() + (p * M + m) * C, out.data() + p * C, C);
    return node(std::move(out), {w, tokens},
                [w, tokens, P, M, C](Tape& t, const Tensor<T>& g) {
                  if (t.needs_grad(w)) {
                    const Tensor<T>& vt = t.value(tokens);
                    Tensor<T>& gw = t.grad_acc(w);
                    for (int64_t p = 0; p < P; ++p)
                      for (int64_t m = 0; m < M; ++m)
                        gw[p * M + m] +=
                            detail::Kern<T>::dot_blocked(g.data() + p * C, vt.data() + (p * M + m) * C, C);
                  }
                  if (t.needs_grad(tokens)) {
                    const Tensor<T>& vw = t.value(w);
                    Tensor<T>& gt = t.grad_acc(tokens);
                    for (int64_t p = 0; p < P; ++p)
                      for (int64_t m = 0; m < M; ++m)
                        detail::Kern<T>::axpy(vw[p * M + m], g.data() + p * C,
                                              gt.data() + (p * M + m) * C, C);
                  }
                },
                2 * vt.numel());
  }

  // x: [..., C], tokens: [..., M, C] -> [..., M]; out[p,m] = <x[p], tokens[p,m]>.
  // Adjoint of mix_tokens in its weight slot.
  Var dot_tokens(Var x, Var tokens) {
    const Tensor<T>&vx = value(x), &vt = value(tokens);
    Shape lead = vx.shape();
    int64_t C = lead.back();
    lead.pop_back();
    Shape tlead = vt.shape();
    int64_t tc = tlead.back();
    tlead.pop_back();
    int64_t M = tlead.back();
    tlead.pop_back();
    if (tlead != lead || tc != C)
      throw DimError("dot_tokens: x " + shape_str(vx.shape()) + " vs tokens " + shape_str(vt.shape()));
    int64_t P = 1;
    for (int64_t d : lead) P *= d;
    Shape out_shape = lead;
    out_shape.push_back(M);
    Tensor<T> out(out_shape);
    for (int64_t p = 0; p < P; ++p)
      for (int64_t m = 0; m < M; ++m)
        out[p * M + m] = detail::Kern<T>::dot_blocked(vx.data() + p * C, vt.data() + (p * M + m) * C, C);
    return node(std::move(out), {x, tokens},
                [x, tokens, P, M, C](Tape& t, const Tensor<T>& g) {
                  if (t.needs_grad(x)) {
                    const Tensor<T>& vt = t.value(tokens);
                    Tensor<T>& gx = t.grad_acc(x);
                    for (int64_t p = 0; p < P; ++p)
                      for (int64_t m = 0; m < M; ++m)
                        detail::Kern<T>::axpy(g[p * M + m], vt.data() + (p * M + m) * C,
                                              gx.data() + p * C, C);
                  }
                  if (t.needs_grad(tokens)) {
                    const Tensor<T>& vx = t.value(x);
                    Tensor<T>& gt = t.grad_acc(tokens);
                    for (int64_t p = 0; p < P; ++p)
                      for (int64_t m = 0; m < M; ++m)
                        detail::Kern<T>::axpy(g[p * M + m], vx.data() + p * C,
                                              gt.data() + (p * M + m) * C, C);
                  }
                },
                2 * vt.numel());
  }

  // x[..., H, W, C] -> [..., C, H, W]
  Var hwc_to_chw(Var x) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() < 3) throw DimError("hwc_to_chw: rank < 3");
    int64_t C = vx.dim(-1), W = vx.dim(-2), H = vx.dim(-3);
    int64_t B = vx.numel() / (H * W * C);
    Shape out_shape = vx.shape();
    int r = vx.rank();
    out_shape[r - 3] = C;
    out_shape[r - 2] = H;
    out_shape[r - 1] = W;
    Tensor<T> out(out_shape);
    for (int64_t n = 0; n < B; ++n) {
      const T* src = vx.data() + n * H * W * C;
      T* dst = out.data() + n * H * W * C;
      for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j)
          for (int64_t c = 0; c < C; ++c) dst[(c * H + i) * W + j] = src[(i * W + j) * C + c];
    }
    return node(std::move(out), {x},
                [x, B, H, W, C](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  Tensor<T>& gx = t.grad_acc(x);
                  for (int64_t n = 0; n < B; ++n) {
                    T* dst = gx.data() + n * H * W * C;
                    const T* src = g.data() + n * H * W * C;
                    for (int64_t i = 0; i < H; ++i)
                      for (int64_t j = 0; j < W; ++j)
                        for (int64_t c = 0; c < C; ++c)
                          dst[(i * W + j) * C + c] += src[(c * H + i) * W + j];
                  }
                },
                0);
  }

  // x[..., C, H, W] -> [..., H, W, C]
  Var chw_to_hwc(Var x) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() < 3) throw DimError("chw_to_hwc: rank < 3");
    int64_t W = vx.dim(-1), H = vx.dim(-2), C = vx.dim(-3);
    int64_t B = vx.numel() / (H * W * C);
    Shape out_shape = vx.shape();
    int r = vx.rank();
    out_shape[r - 3] = H;
    out_shape[r - 2] = W;
    out_shape[r - 1] = C;
    Tensor<T> out(out_shape);
    for (int64_t n = 0; n < B; ++n) {
      const T* src = vx.data() + n * H * W * C;
      T* dst = out.data() + n * H * W * C;
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H; ++i)
          for (int64_t j = 0; j < W; ++j) dst[(i * W + j) * C + c] = src[(c * H + i) * W + j];
    }
    return node(std::move(out), {x},
                [x, B, H, W, C](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  Tensor<T>& gx = t.grad_acc(x);
                  for (int64_t n = 0; n < B; ++n) {
                    T* dst = gx.data() + n * H * W * C;
                    const T* src = g.data() + n * H * W * C;
                    for (int64_t c = 0; c < C; ++c)
                      for (int64_t i = 0; i < H; ++i)
                        for (int64_t j = 0; j < W; ++j)
                          dst[(c * H + i) * W + j] += src[(i * W + j) * C + c];
                  }
                },
                0);
  }

  // --- dense linear algebra ---

  Var matmul(Var a, Var b) {
    const Tensor<T>&va = value(a), &vb = value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0))
      throw DimError("matmul: " + shape_str(va.shape()) + " x " + shape_str(vb.shape()));
    int64_t M = va.dim(0), K = va.dim(1), N = vb.dim(1);
    Tensor<T> out({M, N});
    detail::Kern<T>::matmul(va.data(), vb.data(), out.data(), M, K, N);
    return node(std::move(out), {a, b},
                [a, b, M, K, N](Tape& t, const Tensor<T>& g) {
                  if (t.needs_grad(a))
                    detail::Kern<T>::matmul_acc_bt(g.data(), t.value(b).data(), t.grad_acc(a).data(), M, K, N);
                  if (t.needs_grad(b))
                    detail::Kern<T>::matmul_acc_at(t.value(a).data(), g.data(), t.grad_acc(b).data(), M, K, N);
                },
                2 * M * K * N);
  }

  // x[..., Cin, H, W] -> [..., Cout, H, W]; w[Cout, Cin, 3, 3]; optional bias[Cout].
  Var conv3x3(Var x, Var w, Var b) {
    const Tensor<T>&vx = value(x), &vw = value(w);
    if (vx.rank() < 3 || vw.rank() != 4 || vw.dim(2) != 3 || vw.dim(3) != 3)
      throw DimError("conv3x3: bad shapes " + shape_str(vx.shape()) + ", " + shape_str(vw.shape()));
    int64_t W = vx.dim(-1), H = vx.dim(-2), Cin = vx.dim(-3);
    int64_t Cout = vw.dim(0);
    if (vw.dim(1) != Cin) throw DimError("conv3x3: Cin mismatch");
    const T* bias = nullptr;
    if (b.valid()) {
      require_shape(value(b), {Cout}, "conv3x3 bias");
      bias = value(b).data();
    }
    int64_t B = vx.numel() / (Cin * H * W);
    Shape out_shape = vx.shape();
    out_shape[out_shape.size() - 3] = Cout;
    Tensor<T> out(out_shape);
    for (int64_t n = 0; n < B; ++n)
      detail::Kern<T>::conv3x3(vx.data() + n * Cin * H * W, vw.data(), bias,
                               out.data() + n * Cout * H * W, Cin, Cout, H, W);
    std::vector<Var> parents = {x, w};
    if (b.valid()) parents.push_back(b);
    return node(std::move(out), parents,
                [x, w, b, B, Cin, Cout, H, W](Tape& t, const Tensor<T>& g) {
                  if (t.needs_grad(x)) {
                    Tensor<T>& gx = t.grad_acc(x);
                    for (int64_t n = 0; n < B; ++n)
                      detail::Kern<T>::conv3x3_dx(g.data() + n * Cout * H * W, t.value(w).data(),
                                                  gx.data() + n * Cin * H * W, Cin, Cout, H, W);
                  }
                  bool nw = t.needs_grad(w);
                  bool nb = b.valid() && t.needs_grad(b);
                  if (nw || nb) {
                    T* dw = nw ? t.grad_acc(w).data() : nullptr;
                    T* db = nb ? t.grad_acc(b).data() : nullptr;
                    if (!nw) {
                      // bias-only grad still runs through the dw kernel path
                      Tensor<T> scratch({Cout, Cin, 3, 3});
                      for (int64_t n = 0; n < B; ++n)
                        detail::Kern<T>::conv3x3_dw(t.value(x).data() + n * Cin * H * W,
                                                    g.data() + n * Cout * H * W, scratch.data(), db,
                                                    Cin, Cout, H, W);
                    } else {
                      for (int64_t n = 0; n < B; ++n)
                        detail::Kern<T>::conv3x3_dw(t.value(x).data() + n * Cin * H * W,
                                                    g.data() + n * Cout * H * W, dw, db, Cin, Cout,
                                                    H, W);
                    }
                  }
                },
                B * (2 * 9 * Cin * Cout * H * W + (bias ? Cout * H * W : 0)));
  }

  // y = x / sqrt(mean(x^2) + eps) * gain over the last axis.
  Var rms_norm(Var x, Var gain) {
    const Tensor<T>& vx = value(x);
    int64_t C = vx.dim(-1), P = vx.numel() / C;
    require_shape(value(gain), {C}, "rms_norm gain");
    const Tensor<T>& vg = value(gain);
    const T eps = T(1e-6);
    Tensor<T> out(vx.shape());
    Tensor<T> rinv({P});
    for (int64_t p = 0; p < P; ++p) {
      const T* row = vx.data() + p * C;
      T ms = 0;
      for (int64_t c = 0; c < C; ++c) ms += row[c] * row[c];
      ms /= T(C);
      T r = T(1) / std::sqrt(ms + eps);
      rinv[p] = r;
      for (int64_t c = 0; c < C; ++c) out[p * C + c] = row[c] * r * vg[c];
    }
    return node(std::move(out), {x, gain},
                [x, gain, P, C, rinv](Tape& t, const Tensor<T>& g) {
                  const Tensor<T>& vx = t.value(x);
                  const Tensor<T>& vg = t.value(gain);
                  if (t.needs_grad(x)) {
                    Tensor<T>& gx = t.grad_acc(x);
                    for (int64_t p = 0; p < P; ++p) {
                      const T* row = vx.data() + p * C;
                      const T* grow = g.data() + p * C;
                      T r = rinv[p];
                      T dot = 0;
                      for (int64_t c = 0; c < C; ++c) dot += grow[c] * vg[c] * row[c];
                      T k = r * r * r / T(C);
                      for (int64_t c = 0; c < C; ++c)
                        gx[p * C + c] += grow[c] * vg[c] * r - k * row[c] * dot;
                    }
                  }
                  if (t.needs_grad(gain)) {
                    Tensor<T>& gg = t.grad_acc(gain);
                    for (int64_t p = 0; p < P; ++p)
                      for (int64_t c = 0; c < C; ++c)
                        gg[c] += g[p * C + c] * vx[p * C + c] * rinv[p];
                  }
                },
                4 * vx.numel());
  }

  // 2x2 average pooling over the trailing two axes; extents must be even.
  Var mean_pool2(Var x) {
    const Tensor<T>& vx = value(x);
    int64_t W = vx.dim(-1), H = vx.dim(-2);
    if (H % 2 || W % 2)
      throw DimError("mean_pool2: extents must be even, got " + shape_str(vx.shape()));
    int64_t B = vx.numel() / (H * W);
    Shape out_shape = vx.shape();
    out_shape[out_shape.size() - 2] = H / 2;
    out_shape[out_shape.size() - 1] = W / 2;
    Tensor<T> out(out_shape);
    int64_t Ho = H / 2, Wo = W / 2;
    for (int64_t n = 0; n < B; ++n) {
      const T* src = vx.data() + n * H * W;
      T* dst = out.data() + n * Ho * Wo;
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          T s = src[(2 * i) * W + 2 * j] + src[(2 * i) * W + 2 * j + 1] +
                src[(2 * i + 1) * W + 2 * j] + src[(2 * i + 1) * W + 2 * j + 1];
          dst[i * Wo + j] = s * T(0.25);
        }
    }
    return node(std::move(out), {x},
                [x, B, H, W, Ho, Wo](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  Tensor<T>& gx = t.grad_acc(x);
                  for (int64_t n = 0; n < B; ++n) {
                    T* dst = gx.data() + n * H * W;
                    const T* src = g.data() + n * Ho * Wo;
                    for (int64_t i = 0; i < Ho; ++i)
                      for (int64_t j = 0; j < Wo; ++j) {
                        T gv = src[i * Wo + j] * T(0.25);
                        dst[(2 * i) * W + 2 * j] += gv;
                        dst[(2 * i) * W + 2 * j + 1] += gv;
                        dst[(2 * i + 1) * W + 2 * j] += gv;
                        dst[(2 * i + 1) * W + 2 * j + 1] += gv;
                      }
                  }
                },
                5 * out.numel());
  }

  // Half-pixel-center bilinear resize of the trailing two axes, edges clamped.
  Var resize_bilinear(Var x, int64_t Ho, int64_t Wo) {
    const Tensor<T>& vx = value(x);
    int64_t W = vx.dim(-1), H = vx.dim(-2);
    int64_t B = vx.numel() / (H * W);
    Shape out_shape = vx.shape();
    out_shape[out_shape.size() - 2] = Ho;
    out_shape[out_shape.size() - 1] = Wo;
    if (H == Ho && W == Wo) return reshape(x, out_shape);
    // Precompute per-axis taps; shared by forward and backward.
    auto taps = [](int64_t out_n, int64_t in_n) {
      std::vector<int64_t> i0(out_n), i1(out_n);
      std::vector<T> f(out_n);
      double s = double(in_n) / double(out_n);
      for (int64_t i = 0; i < out_n; ++i) {
        double u = (double(i) + 0.5) * s - 0.5;
        double fl = std::floor(u);
        int64_t a = int64_t(fl);
        T frac = T(u - fl);
        i0[i] = std::min(std::max(a, int64_t(0)), in_n - 1);
        i1[i] = std::min(std::max(a + 1, int64_t(0)), in_n - 1);
        f[i] = frac;
      }
      return std::make_tuple(i0, i1, f);
    };
    auto [y0, y1, fy] = taps(Ho, H);
    auto [x0, x1, fx] = taps(Wo, W);
    Tensor<T> out(out_shape);
    for (int64_t n = 0; n < B; ++n) {
      const T* src = vx.data() + n * H * W;
      T* dst = out.data() + n * Ho * Wo;
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          T a = src[y0[i] * W + x0[j]], b = src[y0[i] * W + x1[j]];
          T c = src[y1[i] * W + x0[j]], d = src[y1[i] * W + x1[j]];
          T top = a + (b - a) * fx[j];
          T bot = c + (d - c) * fx[j];
          dst[i * Wo + j] = top + (bot - top) * fy[i];
        }
    }
    return node(std::move(out), {x},
                [x, B, H, W, Ho, Wo, y0, y1, fy, x0, x1, fx](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  Tensor<T>& gx = t.grad_acc(x);
                  for (int64_t n = 0; n < B; ++n) {
                    T* dst = gx.data() + n * H * W;
                    const T* src = g.data() + n * Ho * Wo;
                    for (int64_t i = 0; i < Ho; ++i)
                      for (int64_t j = 0; j < Wo; ++j) {
                        T gv = src[i * Wo + j];
                        T wy1 = fy[i], wy0 = T(1) - wy1;
                        T wx1 = fx[j], wx0 = T(1) - wx1;
                        dst[y0[i] * W + x0[j]] += gv * wy0 * wx0;
                        dst[y0[i] * W + x1[j]] += gv * wy0 * wx1;
                        dst[y1[i] * W + x0[j]] += gv * wy1 * wx0;
                        dst[y1[i] * W + x1[j]] += gv * wy1 * wx1;
                      }
                  }
                },
                8 * out.numel());
    }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<Var> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  int32_t check(Var v) const {
    if (v.id < 0 || size_t(v.id) >= nodes_.size()) throw DimError("invalid tape handle");
    return v.id;
  }

  Var push(Tensor<T> value, std::vector<Var> parents, BackwardFn bw, bool rg) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(bw);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return Var{int32_t(nodes_.size() - 1)};
  }

  void set_backward(Var v, BackwardFn bw) {
    Node& n = nodes_[check(v)];
    if (n.requires_grad) n.backward = std::move(bw);
  }

  static void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
      throw DimError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }

  // deque: value/grad references stay valid while new nodes are recorded.
  std::deque<Node> nodes_;
  int64_t flops_ = 0;
};

}  // namespace lvs
