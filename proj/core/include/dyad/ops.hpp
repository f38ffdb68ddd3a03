#pragma once

// Differentiable tensor operations. Every op computes its forward result and,
// when a tape is active and some input lies on a gradient path, records a
// closure that pulls the output gradient back into the inputs.

#include <algorithm>
#include <cmath>
#include <cstring>

#include <Eigen/Core>

#include "dyad/tensor.hpp"

namespace dyad {

namespace detail {

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class T>
inline void maybe_record(const char* tag, std::initializer_list<TensorT<T>> ins, TensorT<T>& out,
                         std::function<void()> pull) {
  auto* tp = TapeT<T>::active();
  if (!tp) return;
  bool need = false;
  for (const auto& t : ins) need = need || t.grad_path();
  if (!need) return;
  tp->record(tag, std::vector<TensorT<T>>(ins), out, std::move(pull));
}

// Broadcast plan for same-rank binary ops: per-dimension strides, zero along
// broadcast dimensions. Only size-1 axes may broadcast.
struct BcastPlan {
  Shape out;
  std::vector<std::size_t> astr, bstr;
  bool identical = false;
};

inline BcastPlan make_bcast_plan(const Shape& a, const Shape& b) {
  if (a.size() != b.size())
    throw ShapeError("binary op rank mismatch: " + shape_str(a) + " vs " + shape_str(b));
  BcastPlan p;
  p.out.resize(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (a[d] == b[d])
      p.out[d] = a[d];
    else if (a[d] == 1)
      p.out[d] = b[d];
    else if (b[d] == 1)
      p.out[d] = a[d];
    else
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
  }
  p.identical = (a == b);
  auto as = row_major_strides(a), bs = row_major_strides(b);
  p.astr.resize(a.size());
  p.bstr.resize(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    p.astr[d] = (a[d] == 1 && p.out[d] != 1) ? 0 : as[d];
    p.bstr[d] = (b[d] == 1 && p.out[d] != 1) ? 0 : bs[d];
  }
  return p;
}

// Calls f(out_linear, a_offset, b_offset) for every output element in
// row-major order.
template <class F>
inline void bcast_for_each(const BcastPlan& p, F&& f) {
  const int nd = static_cast<int>(p.out.size());
  if (nd == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<int> idx(nd, 0);
  std::size_t ao = 0, bo = 0;
  const std::size_t n = shape_numel(p.out);
  for (std::size_t i = 0;;) {
    f(i, ao, bo);
    if (++i == n) break;
    int d = nd - 1;
    for (;;) {
      ++idx[d];
      ao += p.astr[d];
      bo += p.bstr[d];
      if (idx[d] < p.out[d]) break;
      ao -= p.astr[d] * static_cast<std::size_t>(p.out[d]);
      bo -= p.bstr[d] * static_cast<std::size_t>(p.out[d]);
      idx[d] = 0;
      --d;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (same rank; size-1 axes broadcast)
// ---------------------------------------------------------------------------

enum class BinOp { Add, Sub, Mul, Div };

template <class T>
TensorT<T> binary_op(BinOp op, const TensorT<T>& a, const TensorT<T>& b) {
  auto plan = detail::make_bcast_plan(a.shape(), b.shape());
  TensorT<T> out(plan.out);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  if (plan.identical) {
    const std::size_t n = out.numel();
    switch (op) {
      case BinOp::Add: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
      case BinOp::Sub: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
      case BinOp::Mul: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
      case BinOp::Div: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i]; break;
    }
  } else {
    switch (op) {
      case BinOp::Add:
        detail::bcast_for_each(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) { po[i] = pa[ao] + pb[bo]; });
        break;
      case BinOp::Sub:
        detail::bcast_for_each(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) { po[i] = pa[ao] - pb[bo]; });
        break;
      case BinOp::Mul:
        detail::bcast_for_each(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) { po[i] = pa[ao] * pb[bo]; });
        break;
      case BinOp::Div:
        detail::bcast_for_each(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) { po[i] = pa[ao] / pb[bo]; });
        break;
    }
  }

  const char* tag = op == BinOp::Add ? "add" : op == BinOp::Sub ? "sub" : op == BinOp::Mul ? "mul" : "div";
  detail::maybe_record<T>(tag, {a, b}, out, [op, plan, a, b, out]() mutable {
    const std::vector<T>& g = *out.grad_if();
    const T* pa = a.data();
    const T* pb = b.data();
    const bool ga = a.grad_path(), gb = b.grad_path();
    T* ag = ga ? a.grad().data() : nullptr;
    T* bg = gb ? b.grad().data() : nullptr;
    detail::bcast_for_each(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) {
      switch (op) {
        case BinOp::Add:
          if (ga) ag[ao] += g[i];
          if (gb) bg[bo] += g[i];
          break;
        case BinOp::Sub:
          if (ga) ag[ao] += g[i];
          if (gb) bg[bo] -= g[i];
          break;
        case BinOp::Mul:
          if (ga) ag[ao] += g[i] * pb[bo];
          if (gb) bg[bo] += g[i] * pa[ao];
          break;
        case BinOp::Div:
          if (ga) ag[ao] += g[i] / pb[bo];
          if (gb) bg[bo] -= g[i] * pa[ao] / (pb[bo] * pb[bo]);
          break;
      }
    });
  });
  return out;
}

template <class T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) { return binary_op(BinOp::Add, a, b); }
template <class T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) { return binary_op(BinOp::Sub, a, b); }
template <class T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) { return binary_op(BinOp::Mul, a, b); }
template <class T> TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) { return binary_op(BinOp::Div, a, b); }

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> scale(const TensorT<T>& x, T s) {
  TensorT<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = px[i] * s;
  detail::maybe_record<T>("scale", {x}, out, [x, out, s]() mutable {
    const std::vector<T>& g = *out.grad_if();
    T* xg = x.grad().data();
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * s;
  });
  return out;
}

template <class T>
TensorT<T> add_scalar(const TensorT<T>& x, T s) {
  TensorT<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = px[i] + s;
  detail::maybe_record<T>("add_scalar", {x}, out, [x, out]() mutable {
    const std::vector<T>& g = *out.grad_if();
    T* xg = x.grad().data();
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
  });
  return out;
}

template <class T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope) {
  TensorT<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = px[i] > T(0) ? px[i] : slope * px[i];
  detail::maybe_record<T>("leaky_relu", {x}, out, [x, out, slope]() mutable {
    const std::vector<T>& g = *out.grad_if();
    const T* px = x.data();
    T* xg = x.grad().data();
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * (px[i] > T(0) ? T(1) : slope);
  });
  return out;
}

template <class T>
TensorT<T> square(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = px[i] * px[i];
  detail::maybe_record<T>("square", {x}, out, [x, out]() mutable {
    const std::vector<T>& g = *out.grad_if();
    const T* px = x.data();
    T* xg = x.grad().data();
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * T(2) * px[i];
  });
  return out;
}

template <class T>
TensorT<T> sqrt_op(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t i = 0; i < out.numel(); ++i) po[i] = std::sqrt(px[i]);
  detail::maybe_record<T>("sqrt", {x}, out, [x, out]() mutable {
    const std::vector<T>& g = *out.grad_if();
    const T* po = out.data();
    T* xg = x.grad().data();
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] / (T(2) * po[i]);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class ReduceOp { Sum, Mean, Max };

namespace detail {

// Output offset strides over the input iteration space: reduced axes get
// stride 0 so all their elements land on the same output slot.
inline std::vector<std::size_t> reduce_out_strides(const Shape& in, const std::vector<int>& axes,
                                                   bool keepdims, Shape* out_shape) {
  std::vector<bool> reduced(in.size(), false);
  for (int a : axes) {
    if (a < 0 || a >= static_cast<int>(in.size())) throw ShapeError("reduce axis out of range");
    reduced[static_cast<std::size_t>(a)] = true;
  }
  Shape os;
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (!reduced[d])
      os.push_back(in[d]);
    else if (keepdims)
      os.push_back(1);
  }
  if (os.empty()) os.push_back(1);
  Shape padded = in;
  for (std::size_t d = 0; d < in.size(); ++d)
    if (reduced[d]) padded[d] = 1;
  auto pst = row_major_strides(padded);
  std::vector<std::size_t> st(in.size());
  for (std::size_t d = 0; d < in.size(); ++d) st[d] = reduced[d] ? 0 : pst[d];
  *out_shape = os;
  return st;
}

template <class F>
inline void reduce_for_each(const Shape& in, const std::vector<std::size_t>& ost, F&& f) {
  const int nd = static_cast<int>(in.size());
  std::vector<int> idx(nd, 0);
  std::size_t oo = 0;
  const std::size_t n = shape_numel(in);
  for (std::size_t i = 0;;) {
    f(i, oo);
    if (++i == n) break;
    int d = nd - 1;
    for (;;) {
      ++idx[d];
      oo += ost[d];
      if (idx[d] < in[d]) break;
      oo -= ost[d] * static_cast<std::size_t>(in[d]);
      idx[d] = 0;
      --d;
    }
  }
}

}  // namespace detail

template <class T>
TensorT<T> reduce(ReduceOp op, const TensorT<T>& x, std::vector<int> axes, bool keepdims = false) {
  if (axes.empty()) {  // identity: returns a copy
    TensorT<T> out(x.shape(), x.values());
    detail::maybe_record<T>("reduce_identity", {x}, out, [x, out]() mutable {
      const std::vector<T>& g = *out.grad_if();
      T* xg = x.grad().data();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
    });
    return out;
  }
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());

  Shape os;
  auto ost = detail::reduce_out_strides(x.shape(), axes, keepdims, &os);
  TensorT<T> out(os);
  std::size_t group = 1;
  for (int a : axes) group *= static_cast<std::size_t>(x.shape()[static_cast<std::size_t>(a)]);

  const T* px = x.data();
  T* po = out.data();

  if (op == ReduceOp::Max) {
    // First-index tie break: strict greater-than keeps the earliest winner.
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel(), std::size_t(0));
    std::vector<bool> seen(out.numel(), false);
    detail::reduce_for_each(x.shape(), ost, [&](std::size_t i, std::size_t oo) {
      if (!seen[oo] || px[i] > po[oo]) {
        po[oo] = px[i];
        (*argmax)[oo] = i;
        seen[oo] = true;
      }
    });
    detail::maybe_record<T>("reduce_max", {x}, out, [x, out, argmax]() mutable {
      const std::vector<T>& g = *out.grad_if();
      T* xg = x.grad().data();
      for (std::size_t o = 0; o < g.size(); ++o) xg[(*argmax)[o]] += g[o];
    });
    return out;
  }

  detail::reduce_for_each(x.shape(), ost, [&](std::size_t i, std::size_t oo) { po[oo] += px[i]; });
  if (op == ReduceOp::Mean) {
    const T inv = T(1) / static_cast<T>(group);
    for (std::size_t o = 0; o < out.numel(); ++o) po[o] *= inv;
  }
  const T gscale = op == ReduceOp::Mean ? T(1) / static_cast<T>(group) : T(1);
  detail::maybe_record<T>(op == ReduceOp::Mean ? "reduce_mean" : "reduce_sum", {x}, out,
                          [x, out, ost, gscale]() mutable {
                            const std::vector<T>& g = *out.grad_if();
                            T* xg = x.grad().data();
                            detail::reduce_for_each(x.shape(), ost,
                                                    [&](std::size_t i, std::size_t oo) { xg[i] += g[oo] * gscale; });
                          });
  return out;
}

template <class T>
TensorT<T> reduce_sum(const TensorT<T>& x, std::vector<int> axes, bool keepdims = false) {
  return reduce(ReduceOp::Sum, x, std::move(axes), keepdims);
}
template <class T>
TensorT<T> reduce_mean(const TensorT<T>& x, std::vector<int> axes, bool keepdims = false) {
  return reduce(ReduceOp::Mean, x, std::move(axes), keepdims);
}
template <class T>
TensorT<T> reduce_max(const TensorT<T>& x, std::vector<int> axes, bool keepdims = false) {
  return reduce(ReduceOp::Max, x, std::move(axes), keepdims);
}

template <class T>
TensorT<T> mean_all(const TensorT<T>& x) {
  std::vector<int> axes(x.shape().size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reduce(ReduceOp::Mean, x, axes, false);
}
template <class T>
TensorT<T> sum_all(const TensorT<T>& x) {
  std::vector<int> axes(x.shape().size());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reduce(ReduceOp::Sum, x, axes, false);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> reshape(const TensorT<T>& x, Shape ns) {
  if (shape_numel(ns) != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(ns) + " changes element count");
  TensorT<T> out(std::move(ns), x.values());
  detail::maybe_record<T>("reshape", {x}, out, [x, out]() mutable {
    const std::vector<T>& g = *out.grad_if();
    T* xg = x.grad().data();
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
  });
  return out;
}

template <class T>
TensorT<T> slice(const TensorT<T>& x, int axis, int start, int len) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw ShapeError("slice axis out of range");
  if (start < 0 || len <= 0 || start + len > s[static_cast<std::size_t>(axis)])
    throw ShapeError("slice range out of bounds");
  Shape os = s;
  os[static_cast<std::size_t>(axis)] = len;

  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(d)]);
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < s.size(); ++d) inner *= static_cast<std::size_t>(s[d]);
  const std::size_t ax = static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]);

  TensorT<T> out(os);
  const T* px = x.data();
  T* po = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(po + o * static_cast<std::size_t>(len) * inner,
                px + (o * ax + static_cast<std::size_t>(start)) * inner,
                static_cast<std::size_t>(len) * inner * sizeof(T));

  detail::maybe_record<T>("slice", {x}, out, [x, out, outer, inner, ax, start, len]() mutable {
    const std::vector<T>& g = *out.grad_if();
    T* xg = x.grad().data();
    for (std::size_t o = 0; o < outer; ++o) {
      const T* gs = g.data() + o * static_cast<std::size_t>(len) * inner;
      T* xs = xg + (o * ax + static_cast<std::size_t>(start)) * inner;
      for (std::size_t i = 0; i < static_cast<std::size_t>(len) * inner; ++i) xs[i] += gs[i];
    }
  });
  return out;
}

template <class T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = xs[0].shape();
  if (axis < 0 || axis >= static_cast<int>(s0.size())) throw ShapeError("concat axis out of range");
  int total = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != s0.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (static_cast<int>(d) != axis && s[d] != s0[d]) throw ShapeError("concat shape mismatch off-axis");
    total += s[static_cast<std::size_t>(axis)];
  }
  Shape os = s0;
  os[static_cast<std::size_t>(axis)] = total;

  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(s0[static_cast<std::size_t>(d)]);
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < s0.size(); ++d)
    inner *= static_cast<std::size_t>(s0[d]);

  TensorT<T> out(os);
  T* po = out.data();
  const std::size_t ostr = static_cast<std::size_t>(total) * inner;
  std::size_t off = 0;
  for (const auto& x : xs) {
    const std::size_t ax = static_cast<std::size_t>(x.shape()[static_cast<std::size_t>(axis)]);
    const T* px = x.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(po + o * ostr + off * inner, px + o * ax * inner, ax * inner * sizeof(T));
    off += ax;
  }

  auto* tp = TapeT<T>::active();
  bool need = false;
  for (const auto& x : xs) need = need || x.grad_path();
  if (tp && need) {
    std::vector<TensorT<T>> ins = xs;
    TensorT<T> outc = out;
    tp->record("concat", ins, out, [ins, outc, outer, inner, total, axis]() mutable {
      const std::vector<T>& g = *outc.grad_if();
      const std::size_t ostr = static_cast<std::size_t>(total) * inner;
      std::size_t off = 0;
      for (auto& x : ins) {
        const std::size_t ax = static_cast<std::size_t>(x.shape()[static_cast<std::size_t>(axis)]);
        if (x.grad_path()) {
          T* xg = x.grad().data();
          for (std::size_t o = 0; o < outer; ++o) {
            const T* gs = g.data() + o * ostr + off * inner;
            T* xs = xg + o * ax * inner;
            for (std::size_t i = 0; i < ax * inner; ++i) xs[i] += gs[i];
          }
        }
        off += ax;
      }
    });
  }
  return out;
}

// Broadcast a [B, C] tensor to [B, C, H, W] (each value repeated over space).
template <class T>
TensorT<T> spatial_broadcast(const TensorT<T>& z, int h, int w) {
  if (z.ndim() != 2) throw ShapeError("spatial_broadcast expects [B,C]");
  const int b = z.dim(0), c = z.dim(1);
  TensorT<T> out(Shape{b, c, h, w});
  const T* pz = z.data();
  T* po = out.data();
  const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (std::size_t i = 0; i < static_cast<std::size_t>(b) * c; ++i)
    for (std::size_t j = 0; j < hw; ++j) po[i * hw + j] = pz[i];
  detail::maybe_record<T>("spatial_broadcast", {z}, out, [z, out, hw]() mutable {
    const std::vector<T>& g = *out.grad_if();
    T* zg = z.grad().data();
    for (std::size_t i = 0; i < z.numel(); ++i) {
      T acc = T(0);
      for (std::size_t j = 0; j < hw; ++j) acc += g[i * hw + j];
      zg[i] += acc;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul expects 2-D operands");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  TensorT<T> out(Shape{m, n});
  detail::ConstMatMap<T> A(a.data(), m, k), B(b.data(), k, n);
  detail::MatMap<T> C(out.data(), m, n);
  C.noalias() = A * B;
  detail::maybe_record<T>("matmul", {a, b}, out, [a, b, out, m, k, n]() mutable {
    detail::ConstMatMap<T> G(out.grad_if()->data(), m, n);
    detail::ConstMatMap<T> A(a.data(), m, k), B(b.data(), k, n);
    if (a.grad_path()) {
      detail::MatMap<T> GA(a.grad().data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (b.grad_path()) {
      detail::MatMap<T> GB(b.grad().data(), k, n);
      GB.noalias() += A.transpose() * G;
    }
  });
  return out;
}

// y = x * W^T + bias with x:[B,n], W:[m,n], bias:[m] (bias optional).
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias) {
  if (x.ndim() != 2 || w.ndim() != 2) throw ShapeError("linear expects 2-D x and W");
  const int b = x.dim(0), n = x.dim(1), m = w.dim(0);
  if (w.dim(1) != n)
    throw ShapeError("linear weight shape " + shape_str(w.shape()) + " does not accept input " +
                     shape_str(x.shape()));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != m))
    throw ShapeError("linear bias must be [m]");
  TensorT<T> out(Shape{b, m});
  detail::ConstMatMap<T> X(x.data(), b, n), W(w.data(), m, n);
  detail::MatMap<T> Y(out.data(), b, m);
  Y.noalias() = X * W.transpose();
  if (bias.defined()) {
    const T* pb = bias.data();
    T* po = out.data();
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < m; ++j) po[static_cast<std::size_t>(i) * m + j] += pb[j];
  }
  auto pull = [x, w, bias, out, b, n, m]() mutable {
    detail::ConstMatMap<T> G(out.grad_if()->data(), b, m);
    detail::ConstMatMap<T> X(x.data(), b, n), W(w.data(), m, n);
    if (x.grad_path()) {
      detail::MatMap<T> GX(x.grad().data(), b, n);
      GX.noalias() += G * W;
    }
    if (w.grad_path()) {
      detail::MatMap<T> GW(w.grad().data(), m, n);
      GW.noalias() += G.transpose() * X;
    }
    if (bias.defined() && bias.grad_path()) {
      T* gb = bias.grad().data();
      const T* pg = out.grad_if()->data();
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < m; ++j) gb[j] += pg[static_cast<std::size_t>(i) * m + j];
    }
  };
  if (bias.defined())
    detail::maybe_record<T>("linear", {x, w, bias}, out, pull);
  else
    detail::maybe_record<T>("linear", {x, w}, out, pull);
  return out;
}

}  // namespace dyad
