#pragma once

// Convolution (cross-correlation convention), pooling and padding ops.
// conv2d/conv3d lower to im2col + GEMM; backward recomputes the column
// buffer instead of keeping it alive on the tape.

#include "dyad/ops.hpp"

namespace dyad {

namespace detail {

inline int conv_out_extent(int in, int pad, int k, int stride, const char* axis) {
  const int span = in + 2 * pad - k;
  if (span < 0) throw ShapeError(std::string("kernel larger than padded input along ") + axis);
  if (span % stride != 0)
    throw ShapeError(std::string("non-integral convolution output size along ") + axis);
  return span / stride + 1;
}

template <class T>
void zero_pad_copy_2d(const T* x, int c, int h, int w, int p, T* xp) {
  const int hp = h + 2 * p, wp = w + 2 * p;
  std::fill(xp, xp + static_cast<std::size_t>(c) * hp * wp, T(0));
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < h; ++i)
      std::memcpy(xp + (static_cast<std::size_t>(ci) * hp + i + p) * wp + p,
                  x + (static_cast<std::size_t>(ci) * h + i) * w, sizeof(T) * w);
}

template <class T>
void im2col_2d(const T* xp, int cin, int hp, int wp, int kh, int kw, int s, int ho, int wo, T* col) {
  const std::size_t pcnt = static_cast<std::size_t>(ho) * wo;
  std::size_t r = 0;
  for (int ci = 0; ci < cin; ++ci)
    for (int di = 0; di < kh; ++di)
      for (int dj = 0; dj < kw; ++dj, ++r) {
        T* dst = col + r * pcnt;
        for (int oi = 0; oi < ho; ++oi) {
          const T* src = xp + (static_cast<std::size_t>(ci) * hp + oi * s + di) * wp + dj;
          if (s == 1) {
            std::memcpy(dst, src, sizeof(T) * wo);
            dst += wo;
          } else {
            for (int oj = 0; oj < wo; ++oj) *dst++ = src[oj * s];
          }
        }
      }
}

template <class T>
void col2im_2d(const T* col, int cin, int hp, int wp, int kh, int kw, int s, int ho, int wo, T* dxp) {
  const std::size_t pcnt = static_cast<std::size_t>(ho) * wo;
  std::size_t r = 0;
  for (int ci = 0; ci < cin; ++ci)
    for (int di = 0; di < kh; ++di)
      for (int dj = 0; dj < kw; ++dj, ++r) {
        const T* src = col + r * pcnt;
        for (int oi = 0; oi < ho; ++oi) {
          T* dst = dxp + (static_cast<std::size_t>(ci) * hp + oi * s + di) * wp + dj;
          for (int oj = 0; oj < wo; ++oj) dst[oj * s] += src[oj];
        }
      }
}

template <class T>
void zero_pad_copy_3d(const T* x, int c, int t, int h, int w, int pt, int ph, int pw, T* xp) {
  const int tp = t + 2 * pt, hp = h + 2 * ph, wp = w + 2 * pw;
  std::fill(xp, xp + static_cast<std::size_t>(c) * tp * hp * wp, T(0));
  for (int ci = 0; ci < c; ++ci)
    for (int ti = 0; ti < t; ++ti)
      for (int i = 0; i < h; ++i)
        std::memcpy(xp + ((static_cast<std::size_t>(ci) * tp + ti + pt) * hp + i + ph) * wp + pw,
                    x + ((static_cast<std::size_t>(ci) * t + ti) * h + i) * w, sizeof(T) * w);
}

template <class T>
void im2col_3d(const T* xp, int cin, int tp, int hp, int wp, int kt, int kh, int kw, int st, int sh,
               int sw, int to, int ho, int wo, T* col) {
  const std::size_t pcnt = static_cast<std::size_t>(to) * ho * wo;
  std::size_t r = 0;
  for (int ci = 0; ci < cin; ++ci)
    for (int dt = 0; dt < kt; ++dt)
      for (int di = 0; di < kh; ++di)
        for (int dj = 0; dj < kw; ++dj, ++r) {
          T* dst = col + r * pcnt;
          for (int ot = 0; ot < to; ++ot)
            for (int oi = 0; oi < ho; ++oi) {
              const T* src =
                  xp + ((static_cast<std::size_t>(ci) * tp + ot * st + dt) * hp + oi * sh + di) * wp + dj;
              if (sw == 1) {
                std::memcpy(dst, src, sizeof(T) * wo);
                dst += wo;
              } else {
                for (int oj = 0; oj < wo; ++oj) *dst++ = src[oj * sw];
              }
            }
        }
}

template <class T>
void col2im_3d(const T* col, int cin, int tp, int hp, int wp, int kt, int kh, int kw, int st, int sh,
               int sw, int to, int ho, int wo, T* dxp) {
  const std::size_t pcnt = static_cast<std::size_t>(to) * ho * wo;
  std::size_t r = 0;
  for (int ci = 0; ci < cin; ++ci)
    for (int dt = 0; dt < kt; ++dt)
      for (int di = 0; di < kh; ++di)
        for (int dj = 0; dj < kw; ++dj, ++r) {
          const T* src = col + r * pcnt;
          for (int ot = 0; ot < to; ++ot)
            for (int oi = 0; oi < ho; ++oi) {
              T* dst =
                  dxp + ((static_cast<std::size_t>(ci) * tp + ot * st + dt) * hp + oi * sh + di) * wp + dj;
              for (int oj = 0; oj < wo; ++oj) dst[oj * sw] += *src++;
            }
        }
}

}  // namespace detail

template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& kernel, const TensorT<T>& bias, int stride,
                  int pad) {
  if (x.ndim() != 4 || kernel.ndim() != 4) throw ShapeError("conv2d expects x[B,C,H,W], k[O,C,kh,kw]");
  const int b = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) throw ShapeError("conv2d kernel channel mismatch");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout)) throw ShapeError("conv2d bias must be [Cout]");
  const int ho = detail::conv_out_extent(h, pad, kh, stride, "H");
  const int wo = detail::conv_out_extent(w, pad, kw, stride, "W");
  const int hp = h + 2 * pad, wp = w + 2 * pad;
  const std::size_t rrows = static_cast<std::size_t>(cin) * kh * kw;
  const std::size_t pcnt = static_cast<std::size_t>(ho) * wo;

  TensorT<T> out(Shape{b, cout, ho, wo});
  std::vector<T> xp(static_cast<std::size_t>(cin) * hp * wp);
  std::vector<T> col(rrows * pcnt);
  detail::ConstMatMap<T> K(kernel.data(), cout, static_cast<int>(rrows));
  const std::size_t xs = static_cast<std::size_t>(cin) * h * w;
  const std::size_t os = static_cast<std::size_t>(cout) * pcnt;
  for (int bi = 0; bi < b; ++bi) {
    const T* xsrc;
    if (pad > 0) {
      detail::zero_pad_copy_2d(x.data() + bi * xs, cin, h, w, pad, xp.data());
      xsrc = xp.data();
    } else {
      xsrc = x.data() + bi * xs;
    }
    detail::im2col_2d(xsrc, cin, hp, wp, kh, kw, stride, ho, wo, col.data());
    detail::ConstMatMap<T> C(col.data(), static_cast<int>(rrows), static_cast<int>(pcnt));
    detail::MatMap<T> O(out.data() + bi * os, cout, static_cast<int>(pcnt));
    O.noalias() = K * C;
    if (bias.defined()) {
      const T* pb = bias.data();
      T* po = out.data() + bi * os;
      for (int co = 0; co < cout; ++co)
        for (std::size_t pidx = 0; pidx < pcnt; ++pidx) po[co * pcnt + pidx] += pb[co];
    }
  }

  auto pull = [x, kernel, bias, out, b, cin, h, w, cout, kh, kw, stride, pad, ho, wo, hp, wp, rrows,
               pcnt]() mutable {
    std::vector<T> xp(static_cast<std::size_t>(cin) * hp * wp);
    std::vector<T> col(rrows * pcnt);
    std::vector<T> dxp;
    const std::size_t xs = static_cast<std::size_t>(cin) * h * w;
    const std::size_t os = static_cast<std::size_t>(cout) * pcnt;
    const T* g = out.grad_if()->data();
    detail::ConstMatMap<T> K(kernel.data(), cout, static_cast<int>(rrows));
    const bool gx = x.grad_path(), gk = kernel.grad_path();
    const bool gb = bias.defined() && bias.grad_path();
    if (gx) dxp.resize(static_cast<std::size_t>(cin) * hp * wp);
    for (int bi = 0; bi < b; ++bi) {
      detail::ConstMatMap<T> G(g + bi * os, cout, static_cast<int>(pcnt));
      if (gk) {
        const T* xsrc;
        if (pad > 0) {
          detail::zero_pad_copy_2d(x.data() + bi * xs, cin, h, w, pad, xp.data());
          xsrc = xp.data();
        } else {
          xsrc = x.data() + bi * xs;
        }
        detail::im2col_2d(xsrc, cin, hp, wp, kh, kw, stride, ho, wo, col.data());
        detail::ConstMatMap<T> C(col.data(), static_cast<int>(rrows), static_cast<int>(pcnt));
        detail::MatMap<T> GK(kernel.grad().data(), cout, static_cast<int>(rrows));
        GK.noalias() += G * C.transpose();
      }
      if (gb) {
        T* bg = bias.grad().data();
        for (int co = 0; co < cout; ++co) {
          T acc = T(0);
          const T* row = g + bi * os + co * pcnt;
          for (std::size_t pidx = 0; pidx < pcnt; ++pidx) acc += row[pidx];
          bg[co] += acc;
        }
      }
      if (gx) {
        detail::MatMap<T> DC(col.data(), static_cast<int>(rrows), static_cast<int>(pcnt));
        DC.noalias() = K.transpose() * G;
        std::fill(dxp.begin(), dxp.end(), T(0));
        detail::col2im_2d(col.data(), cin, hp, wp, kh, kw, stride, ho, wo, dxp.data());
        T* xg = x.grad().data() + bi * xs;
        for (int ci = 0; ci < cin; ++ci)
          for (int i = 0; i < h; ++i) {
            const T* src = dxp.data() + (static_cast<std::size_t>(ci) * hp + i + pad) * wp + pad;
            T* dst = xg + (static_cast<std::size_t>(ci) * h + i) * w;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
          }
      }
    }
  };
  if (bias.defined())
    detail::maybe_record<T>("conv2d", {x, kernel, bias}, out, pull);
  else
    detail::maybe_record<T>("conv2d", {x, kernel}, out, pull);
  return out;
}

template <class T>
TensorT<T> conv3d(const TensorT<T>& x, const TensorT<T>& kernel, const TensorT<T>& bias,
                  std::array<int, 3> stride, std::array<int, 3> pad) {
  if (x.ndim() != 5 || kernel.ndim() != 5)
    throw ShapeError("conv3d expects x[B,C,T,H,W], k[O,C,kt,kh,kw]");
  const int b = x.dim(0), cin = x.dim(1), t = x.dim(2), h = x.dim(3), w = x.dim(4);
  const int cout = kernel.dim(0), kt = kernel.dim(2), kh = kernel.dim(3), kw = kernel.dim(4);
  if (kernel.dim(1) != cin) throw ShapeError("conv3d kernel channel mismatch");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout)) throw ShapeError("conv3d bias must be [Cout]");
  const int to = detail::conv_out_extent(t, pad[0], kt, stride[0], "T");
  const int ho = detail::conv_out_extent(h, pad[1], kh, stride[1], "H");
  const int wo = detail::conv_out_extent(w, pad[2], kw, stride[2], "W");
  const int tp = t + 2 * pad[0], hp = h + 2 * pad[1], wp = w + 2 * pad[2];
  const std::size_t rrows = static_cast<std::size_t>(cin) * kt * kh * kw;
  const std::size_t pcnt = static_cast<std::size_t>(to) * ho * wo;

  TensorT<T> out(Shape{b, cout, to, ho, wo});
  std::vector<T> xp(static_cast<std::size_t>(cin) * tp * hp * wp);
  std::vector<T> col(rrows * pcnt);
  detail::ConstMatMap<T> K(kernel.data(), cout, static_cast<int>(rrows));
  const std::size_t xs = static_cast<std::size_t>(cin) * t * h * w;
  const std::size_t os = static_cast<std::size_t>(cout) * pcnt;
  const bool padded = pad[0] > 0 || pad[1] > 0 || pad[2] > 0;
  for (int bi = 0; bi < b; ++bi) {
    const T* xsrc;
    if (padded) {
      detail::zero_pad_copy_3d(x.data() + bi * xs, cin, t, h, w, pad[0], pad[1], pad[2], xp.data());
      xsrc = xp.data();
    } else {
      xsrc = x.data() + bi * xs;
    }
    detail::im2col_3d(xsrc, cin, tp, hp, wp, kt, kh, kw, stride[0], stride[1], stride[2], to, ho, wo,
                      col.data());
    detail::ConstMatMap<T> C(col.data(), static_cast<int>(rrows), static_cast<int>(pcnt));
    detail::MatMap<T> O(out.data() + bi * os, cout, static_cast<int>(pcnt));
    O.noalias() = K * C;
    if (bias.defined()) {
      const T* pb = bias.data();
      T* po = out.data() + bi * os;
      for (int co = 0; co < cout; ++co)
        for (std::size_t pidx = 0; pidx < pcnt; ++pidx) po[co * pcnt + pidx] += pb[co];
    }
  }

  auto pull = [x, kernel, bias, out, b, cin, t, h, w, cout, kt, kh, kw, stride, pad, to, ho, wo, tp,
               hp, wp, rrows, pcnt, padded]() mutable {
    std::vector<T> xp(static_cast<std::size_t>(cin) * tp * hp * wp);
    std::vector<T> col(rrows * pcnt);
    std::vector<T> dxp;
    const std::size_t xs = static_cast<std::size_t>(cin) * t * h * w;
    const std::size_t os = static_cast<std::size_t>(cout) * pcnt;
    const T* g = out.grad_if()->data();
    detail::ConstMatMap<T> K(kernel.data(), cout, static_cast<int>(rrows));
    const bool gx = x.grad_path(), gk = kernel.grad_path();
    const bool gb = bias.defined() && bias.grad_path();
    if (gx) dxp.resize(static_cast<std::size_t>(cin) * tp * hp * wp);
    for (int bi = 0; bi < b; ++bi) {
      detail::ConstMatMap<T> G(g + bi * os, cout, static_cast<int>(pcnt));
      if (gk) {
        const T* xsrc;
        if (padded) {
          detail::zero_pad_copy_3d(x.data() + bi * xs, cin, t, h, w, pad[0], pad[1], pad[2], xp.data());
          xsrc = xp.data();
        } else {
          xsrc = x.data() + bi * xs;
        }
        detail::im2col_3d(xsrc, cin, tp, hp, wp, kt, kh, kw, stride[0], stride[1], stride[2], to, ho,
                          wo, col.data());
        detail::ConstMatMap<T> C(col.data(), static_cast<int>(rrows), static_cast<int>(pcnt));
        detail::MatMap<T> GK(kernel.grad().data(), cout, static_cast<int>(rrows));
        GK.noalias() += G * C.transpose();
      }
      if (gb) {
        T* bg = bias.grad().data();
        for (int co = 0; co < cout; ++co) {
          T acc = T(0);
          const T* row = g + bi * os + co * pcnt;
          for (std::size_t pidx = 0; pidx < pcnt; ++pidx) acc += row[pidx];
          bg[co] += acc;
        }
      }
      if (gx) {
        detail::MatMap<T> DC(col.data(), static_cast<int>(rrows), static_cast<int>(pcnt));
        DC.noalias() = K.transpose() * G;
        std::fill(dxp.begin(), dxp.end(), T(0));
        detail::col2im_3d(col.data(), cin, tp, hp, wp, kt, kh, kw, stride[0], stride[1], stride[2],
                          to, ho, wo, dxp.data());
        T* xg = x.grad().data() + bi * xs;
        for (int ci = 0; ci < cin; ++ci)
          for (int ti = 0; ti < t; ++ti)
            for (int i = 0; i < h; ++i) {
              const T* src = dxp.data() +
                             ((static_cast<std::size_t>(ci) * tp + ti + pad[0]) * hp + i + pad[1]) * wp +
                             pad[2];
              T* dst = xg + ((static_cast<std::size_t>(ci) * t + ti) * h + i) * w;
              for (int j = 0; j < w; ++j) dst[j] += src[j];
            }
      }
    }
  };
  if (bias.defined())
    detail::maybe_record<T>("conv3d", {x, kernel, bias}, out, pull);
  else
    detail::maybe_record<T>("conv3d", {x, kernel}, out, pull);
  return out;
}

// Max pooling over the trailing len(window) axes. Every pooled axis must be
// divisible by its window; gradients route to the first maximum in row-major
// window order.
template <class T>
TensorT<T> max_pool(const TensorT<T>& x, std::vector<int> window) {
  const int nw = static_cast<int>(window.size());
  if (nw < 1 || nw > 3) throw ShapeError("max_pool supports 1-3 pooled axes");
  if (x.ndim() < nw + 1) throw ShapeError("max_pool input rank too small for window");
  const Shape& s = x.shape();
  const int off = x.ndim() - nw;
  Shape os = s;
  for (int i = 0; i < nw; ++i) {
    const int ext = s[static_cast<std::size_t>(off + i)], wv = window[static_cast<std::size_t>(i)];
    if (wv < 1) throw ShapeError("max_pool window must be >= 1");
    if (ext % wv != 0)
      throw ShapeError("max_pool axis extent " + std::to_string(ext) + " not divisible by window " +
                       std::to_string(wv));
    os[static_cast<std::size_t>(off + i)] = ext / wv;
  }

  // Normalize to a 3-axis view [lead, D1, D2, D3] with unit windows in front.
  std::array<int, 3> d{1, 1, 1}, wnd{1, 1, 1};
  for (int i = 0; i < nw; ++i) {
    d[static_cast<std::size_t>(3 - nw + i)] = s[static_cast<std::size_t>(off + i)];
    wnd[static_cast<std::size_t>(3 - nw + i)] = window[static_cast<std::size_t>(i)];
  }
  std::size_t lead = 1;
  for (int i = 0; i < off; ++i) lead *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);

  TensorT<T> out(os);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const T* px = x.data();
  T* po = out.data();
  const int o1 = d[0] / wnd[0], o2 = d[1] / wnd[1], o3 = d[2] / wnd[2];
  std::size_t oi = 0;
  for (std::size_t l = 0; l < lead; ++l) {
    const std::size_t base = l * static_cast<std::size_t>(d[0]) * d[1] * d[2];
    for (int a = 0; a < o1; ++a)
      for (int bq = 0; bq < o2; ++bq)
        for (int c = 0; c < o3; ++c, ++oi) {
          T best{};
          std::size_t besti = 0;
          bool first = true;
          for (int da = 0; da < wnd[0]; ++da)
            for (int db = 0; db < wnd[1]; ++db)
              for (int dc = 0; dc < wnd[2]; ++dc) {
                const std::size_t idx =
                    base + ((static_cast<std::size_t>(a * wnd[0] + da) * d[1]) +
                            static_cast<std::size_t>(bq * wnd[1] + db)) *
                               d[2] +
                    static_cast<std::size_t>(c * wnd[2] + dc);
                if (first || px[idx] > best) {
                  best = px[idx];
                  besti = idx;
                  first = false;
                }
              }
          po[oi] = best;
          (*argmax)[oi] = besti;
        }
  }

  detail::maybe_record<T>("max_pool", {x}, out, [x, out, argmax]() mutable {
    const std::vector<T>& g = *out.grad_if();
    T* xg = x.grad().data();
    for (std::size_t o = 0; o < g.size(); ++o) xg[(*argmax)[o]] += g[o];
  });
  return out;
}

// Zero padding of the two trailing spatial axes, recorded (interior gradient
// passes through, border gradient is dropped).
template <class T>
TensorT<T> zero_pad2d(const TensorT<T>& x, int p) {
  if (x.ndim() != 4) throw ShapeError("zero_pad2d expects [B,C,H,W]");
  if (p < 0) throw ShapeError("negative padding");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int hp = h + 2 * p, wp = w + 2 * p;
  TensorT<T> out(Shape{b, c, hp, wp});
  const std::size_t bc = static_cast<std::size_t>(b) * c;
  for (std::size_t i = 0; i < bc; ++i)
    detail::zero_pad_copy_2d(x.data() + i * h * w, 1, h, w, p, out.data() + i * hp * wp);
  detail::maybe_record<T>("zero_pad2d", {x}, out, [x, out, bc, h, w, hp, wp, p]() mutable {
    const T* g = out.grad_if()->data();
    T* xg = x.grad().data();
    for (std::size_t i = 0; i < bc; ++i)
      for (int r = 0; r < h; ++r) {
        const T* src = g + i * hp * wp + (static_cast<std::size_t>(r + p)) * wp + p;
        T* dst = xg + i * h * w + static_cast<std::size_t>(r) * w;
        for (int cc = 0; cc < w; ++cc) dst[cc] += src[cc];
      }
  });
  return out;
}

// Assembles a one-pixel adaptive border around x. border is [B, C*(2H+2W+4)]
// per channel laid out as: top row left->right (W), bottom row left->right
// (W), left column top->bottom (H), right column top->bottom (H), then
// corners TL, TR, BL, BR.
template <class T>
TensorT<T> border_pad2d(const TensorT<T>& x, const TensorT<T>& border) {
  if (x.ndim() != 4) throw ShapeError("border_pad2d expects x[B,C,H,W]");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int per = 2 * h + 2 * w + 4;
  if (border.ndim() != 2 || border.dim(0) != b || border.dim(1) != c * per)
    throw ShapeError("border tensor must be [B, C*(2H+2W+4)], got " + shape_str(border.shape()));
  const int hp = h + 2, wp = w + 2;
  TensorT<T> out(Shape{b, c, hp, wp});
  const T* px = x.data();
  const T* pb = border.data();
  T* po = out.data();
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci) {
      T* oc = po + (static_cast<std::size_t>(bi) * c + ci) * hp * wp;
      const T* xc = px + (static_cast<std::size_t>(bi) * c + ci) * h * w;
      const T* bc = pb + static_cast<std::size_t>(bi) * c * per + static_cast<std::size_t>(ci) * per;
      for (int i = 0; i < h; ++i) std::memcpy(oc + (i + 1) * static_cast<std::size_t>(wp) + 1, xc + i * static_cast<std::size_t>(w), sizeof(T) * w);
      for (int j = 0; j < w; ++j) oc[1 + j] = bc[j];                          // top
      for (int j = 0; j < w; ++j) oc[(hp - 1) * static_cast<std::size_t>(wp) + 1 + j] = bc[w + j];  // bottom
      for (int i = 0; i < h; ++i) oc[(i + 1) * static_cast<std::size_t>(wp)] = bc[2 * w + i];       // left
      for (int i = 0; i < h; ++i) oc[(i + 1) * static_cast<std::size_t>(wp) + wp - 1] = bc[2 * w + h + i];  // right
      oc[0] = bc[per - 4];                                     // TL
      oc[wp - 1] = bc[per - 3];                                // TR
      oc[(hp - 1) * static_cast<std::size_t>(wp)] = bc[per - 2];          // BL
      oc[(hp - 1) * static_cast<std::size_t>(wp) + wp - 1] = bc[per - 1]; // BR
    }

  detail::maybe_record<T>("border_pad2d", {x, border}, out, [x, border, out, b, c, h, w, hp, wp, per]() mutable {
    const T* g = out.grad_if()->data();
    const bool gx = x.grad_path(), gb = border.grad_path();
    T* xg = gx ? x.grad().data() : nullptr;
    T* bg = gb ? border.grad().data() : nullptr;
    for (int bi = 0; bi < b; ++bi)
      for (int ci = 0; ci < c; ++ci) {
        const T* gc = g + (static_cast<std::size_t>(bi) * c + ci) * hp * wp;
        if (gx) {
          T* xc = xg + (static_cast<std::size_t>(bi) * c + ci) * h * w;
          for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) xc[i * static_cast<std::size_t>(w) + j] += gc[(i + 1) * static_cast<std::size_t>(wp) + 1 + j];
        }
        if (gb) {
          T* bc = bg + static_cast<std::size_t>(bi) * c * per + static_cast<std::size_t>(ci) * per;
          for (int j = 0; j < w; ++j) bc[j] += gc[1 + j];
          for (int j = 0; j < w; ++j) bc[w + j] += gc[(hp - 1) * static_cast<std::size_t>(wp) + 1 + j];
          for (int i = 0; i < h; ++i) bc[2 * w + i] += gc[(i + 1) * static_cast<std::size_t>(wp)];
          for (int i = 0; i < h; ++i) bc[2 * w + h + i] += gc[(i + 1) * static_cast<std::size_t>(wp) + wp - 1];
          bc[per - 4] += gc[0];
          bc[per - 3] += gc[wp - 1];
          bc[per - 2] += gc[(hp - 1) * static_cast<std::size_t>(wp)];
          bc[per - 1] += gc[(hp - 1) * static_cast<std::size_t>(wp) + wp - 1];
        }
      }
  });
  return out;
}

}  // namespace dyad
