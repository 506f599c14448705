#pragma once

#include <algorithm>
#include <cmath>

#include "leffa/tensor.hpp"

// Forward kernels and their explicit adjoints. Everything here is a pure
// function of its inputs; the tape in autodiff.hpp wires these together.

namespace leffa::kernels {

// ---- matmul -----------------------------------------------------------
// 2-d [m,k]x[k,n] or batched 3-d [b,m,k]x[b,k,n].

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() == 2 && b.rank() == 2) {
    const int64_t m = a.dim(0), k = a.dim(1);
    if (b.dim(0) != k)
      throw dim_error("matmul inner dims differ: " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
    const int64_t n = b.dim(1);
    Tensor<T> c({m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    for (int64_t i = 0; i < m; ++i) {
      T* ci = pc + i * n;
      for (int64_t l = 0; l < k; ++l) {
        const T ail = pa[i * k + l];
        const T* bl = pb + l * n;
        for (int64_t j = 0; j < n; ++j) ci[j] += ail * bl[j];
      }
    }
    return c;
  }
  if (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0)) {
    const int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2);
    if (b.dim(1) != k)
      throw dim_error("matmul inner dims differ: " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
    const int64_t n = b.dim(2);
    Tensor<T> c({bs, m, n});
    for (int64_t q = 0; q < bs; ++q) {
      const T* pa = a.data() + q * m * k;
      const T* pb = b.data() + q * k * n;
      T* pc = c.data() + q * m * n;
      for (int64_t i = 0; i < m; ++i) {
        T* ci = pc + i * n;
        for (int64_t l = 0; l < k; ++l) {
          const T ail = pa[i * k + l];
          const T* bl = pb + l * n;
          for (int64_t j = 0; j < n; ++j) ci[j] += ail * bl[j];
        }
      }
    }
    return c;
  }
  throw dim_error("matmul ranks unsupported: " + shape_str(a.shape()) + " x " +
                  shape_str(b.shape()));
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  if (a.rank() == 2) {
    const int64_t m = a.dim(0), n = a.dim(1);
    Tensor<T> t({n, m});
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
    return t;
  }
  if (a.rank() == 3) {
    const int64_t b = a.dim(0), m = a.dim(1), n = a.dim(2);
    Tensor<T> t({b, m, n});
    t = Tensor<T>({b, n, m});
    for (int64_t q = 0; q < b; ++q)
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) t[(q * n + j) * m + i] = a[(q * m + i) * n + j];
    return t;
  }
  throw dim_error("transpose_last2 needs rank 2 or 3, got " + shape_str(a.shape()));
}

// ---- softmax ----------------------------------------------------------

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, T temperature) {
  if (temperature <= T(0)) throw param_error("softmax temperature must be > 0");
  const int64_t n = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / std::max<int64_t>(n, 1);
  Tensor<T> y = x.clone();
  for (int64_t r = 0; r < rows; ++r) {
    T* p = y.data() + r * n;
    T mx = p[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, p[j]);
    T s = T(0);
    for (int64_t j = 0; j < n; ++j) {
      p[j] = std::exp((p[j] - mx) / temperature);
      s += p[j];
    }
    for (int64_t j = 0; j < n; ++j) p[j] /= s;
  }
  return y;
}

// dX_j = y_j/temp * (g_j - sum_k g_k y_k) per row.
template <typename T>
Tensor<T> softmax_lastdim_backward(const Tensor<T>& y, const Tensor<T>& g, T temperature) {
  const int64_t n = y.dim(y.rank() - 1);
  const int64_t rows = y.numel() / std::max<int64_t>(n, 1);
  Tensor<T> dx(y.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const T* py = y.data() + r * n;
    const T* pg = g.data() + r * n;
    T* pd = dx.data() + r * n;
    T dot = T(0);
    for (int64_t j = 0; j < n; ++j) dot += pg[j] * py[j];
    for (int64_t j = 0; j < n; ++j) pd[j] = py[j] * (pg[j] - dot) / temperature;
  }
  return dx;
}

// ---- conv2d (3x3, pad 1) ----------------------------------------------
// im2col layout: colT[ci*9, oh*ow], so the conv is one [co, ci*9] x
// [ci*9, oh*ow] matmul straight into the output's channel-major layout.

template <typename T>
Tensor<T> conv_im2col(const Tensor<T>& x, int64_t stride, int64_t oh, int64_t ow) {
  const int64_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> colT({ci * 9, oh * ow});
  for (int64_t ic = 0; ic < ci; ++ic) {
    const T* px = x.data() + ic * h * w;
    for (int64_t ky = 0; ky < 3; ++ky) {
      for (int64_t kx = 0; kx < 3; ++kx) {
        T* dst = colT.data() + (ic * 9 + ky * 3 + kx) * oh * ow;
        const int64_t offx = kx - 1;
        const int64_t lo = offx < 0 ? (stride - offx - 1) / stride : 0;
        const int64_t hi = std::min(ow, (w - offx + stride - 1) / stride);
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * stride - 1 + ky;
          T* d = dst + oy * ow;
          if (iy < 0 || iy >= h) continue;  // colT starts zeroed
          const T* r = px + iy * w + offx;
          if (stride == 1) {
            for (int64_t ox = lo; ox < hi; ++ox) d[ox] = r[ox];
          } else {
            for (int64_t ox = lo; ox < hi; ++ox) d[ox] = r[ox * stride];
          }
        }
      }
    }
  }
  return colT;
}

template <typename T>
void col2im_acc(const Tensor<T>& colT, int64_t stride, int64_t h, int64_t w, Tensor<T>& dx) {
  const int64_t ci = dx.dim(0);
  const int64_t ohw = colT.dim(1);
  const int64_t oh_val = (h + stride - 1) / stride;
  const int64_t ow_val = ohw / oh_val;
  for (int64_t ic = 0; ic < ci; ++ic) {
    T* pdx = dx.data() + ic * h * w;
    for (int64_t ky = 0; ky < 3; ++ky) {
      for (int64_t kx = 0; kx < 3; ++kx) {
        const T* src = colT.data() + (ic * 9 + ky * 3 + kx) * ohw;
        const int64_t offx = kx - 1;
        const int64_t lo = offx < 0 ? (stride - offx - 1) / stride : 0;
        const int64_t hi = std::min(ow_val, (w - offx + stride - 1) / stride);
        for (int64_t oy = 0; oy < oh_val; ++oy) {
          const int64_t iy = oy * stride - 1 + ky;
          if (iy < 0 || iy >= h) continue;
          const T* s = src + oy * ow_val;
          T* r = pdx + iy * w + offx;
          if (stride == 1) {
            for (int64_t ox = lo; ox < hi; ++ox) r[ox] += s[ox];
          } else {
            for (int64_t ox = lo; ox < hi; ++ox) r[ox * stride] += s[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias,
                 int64_t stride = 1) {
  if (x.rank() != 3 || k.rank() != 4 || k.dim(2) != 3 || k.dim(3) != 3)
    throw dim_error("conv2d expects x[c,h,w], k[oc,ic,3,3]; got " + shape_str(x.shape()) +
                    ", " + shape_str(k.shape()));
  const int64_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t co = k.dim(0);
  if (k.dim(1) != ci)
    throw dim_error("conv2d channel mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                    shape_str(k.shape()));
  if (bias.numel() != co) throw dim_error("conv2d bias size mismatch");
  const int64_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  const Tensor<T> colT = conv_im2col(x, stride, oh, ow);
  Tensor<T> y = matmul(k.reshaped({co, ci * 9}), colT);
  for (int64_t oc = 0; oc < co; ++oc) {
    T* py = y.data() + oc * oh * ow;
    for (int64_t i = 0; i < oh * ow; ++i) py[i] += bias[oc];
  }
  return y.reshaped({co, oh, ow});
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& g,
                     int64_t stride, Tensor<T>& dx, Tensor<T>& dk, Tensor<T>& db) {
  const int64_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t co = k.dim(0);
  const int64_t oh = g.dim(1), ow = g.dim(2);
  dx = Tensor<T>(x.shape());
  db = Tensor<T>({co});
  const Tensor<T> g2 = g.reshaped({co, oh * ow});
  for (int64_t oc = 0; oc < co; ++oc) {
    const T* pg = g2.data() + oc * oh * ow;
    T s = T(0);
    for (int64_t i = 0; i < oh * ow; ++i) s += pg[i];
    db[oc] = s;
  }
  const Tensor<T> colT = conv_im2col(x, stride, oh, ow);
  dk = matmul(g2, transpose_last2(colT)).reshaped(k.shape());
  const Tensor<T> dcolT = matmul(transpose_last2(k.reshaped({co, ci * 9})), g2);
  col2im_acc(dcolT, stride, h, w, dx);
}

// ---- bilinear resize (align-corners) ------------------------------------

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int64_t oh, int64_t ow) {
  if (x.rank() != 3) throw dim_error("bilinear_resize expects [c,h,w], got " + shape_str(x.shape()));
  if (oh < 1 || ow < 1) throw param_error("bilinear_resize target size must be >= 1");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> y({c, oh, ow});
  for (int64_t oy = 0; oy < oh; ++oy) {
    const T sy = (oh > 1 && h > 1) ? T(oy) * T(h - 1) / T(oh - 1) : (h > 1 && oh == 1 ? T(h - 1) / T(2) : T(0));
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(sy)), h - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
    const T fy = sy - T(y0);
    for (int64_t ox = 0; ox < ow; ++ox) {
      const T sx = (ow > 1 && w > 1) ? T(ox) * T(w - 1) / T(ow - 1) : (w > 1 && ow == 1 ? T(w - 1) / T(2) : T(0));
      const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(sx)), w - 1);
      const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
      const T fx = sx - T(x0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* p = x.data() + ch * h * w;
        const T v = (T(1) - fy) * ((T(1) - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
                    fy * ((T(1) - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
        y[(ch * oh + oy) * ow + ox] = v;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Tensor<T>& g, int64_t h, int64_t w) {
  const int64_t c = g.dim(0), oh = g.dim(1), ow = g.dim(2);
  Tensor<T> dx({c, h, w});
  for (int64_t oy = 0; oy < oh; ++oy) {
    const T sy = (oh > 1 && h > 1) ? T(oy) * T(h - 1) / T(oh - 1) : (h > 1 && oh == 1 ? T(h - 1) / T(2) : T(0));
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(sy)), h - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
    const T fy = sy - T(y0);
    for (int64_t ox = 0; ox < ow; ++ox) {
      const T sx = (ow > 1 && w > 1) ? T(ox) * T(w - 1) / T(ow - 1) : (w > 1 && ow == 1 ? T(w - 1) / T(2) : T(0));
      const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(sx)), w - 1);
      const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
      const T fx = sx - T(x0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T gv = g[(ch * oh + oy) * ow + ox];
        T* p = dx.data() + ch * h * w;
        p[y0 * w + x0] += (T(1) - fy) * (T(1) - fx) * gv;
        p[y0 * w + x1] += (T(1) - fy) * fx * gv;
        p[y1 * w + x0] += fy * (T(1) - fx) * gv;
        p[y1 * w + x1] += fy * fx * gv;
      }
    }
  }
  return dx;
}

// ---- grid sample (align-corners, border clamp) ---------------------------

// Normalized coord -> pixel coord. A coordinate that lands within 1e-5
// (relative) of an integer pixel snaps to it, so sampling at the identity
// coordinate map reproduces the image bit-for-bit.
template <typename T>
inline T unnormalize_coord(T c, int64_t n) {
  if (n <= 1) return T(0);
  T p = (c + T(1)) / T(2) * T(n - 1);
  const T r = std::nearbyint(p);
  if (std::abs(p - r) <= T(1e-5) * std::max<T>(T(1), std::abs(r))) p = r;
  return std::min(std::max(p, T(0)), T(n - 1));
}

template <typename T>
Tensor<T> grid_sample(const Tensor<T>& img, const Tensor<T>& flow) {
  if (img.rank() != 3 || flow.rank() != 3 || flow.dim(2) != 2)
    throw dim_error("grid_sample expects img[c,H,W], flow[h,w,2]; got " +
                    shape_str(img.shape()) + ", " + shape_str(flow.shape()));
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int64_t oh = flow.dim(0), ow = flow.dim(1);
  Tensor<T> y({c, oh, ow});
  for (int64_t i = 0; i < oh; ++i) {
    for (int64_t j = 0; j < ow; ++j) {
      const T py = unnormalize_coord(flow[(i * ow + j) * 2 + 0], h);
      const T px = unnormalize_coord(flow[(i * ow + j) * 2 + 1], w);
      int64_t y0 = static_cast<int64_t>(std::floor(py));
      int64_t x0 = static_cast<int64_t>(std::floor(px));
      y0 = std::min(std::max<int64_t>(y0, 0), std::max<int64_t>(h - 2, 0));
      x0 = std::min(std::max<int64_t>(x0, 0), std::max<int64_t>(w - 2, 0));
      const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const T fy = py - T(y0), fx = px - T(x0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T* p = img.data() + ch * h * w;
        y[(ch * oh + i) * ow + j] =
            (T(1) - fy) * ((T(1) - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
            fy * ((T(1) - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
      }
    }
  }
  return y;
}

template <typename T>
void grid_sample_backward(const Tensor<T>& img, const Tensor<T>& flow, const Tensor<T>& g,
                          Tensor<T>& dimg, Tensor<T>& dflow) {
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int64_t oh = flow.dim(0), ow = flow.dim(1);
  dimg = Tensor<T>(img.shape());
  dflow = Tensor<T>(flow.shape());
  for (int64_t i = 0; i < oh; ++i) {
    for (int64_t j = 0; j < ow; ++j) {
      const T cy = flow[(i * ow + j) * 2 + 0];
      const T cx = flow[(i * ow + j) * 2 + 1];
      const T py = unnormalize_coord(cy, h);
      const T px = unnormalize_coord(cx, w);
      // Zero flow-gradient past the border clamp.
      const bool iny = h > 1 && cy > T(-1) && cy < T(1);
      const bool inx = w > 1 && cx > T(-1) && cx < T(1);
      int64_t y0 = static_cast<int64_t>(std::floor(py));
      int64_t x0 = static_cast<int64_t>(std::floor(px));
      y0 = std::min(std::max<int64_t>(y0, 0), std::max<int64_t>(h - 2, 0));
      x0 = std::min(std::max<int64_t>(x0, 0), std::max<int64_t>(w - 2, 0));
      const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const T fy = py - T(y0), fx = px - T(x0);
      T dpy = T(0), dpx = T(0);
      for (int64_t ch = 0; ch < c; ++ch) {
        const T gv = g[(ch * oh + i) * ow + j];
        const T* p = img.data() + ch * h * w;
        T* dp = dimg.data() + ch * h * w;
        dp[y0 * w + x0] += (T(1) - fy) * (T(1) - fx) * gv;
        dp[y0 * w + x1] += (T(1) - fy) * fx * gv;
        dp[y1 * w + x0] += fy * (T(1) - fx) * gv;
        dp[y1 * w + x1] += fy * fx * gv;
        dpy += gv * ((T(1) - fx) * (p[y1 * w + x0] - p[y0 * w + x0]) +
                     fx * (p[y1 * w + x1] - p[y0 * w + x1]));
        dpx += gv * ((T(1) - fy) * (p[y0 * w + x1] - p[y0 * w + x0]) +
                     fy * (p[y1 * w + x1] - p[y1 * w + x0]));
      }
      if (iny) dflow[(i * ow + j) * 2 + 0] = dpy * T(h - 1) / T(2);
      if (inx) dflow[(i * ow + j) * 2 + 1] = dpx * T(w - 1) / T(2);
    }
  }
}

}  // namespace leffa::kernels
