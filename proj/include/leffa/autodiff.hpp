#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "leffa/kernels.hpp"
#include "leffa/tensor.hpp"

// Reverse-mode tape. Each recorded op stores its output value and an adjoint
// closure; backward() walks the record once in reverse and accumulates
// gradients additively across fan-out. One tape per training step.

namespace leffa {

template <typename T>
class Tape {
 public:
  using Adjoint = std::function<void(Tape&, const Tensor<T>&)>;

  int leaf(Tensor<T> v, bool requires_grad = true) {
    return push(std::move(v), requires_grad, {}, nullptr);
  }
  int constant(Tensor<T> v) { return leaf(std::move(v), false); }

  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  size_t size() const { return nodes_.size(); }

  // ---- elementwise ----

  int add(int a, int b) {
    check_same(a, b, "add");
    Tensor<T> y = value(a).clone();
    const Tensor<T>& vb = value(b);
    for (int64_t i = 0; i < y.numel(); ++i) y[i] += vb[i];
    return push(std::move(y), needs(a) || needs(b), {a, b},
                [a, b](Tape& t, const Tensor<T>& g) {
                  t.acc(a, g);
                  t.acc(b, g);
                });
  }

  int sub(int a, int b) {
    check_same(a, b, "sub");
    Tensor<T> y = value(a).clone();
    const Tensor<T>& vb = value(b);
    for (int64_t i = 0; i < y.numel(); ++i) y[i] -= vb[i];
    return push(std::move(y), needs(a) || needs(b), {a, b},
                [a, b](Tape& t, const Tensor<T>& g) {
                  t.acc(a, g);
                  Tensor<T> ng = g.clone();
                  for (int64_t i = 0; i < ng.numel(); ++i) ng[i] = -ng[i];
                  t.acc(b, std::move(ng));
                });
  }

  int mul(int a, int b) {
    check_same(a, b, "mul");
    Tensor<T> y = value(a).clone();
    const Tensor<T>& vb = value(b);
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= vb[i];
    return push(std::move(y), needs(a) || needs(b), {a, b},
                [a, b](Tape& t, const Tensor<T>& g) {
                  if (t.needs(a)) {
                    Tensor<T> ga = g.clone();
                    const Tensor<T>& vb2 = t.value(b);
                    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= vb2[i];
                    t.acc(a, std::move(ga));
                  }
                  if (t.needs(b)) {
                    Tensor<T> gb = g.clone();
                    const Tensor<T>& va = t.value(a);
                    for (int64_t i = 0; i < gb.numel(); ++i) gb[i] *= va[i];
                    t.acc(b, std::move(gb));
                  }
                });
  }

  int scale(int a, T s) {
    Tensor<T> y = value(a).clone();
    for (int64_t i = 0; i < y.numel(); ++i) y[i] *= s;
    return push(std::move(y), needs(a), {a}, [a, s](Tape& t, const Tensor<T>& g) {
      Tensor<T> ga = g.clone();
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] *= s;
      t.acc(a, std::move(ga));
    });
  }

  int relu(int a) {
    Tensor<T> y = value(a).clone();
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::max(y[i], T(0));
    return push(std::move(y), needs(a), {a}, [a](Tape& t, const Tensor<T>& g) {
      Tensor<T> ga = g.clone();
      const Tensor<T>& va = t.value(a);
      for (int64_t i = 0; i < ga.numel(); ++i)
        if (va[i] <= T(0)) ga[i] = T(0);
      t.acc(a, std::move(ga));
    });
  }

  // x[n,d] + b[d], broadcast over rows.
  int add_row_bias(int x, int b) {
    const int64_t n = value(x).dim(0), d = value(x).dim(1);
    if (value(b).numel() != d) throw dim_error("add_row_bias size mismatch");
    Tensor<T> y = value(x).clone();
    const Tensor<T>& vb = value(b);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < d; ++j) y[i * d + j] += vb[j];
    return push(std::move(y), needs(x) || needs(b), {x, b},
                [x, b, n, d](Tape& t, const Tensor<T>& g) {
                  t.acc(x, g);
                  if (t.needs(b)) {
                    Tensor<T> gb({d});
                    for (int64_t i = 0; i < n; ++i)
                      for (int64_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
                    t.acc(b, std::move(gb));
                  }
                });
  }

  // x[c,h,w] + b[c], broadcast over pixels.
  int add_channel_bias(int x, int b) {
    const auto& s = value(x).shape();
    const int64_t c = s[0], hw = s[1] * s[2];
    if (value(b).numel() != c) throw dim_error("add_channel_bias size mismatch");
    Tensor<T> y = value(x).clone();
    const Tensor<T>& vb = value(b);
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < hw; ++i) y[ch * hw + i] += vb[ch];
    return push(std::move(y), needs(x) || needs(b), {x, b},
                [x, b, c, hw](Tape& t, const Tensor<T>& g) {
                  t.acc(x, g);
                  if (t.needs(b)) {
                    Tensor<T> gb({c});
                    for (int64_t ch = 0; ch < c; ++ch)
                      for (int64_t i = 0; i < hw; ++i) gb[ch] += g[ch * hw + i];
                    t.acc(b, std::move(gb));
                  }
                });
  }

  // x[c,h,w] * m[1,h,w], mask broadcast across channels; m is constant.
  int mul_mask(int x, int m) {
    const auto& s = value(x).shape();
    const int64_t c = s[0], hw = s[1] * s[2];
    if (value(m).numel() != hw) throw dim_error("mul_mask mask shape mismatch");
    Tensor<T> y = value(x).clone();
    const Tensor<T>& vm = value(m);
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < hw; ++i) y[ch * hw + i] *= vm[i];
    return push(std::move(y), needs(x), {x, m}, [x, m, c, hw](Tape& t, const Tensor<T>& g) {
      Tensor<T> gx = g.clone();
      const Tensor<T>& vm2 = t.value(m);
      for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < hw; ++i) gx[ch * hw + i] *= vm2[i];
      t.acc(x, std::move(gx));
    });
  }

  // ---- reductions / shape ----

  int sum_all(int a) {
    T s = T(0);
    const Tensor<T>& v = value(a);
    for (int64_t i = 0; i < v.numel(); ++i) s += v[i];
    return push(Tensor<T>::scalar(s), needs(a), {a}, [a](Tape& t, const Tensor<T>& g) {
      t.acc(a, Tensor<T>::full(t.value(a).shape(), g.item()));
    });
  }

  int mean_all(int a) { return scale(sum_all(a), T(1) / T(value(a).numel())); }

  int reshape(int a, std::vector<int64_t> shape) {
    Tensor<T> y = value(a).reshaped(shape);
    return push(std::move(y), needs(a), {a}, [a](Tape& t, const Tensor<T>& g) {
      t.acc(a, g.reshaped(t.value(a).shape()));
    });
  }

  int concat0(int a, int b) {
    const auto& sa = value(a).shape();
    const auto& sb = value(b).shape();
    if (sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1))
      throw dim_error("concat0 trailing dims differ: " + shape_str(sa) + " vs " + shape_str(sb));
    std::vector<int64_t> os = sa;
    os[0] += sb[0];
    Tensor<T> y(os);
    std::copy(value(a).data(), value(a).data() + value(a).numel(), y.data());
    std::copy(value(b).data(), value(b).data() + value(b).numel(), y.data() + value(a).numel());
    const int64_t na = value(a).numel();
    return push(std::move(y), needs(a) || needs(b), {a, b},
                [a, b, na](Tape& t, const Tensor<T>& g) {
                  Tensor<T> ga(t.value(a).shape()), gb(t.value(b).shape());
                  std::copy(g.data(), g.data() + na, ga.data());
                  std::copy(g.data() + na, g.data() + g.numel(), gb.data());
                  t.acc(a, std::move(ga));
                  t.acc(b, std::move(gb));
                });
  }

  int slice0(int a, int64_t start, int64_t len) {
    const auto& s = value(a).shape();
    if (start < 0 || start + len > s[0]) throw dim_error("slice0 out of range");
    int64_t inner = 1;
    for (size_t i = 1; i < s.size(); ++i) inner *= s[i];
    std::vector<int64_t> os = s;
    os[0] = len;
    Tensor<T> y(os);
    std::copy(value(a).data() + start * inner, value(a).data() + (start + len) * inner, y.data());
    return push(std::move(y), needs(a), {a},
                [a, start, inner](Tape& t, const Tensor<T>& g) {
                  Tensor<T> ga(t.value(a).shape());
                  std::copy(g.data(), g.data() + g.numel(), ga.data() + start * inner);
                  t.acc(a, std::move(ga));
                });
  }

  int slice_last(int a, int64_t start, int64_t len) {
    const auto& s = value(a).shape();
    const int64_t n = s.back();
    if (start < 0 || start + len > n) throw dim_error("slice_last out of range");
    const int64_t rows = value(a).numel() / n;
    std::vector<int64_t> os = s;
    os.back() = len;
    Tensor<T> y(os);
    for (int64_t r = 0; r < rows; ++r)
      std::copy(value(a).data() + r * n + start, value(a).data() + r * n + start + len,
                y.data() + r * len);
    return push(std::move(y), needs(a), {a},
                [a, start, len, n, rows](Tape& t, const Tensor<T>& g) {
                  Tensor<T> ga(t.value(a).shape());
                  for (int64_t r = 0; r < rows; ++r)
                    std::copy(g.data() + r * len, g.data() + (r + 1) * len,
                              ga.data() + r * n + start);
                  t.acc(a, std::move(ga));
                });
  }

  // [b,m,n] -> [m,n] arithmetic mean over axis 0.
  int mean_axis0(int a) {
    const auto& s = value(a).shape();
    if (s.size() != 3) throw dim_error("mean_axis0 expects rank 3, got " + shape_str(s));
    const int64_t b = s[0], mn = s[1] * s[2];
    Tensor<T> y({s[1], s[2]});
    for (int64_t q = 0; q < b; ++q)
      for (int64_t i = 0; i < mn; ++i) y[i] += value(a)[q * mn + i];
    for (int64_t i = 0; i < mn; ++i) y[i] /= T(b);
    return push(std::move(y), needs(a), {a}, [a, b, mn](Tape& t, const Tensor<T>& g) {
      Tensor<T> ga(t.value(a).shape());
      for (int64_t q = 0; q < b; ++q)
        for (int64_t i = 0; i < mn; ++i) ga[q * mn + i] = g[i] / T(b);
      t.acc(a, std::move(ga));
    });
  }

  // [n, h*dh] -> [h, n, dh]
  int split_heads(int a, int64_t heads) {
    const auto& s = value(a).shape();
    if (s.size() != 2 || s[1] % heads != 0)
      throw dim_error("split_heads: width not divisible by head count");
    const int64_t n = s[0], dh = s[1] / heads;
    Tensor<T> y({heads, n, dh});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t j = 0; j < dh; ++j)
          y[(h * n + i) * dh + j] = value(a)[i * heads * dh + h * dh + j];
    return push(std::move(y), needs(a), {a}, [a, heads, n, dh](Tape& t, const Tensor<T>& g) {
      Tensor<T> ga({n, heads * dh});
      for (int64_t i = 0; i < n; ++i)
        for (int64_t h = 0; h < heads; ++h)
          for (int64_t j = 0; j < dh; ++j)
            ga[i * heads * dh + h * dh + j] = g[(h * n + i) * dh + j];
      t.acc(a, std::move(ga));
    });
  }

  // [h, n, dh] -> [n, h*dh]
  int merge_heads(int a) {
    const auto& s = value(a).shape();
    if (s.size() != 3) throw dim_error("merge_heads expects rank 3");
    const int64_t heads = s[0], n = s[1], dh = s[2];
    Tensor<T> y({n, heads * dh});
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < dh; ++j)
          y[i * heads * dh + h * dh + j] = value(a)[(h * n + i) * dh + j];
    return push(std::move(y), needs(a), {a}, [a, heads, n, dh](Tape& t, const Tensor<T>& g) {
      Tensor<T> ga({heads, n, dh});
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < dh; ++j)
            ga[(h * n + i) * dh + j] = g[i * heads * dh + h * dh + j];
      t.acc(a, std::move(ga));
    });
  }

  // Append shared rows reg[r,d] after each head's keys: [h,nk,d] -> [h,nk+r,d].
  int append_tokens_bcast(int k, int reg) {
    const auto& sk = value(k).shape();
    const auto& sr = value(reg).shape();
    if (sk.size() != 3 || sr.size() != 2 || sk[2] != sr[1])
      throw dim_error("append_tokens_bcast shape mismatch: " + shape_str(sk) + " + " +
                      shape_str(sr));
    const int64_t h = sk[0], nk = sk[1], d = sk[2], r = sr[0];
    Tensor<T> y({h, nk + r, d});
    for (int64_t q = 0; q < h; ++q) {
      std::copy(value(k).data() + q * nk * d, value(k).data() + (q + 1) * nk * d,
                y.data() + q * (nk + r) * d);
      std::copy(value(reg).data(), value(reg).data() + r * d,
                y.data() + (q * (nk + r) + nk) * d);
    }
    return push(std::move(y), needs(k) || needs(reg), {k, reg},
                [k, reg, h, nk, d, r](Tape& t, const Tensor<T>& g) {
                  if (t.needs(k)) {
                    Tensor<T> gk({h, nk, d});
                    for (int64_t q = 0; q < h; ++q)
                      std::copy(g.data() + q * (nk + r) * d,
                                g.data() + q * (nk + r) * d + nk * d, gk.data() + q * nk * d);
                    t.acc(k, std::move(gk));
                  }
                  if (t.needs(reg)) {
                    Tensor<T> gr({r, d});
                    for (int64_t q = 0; q < h; ++q)
                      for (int64_t i = 0; i < r * d; ++i)
                        gr[i] += g[(q * (nk + r) + nk) * d + i];
                    t.acc(reg, std::move(gr));
                  }
                });
  }

  // Rows divided by (row sum + eps) over the last dim.
  int normalize_rows(int a, T eps) {
    const auto& s = value(a).shape();
    const int64_t n = s.back();
    const int64_t rows = value(a).numel() / n;
    Tensor<T> y = value(a).clone();
    std::vector<T> sums(rows);
    for (int64_t r = 0; r < rows; ++r) {
      T sum = eps;
      for (int64_t j = 0; j < n; ++j) sum += y[r * n + j];
      sums[r] = sum;
      for (int64_t j = 0; j < n; ++j) y[r * n + j] /= sum;
    }
    return push(std::move(y), needs(a), {a},
                [a, n, rows, sums = std::move(sums), self = next_id()](Tape& t,
                                                                       const Tensor<T>& g) {
                  const Tensor<T>& y2 = t.value(self);
                  Tensor<T> ga(t.value(a).shape());
                  for (int64_t r = 0; r < rows; ++r) {
                    T dot = T(0);
                    for (int64_t j = 0; j < n; ++j) dot += g[r * n + j] * y2[r * n + j];
                    for (int64_t j = 0; j < n; ++j)
                      ga[r * n + j] = (g[r * n + j] - dot) / sums[r];
                  }
                  t.acc(a, std::move(ga));
                });
  }

  int transpose_last2(int a) {
    Tensor<T> y = kernels::transpose_last2(value(a));
    return push(std::move(y), needs(a), {a}, [a](Tape& t, const Tensor<T>& g) {
      t.acc(a, kernels::transpose_last2(g));
    });
  }

  // [h,w,c] -> [c,h,w]
  int hwc_to_chw(int a) {
    const auto& s = value(a).shape();
    if (s.size() != 3) throw dim_error("hwc_to_chw expects rank 3");
    const int64_t h = s[0], w = s[1], c = s[2];
    Tensor<T> y({c, h, w});
    for (int64_t i = 0; i < h * w; ++i)
      for (int64_t ch = 0; ch < c; ++ch) y[ch * h * w + i] = value(a)[i * c + ch];
    return push(std::move(y), needs(a), {a}, [a, h, w, c](Tape& t, const Tensor<T>& g) {
      Tensor<T> ga({h, w, c});
      for (int64_t i = 0; i < h * w; ++i)
        for (int64_t ch = 0; ch < c; ++ch) ga[i * c + ch] = g[ch * h * w + i];
      t.acc(a, std::move(ga));
    });
  }

  // [c,h,w] -> [h,w,c]
  int chw_to_hwc(int a) {
    const auto& s = value(a).shape();
    if (s.size() != 3) throw dim_error("chw_to_hwc expects rank 3");
    const int64_t c = s[0], h = s[1], w = s[2];
    Tensor<T> y({h, w, c});
    for (int64_t i = 0; i < h * w; ++i)
      for (int64_t ch = 0; ch < c; ++ch) y[i * c + ch] = value(a)[ch * h * w + i];
    return push(std::move(y), needs(a), {a}, [a, h, w, c](Tape& t, const Tensor<T>& g) {
      Tensor<T> ga({c, h, w});
      for (int64_t i = 0; i < h * w; ++i)
        for (int64_t ch = 0; ch < c; ++ch) ga[ch * h * w + i] = g[i * c + ch];
      t.acc(a, std::move(ga));
    });
  }

  // ---- linear algebra / nn kernels ----

  int matmul(int a, int b) {
    Tensor<T> y = kernels::matmul(value(a), value(b));
    return push(std::move(y), needs(a) || needs(b), {a, b},
                [a, b](Tape& t, const Tensor<T>& g) {
                  if (t.needs(a))
                    t.acc(a, kernels::matmul(g, kernels::transpose_last2(t.value(b))));
                  if (t.needs(b))
                    t.acc(b, kernels::matmul(kernels::transpose_last2(t.value(a)), g));
                });
  }

  int softmax_lastdim(int a, T temperature) {
    Tensor<T> y = kernels::softmax_lastdim(value(a), temperature);
    return push(std::move(y), needs(a), {a},
                [a, temperature, self = next_id()](Tape& t, const Tensor<T>& g) {
                  t.acc(a, kernels::softmax_lastdim_backward(t.value(self), g, temperature));
                });
  }

  int conv2d(int x, int k, int b, int64_t stride = 1) {
    Tensor<T> y = kernels::conv2d(value(x), value(k), value(b), stride);
    return push(std::move(y), needs(x) || needs(k) || needs(b), {x, k, b},
                [x, k, b, stride](Tape& t, const Tensor<T>& g) {
                  Tensor<T> dx, dk, db;
                  kernels::conv2d_backward(t.value(x), t.value(k), g, stride, dx, dk, db);
                  t.acc(x, std::move(dx));
                  t.acc(k, std::move(dk));
                  t.acc(b, std::move(db));
                });
  }

  int bilinear_resize(int x, int64_t oh, int64_t ow) {
    Tensor<T> y = kernels::bilinear_resize(value(x), oh, ow);
    return push(std::move(y), needs(x), {x}, [x](Tape& t, const Tensor<T>& g) {
      t.acc(x, kernels::bilinear_resize_backward(g, t.value(x).dim(1), t.value(x).dim(2)));
    });
  }

  int grid_sample(int img, int flow) {
    Tensor<T> y = kernels::grid_sample(value(img), value(flow));
    return push(std::move(y), needs(img) || needs(flow), {img, flow},
                [img, flow](Tape& t, const Tensor<T>& g) {
                  Tensor<T> dimg, dflow;
                  kernels::grid_sample_backward(t.value(img), t.value(flow), g, dimg, dflow);
                  t.acc(img, std::move(dimg));
                  t.acc(flow, std::move(dflow));
                });
  }

  // ---- backward ----

  // Gradients for every recorded node, indexed by id. Untouched nodes keep an
  // empty tensor; callers usually go through grad().
  void backward(int loss_id) {
    if (value(loss_id).numel() != 1)
      throw param_error("backward requires a scalar loss, got " +
                        shape_str(value(loss_id).shape()));
    grads_.assign(nodes_.size(), Tensor<T>());
    grads_[loss_id] = Tensor<T>::scalar(T(1));
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || grads_[id].numel() == 0 || !n.adjoint) continue;
      n.adjoint(*this, grads_[id]);
    }
  }

  // Gradient of the last backward() w.r.t. node id; zeros if the node never
  // influenced the loss.
  Tensor<T> grad(int id) const {
    if (id < static_cast<int>(grads_.size()) && grads_[id].numel() != 0) return grads_[id];
    return Tensor<T>(value(id).shape());
  }

  bool needs(int id) const { return nodes_[id].requires_grad; }

  void acc(int id, const Tensor<T>& g) {
    if (!nodes_[id].requires_grad) return;
    if (grads_[id].numel() == 0) {
      grads_[id] = g.clone();
    } else {
      for (int64_t i = 0; i < g.numel(); ++i) grads_[id][i] += g[i];
    }
  }
  void acc(int id, Tensor<T>&& g) {
    if (!nodes_[id].requires_grad) return;
    if (grads_[id].numel() == 0) {
      grads_[id] = std::move(g);
    } else {
      for (int64_t i = 0; i < g.numel(); ++i) grads_[id][i] += g[i];
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad;
    Adjoint adjoint;
  };

  int next_id() const { return static_cast<int>(nodes_.size()); }

  int push(Tensor<T> v, bool requires_grad, std::initializer_list<int>, Adjoint adj) {
    nodes_.push_back(Node{std::move(v), requires_grad, std::move(adj)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void check_same(int a, int b, const char* op) const {
    if (!value(a).same_shape(value(b)))
      throw dim_error(std::string(op) + " shape mismatch: " + shape_str(value(a).shape()) +
                      " vs " + shape_str(value(b).shape()));
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

}  // namespace leffa
