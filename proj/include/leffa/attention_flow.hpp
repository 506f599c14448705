#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "leffa/autodiff.hpp"
#include "leffa/tensor.hpp"

// Temperature-scaled attention over spatial + register keys, normalized
// coordinate maps, and attention-to-flow extraction.

namespace leffa {

enum class MaskMode { garment_mask, all_ones };
enum class LossReduction { mean, sum };

struct LeffaConfig {
  double lambda_leffa = 1e-3;
  double tau = 2.0;
  double theta_resolution = 0.25;  // layer ratio h/H must be >= this (inclusive)
  int theta_timestep = 500;
  int register_count = 0;
  bool average_heads = true;
  bool upsample_flow = true;
  MaskMode mask_mode = MaskMode::all_ones;
  LossReduction loss_reduction = LossReduction::mean;

  void validate() const {
    if (tau <= 0) throw param_error("tau must be > 0");
    if (lambda_leffa < 0) throw param_error("lambda_leffa must be >= 0");
    if (theta_resolution <= 0 || theta_resolution > 1)
      throw param_error("theta_resolution must be in (0,1]");
    if (register_count < 0) throw param_error("register_count must be >= 0");
  }
};

// Attention weights over (spatial + register) keys for one layer. weights is
// a tape node of shape [heads, n_q, n_k + r].
struct AttentionMapRef {
  int weights = -1;
  int64_t heads = 0, n_q = 0, n_k = 0, registers = 0;
  int64_t layer_h = 0, layer_w = 0;
};

// Normalized coordinate map: [h,w,2], channel 0 = row in [-1,1], channel 1 =
// column. A degenerate axis (size 1) maps to coordinate 0.
template <typename T>
Tensor<T> coordinate_map(int64_t h, int64_t w) {
  if (h < 1 || w < 1) throw param_error("coordinate_map needs h,w >= 1");
  Tensor<T> c({h, w, 2});
  for (int64_t i = 0; i < h; ++i) {
    const T row = h > 1 ? T(-1) + T(2) * T(i) / T(h - 1) : T(0);
    for (int64_t j = 0; j < w; ++j) {
      const T col = w > 1 ? T(-1) + T(2) * T(j) / T(w - 1) : T(0);
      c[(i * w + j) * 2 + 0] = row;
      c[(i * w + j) * 2 + 1] = col;
    }
  }
  return c;
}

// Eq.-style attention: softmax(q.[k; reg_keys]^T / sqrt(d) / tau). Register
// keys (if reg_keys >= 0) are appended after the spatial keys in every head.
// q: [heads, n_q, d], k: [heads, n_k, d], reg_keys: [r, d].
template <typename T>
AttentionMapRef attention(Tape<T>& tape, int q, int k, int reg_keys, T tau,
                          int64_t layer_h = 0, int64_t layer_w = 0) {
  if (tau <= T(0)) throw param_error("attention temperature must be > 0");
  // copy the shapes: pushing nodes below may reallocate the tape's storage
  const std::vector<int64_t> sq = tape.value(q).shape();
  const std::vector<int64_t> sk = tape.value(k).shape();
  if (sq.size() != 3 || sk.size() != 3 || sq[0] != sk[0] || sq[2] != sk[2])
    throw dim_error("attention q/k shape mismatch: " + shape_str(sq) + " vs " + shape_str(sk));
  int64_t r = 0;
  int keys = k;
  if (reg_keys >= 0) {
    r = tape.value(reg_keys).dim(0);
    if (r > 0) {
      if (tape.value(reg_keys).dim(1) != sq[2])
        throw dim_error("attention register key dim mismatch");
      keys = tape.append_tokens_bcast(k, reg_keys);
    }
  }
  const int logits = tape.scale(tape.matmul(q, tape.transpose_last2(keys)),
                                T(1) / std::sqrt(T(sq[2])));
  AttentionMapRef m;
  m.weights = tape.softmax_lastdim(logits, tau);
  m.heads = sq[0];
  m.n_q = sq[1];
  m.n_k = sk[1];
  m.registers = r;
  m.layer_h = layer_h;
  m.layer_w = layer_w;
  return m;
}

// Mean over the head axis; rows stay row-stochastic. Returns [n_q, n_k + r].
template <typename T>
int average_heads(Tape<T>& tape, const AttentionMapRef& m) {
  return tape.mean_axis0(m.weights);
}

// Flow from averaged attention: spatial sub-block times the flattened
// coordinate map, renormalized by the spatial row mass (+1e-8) when register
// tokens hold part of the row. avg: [n_q, n_k + r] -> flow [h, w, 2].
template <typename T>
int attention_to_flow(Tape<T>& tape, int avg, const Tensor<T>& coords, int64_t registers) {
  const int64_t h = coords.dim(0), w = coords.dim(1);
  const int64_t n_k = h * w;
  const auto& s = tape.value(avg).shape();
  if (s.size() != 2 || s[1] != n_k + registers)
    throw dim_error("attention_to_flow: avg shape " + shape_str(s) + " vs coords " +
                    shape_str(coords.shape()));
  int spatial = avg;
  if (registers > 0) {
    spatial = tape.slice_last(avg, 0, n_k);
    spatial = tape.normalize_rows(spatial, T(1e-8));
  }
  const int cflat = tape.constant(coords.reshaped({n_k, 2}));
  return tape.reshape(tape.matmul(spatial, cflat), {h, w, 2});
}

// Layers whose resolution ratio h^l / H meets the threshold (inclusive).
inline std::vector<size_t> select_layers(const std::vector<int64_t>& layer_heights,
                                         int64_t image_height, double theta_resolution) {
  std::vector<size_t> out;
  for (size_t i = 0; i < layer_heights.size(); ++i) {
    if (layer_heights[i] < 1) throw param_error("layer height must be >= 1");
    const double ratio = double(layer_heights[i]) / double(image_height);
    if (ratio >= theta_resolution - 1e-12) out.push_back(i);
  }
  return out;
}

inline bool timestep_in_scope(int t, int theta_timestep) { return t < theta_timestep; }

}  // namespace leffa
