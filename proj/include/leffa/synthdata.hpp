#pragma once

#include <string>
#include <vector>

#include "leffa/attention_flow.hpp"
#include "leffa/io.hpp"
#include "leffa/kernels.hpp"
#include "leffa/rng.hpp"
#include "leffa/tensor.hpp"

// Procedural correspondence tasks with exact ground-truth flow. Targets are
// produced by grid-sampling the reference through gt_flow (the same kernel the
// loss uses), so target == warp(reference, gt_flow) holds inside the mask by
// construction. Outside the mask gt_flow falls back to the identity
// coordinate map.

namespace leffa {

struct SyntheticSample {
  Tensor<float> reference;  // [3,H,W]
  Tensor<float> target;     // [3,H,W]
  Tensor<float> mask;       // [1,H,W], {0,1}
  Tensor<float> aux;        // [k,H,W] conditioning channels
  Tensor<float> gt_flow;    // [H,W,2]
  std::string task_kind;
  uint64_t seed = 0;
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, float rgb[3]) {
  h = h - std::floor(h);
  const double c = v * s, x = c * (1 - std::abs(std::fmod(h * 6, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  switch (int(h * 6) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  rgb[0] = float(r + m);
  rgb[1] = float(g + m);
  rgb[2] = float(b + m);
}

inline float clamp01(double v) { return float(std::min(std::max(v, 0.0), 1.0)); }

}  // namespace detail

// grid_n x grid_n board of patches over a coordinate-ramp texture; the target
// is a seeded permutation of the patches. Channels 0/1 ramp monotonically with
// row/column so the photometric surface of a warp loss stays a single basin,
// and channel 2 carries a distinct per-patch shade.
inline SyntheticSample gen_patch_permutation(uint64_t seed, int grid_n, int64_t H, int64_t W) {
  if (grid_n < 1 || H % grid_n != 0 || W % grid_n != 0)
    throw param_error("gen_patch_permutation: H and W must be divisible by grid_n");
  Rng rng(seed);
  const int64_t ph = H / grid_n, pw = W / grid_n;
  const int np = grid_n * grid_n;

  SyntheticSample s;
  s.task_kind = "patch_permutation";
  s.seed = seed;
  s.reference = Tensor<float>({3, H, W});
  for (int p = 0; p < np; ++p) {
    const float shade = float(p + 1) / float(np + 1);
    const int64_t py = (p / grid_n) * ph, px = (p % grid_n) * pw;
    for (int64_t i = 0; i < ph; ++i)
      for (int64_t j = 0; j < pw; ++j) {
        const int64_t gy = py + i, gx = px + j;
        const double ry = H > 1 ? double(gy) / double(H - 1) : 0.5;
        const double rx = W > 1 ? double(gx) / double(W - 1) : 0.5;
        s.reference[(0 * H + gy) * W + gx] =
            detail::clamp01(0.15 + 0.7 * ry + 0.02 * (rng.uniform() - 0.5));
        s.reference[(1 * H + gy) * W + gx] =
            detail::clamp01(0.15 + 0.7 * rx + 0.02 * (rng.uniform() - 0.5));
        s.reference[(2 * H + gy) * W + gx] =
            detail::clamp01(shade + 0.02 * (rng.uniform() - 0.5));
      }
  }

  // perm[target patch] = source patch (Fisher-Yates)
  std::vector<int> perm(np);
  for (int i = 0; i < np; ++i) perm[i] = i;
  for (int i = np - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);

  s.gt_flow = Tensor<float>({H, W, 2});
  s.aux = Tensor<float>({3, H, W});
  for (int tp = 0; tp < np; ++tp) {
    const int sp = perm[tp];
    const int64_t ty = (tp / grid_n) * ph, tx = (tp % grid_n) * pw;
    const int64_t sy = (sp / grid_n) * ph, sx = (sp % grid_n) * pw;
    for (int64_t i = 0; i < ph; ++i)
      for (int64_t j = 0; j < pw; ++j) {
        const int64_t gy = ty + i, gx = tx + j;
        const int64_t srci = sy + i, srcj = sx + j;
        s.gt_flow[(gy * W + gx) * 2 + 0] = H > 1 ? float(-1.0 + 2.0 * double(srci) / double(H - 1)) : 0.f;
        s.gt_flow[(gy * W + gx) * 2 + 1] = W > 1 ? float(-1.0 + 2.0 * double(srcj) / double(W - 1)) : 0.f;
        s.aux[(0 * H + gy) * W + gx] = grid_n > 1 ? float(sp / grid_n) / float(grid_n - 1) : 0.5f;
        s.aux[(1 * H + gy) * W + gx] = grid_n > 1 ? float(sp % grid_n) / float(grid_n - 1) : 0.5f;
        s.aux[(2 * H + gy) * W + gx] = 0.5f;
      }
  }
  s.mask = Tensor<float>::full({1, H, W}, 1.0f);
  s.target = kernels::grid_sample(s.reference, s.gt_flow);
  return s;
}

// Colored vertical stripes under a seeded integer horizontal shift; pixels
// shifted in from outside are excluded from the mask (no wrap-around).
inline SyntheticSample gen_stripes(uint64_t seed, int period, int64_t H, int64_t W) {
  if (period < 2) throw param_error("gen_stripes: period must be >= 2");
  Rng rng(seed);
  SyntheticSample s;
  s.task_kind = "stripes";
  s.seed = seed;
  s.reference = Tensor<float>({3, H, W});
  const int nstripes = int((W + period - 1) / period);
  for (int64_t j = 0; j < W; ++j) {
    float rgb[3];
    const int stripe = int(j / period);
    detail::hsv_to_rgb(double(stripe) / std::max(nstripes, 1), 0.9, 0.85, rgb);
    const float shade = 1.0f - 0.25f * float(j % period) / float(period);
    for (int64_t i = 0; i < H; ++i)
      for (int64_t c = 0; c < 3; ++c)
        s.reference[(c * H + i) * W + j] = detail::clamp01(rgb[c] * shade + 0.05 * (rng.uniform() - 0.5));
  }
  const int64_t shift = rng.uniform_int(std::max<int64_t>(W / 4, 1));
  const Tensor<float> cmap = coordinate_map<float>(H, W);
  s.gt_flow = cmap.clone();
  s.mask = Tensor<float>({1, H, W});
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      if (j >= shift) {
        s.mask[i * W + j] = 1.0f;
        s.gt_flow[(i * W + j) * 2 + 1] =
            W > 1 ? float(-1.0 + 2.0 * double(j - shift) / double(W - 1)) : 0.f;
      }
    }
  s.aux = Tensor<float>({3, H, W});
  const float code = W > 1 ? float(shift) / float(W - 1) : 0.f;
  for (int64_t i = 0; i < H * W; ++i) {
    s.aux[i] = code;
    s.aux[H * W + i] = 0.5f;
    s.aux[2 * H * W + i] = 0.5f;
  }
  s.target = kernels::grid_sample(s.reference, s.gt_flow);
  return s;
}

// Full-image seeded integer translation of a noisy color field.
inline SyntheticSample gen_shift(uint64_t seed, int64_t H, int64_t W) {
  Rng rng(seed);
  SyntheticSample s;
  s.task_kind = "shift";
  s.seed = seed;
  s.reference = Tensor<float>({3, H, W});
  // monotone coordinate ramps with mild noise, so the photometric surface is
  // a single wide basin per pixel (no repeated structure to alias against)
  const double base = 0.3 + 0.4 * rng.uniform();
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j) {
      const double ry = H > 1 ? double(i) / double(H - 1) : 0.5;
      const double rx = W > 1 ? double(j) / double(W - 1) : 0.5;
      s.reference[(0 * H + i) * W + j] =
          detail::clamp01(0.15 + 0.7 * ry + 0.02 * (rng.uniform() - 0.5));
      s.reference[(1 * H + i) * W + j] =
          detail::clamp01(0.15 + 0.7 * rx + 0.02 * (rng.uniform() - 0.5));
      s.reference[(2 * H + i) * W + j] = detail::clamp01(base + 0.02 * (rng.uniform() - 0.5));
    }
  const int64_t sy = rng.uniform_int(std::max<int64_t>(H / 4, 1));
  const int64_t sx = rng.uniform_int(std::max<int64_t>(W / 4, 1));
  s.gt_flow = coordinate_map<float>(H, W).clone();
  s.mask = Tensor<float>({1, H, W});
  for (int64_t i = 0; i < H; ++i)
    for (int64_t j = 0; j < W; ++j)
      if (i >= sy && j >= sx) {
        s.mask[i * W + j] = 1.0f;
        s.gt_flow[(i * W + j) * 2 + 0] =
            H > 1 ? float(-1.0 + 2.0 * double(i - sy) / double(H - 1)) : 0.f;
        s.gt_flow[(i * W + j) * 2 + 1] =
            W > 1 ? float(-1.0 + 2.0 * double(j - sx) / double(W - 1)) : 0.f;
      }
  s.aux = Tensor<float>({3, H, W});
  for (int64_t i = 0; i < H * W; ++i) {
    s.aux[i] = H > 1 ? float(sy) / float(H - 1) : 0.f;
    s.aux[H * W + i] = W > 1 ? float(sx) / float(W - 1) : 0.f;
    s.aux[2 * H * W + i] = 0.5f;
  }
  s.target = kernels::grid_sample(s.reference, s.gt_flow);
  return s;
}

// Try-on analog: a textured "garment" rectangle appears at one place in the
// reference and must be filled into a masked region of the target. aux is the
// masked target (garment-agnostic image) plus the binary mask channel.
inline SyntheticSample gen_tryon_fill(uint64_t seed, int64_t H, int64_t W) {
  Rng rng(seed);
  SyntheticSample s;
  s.task_kind = "tryon_fill";
  s.seed = seed;

  // neutral reference background
  s.reference = Tensor<float>({3, H, W});
  for (int64_t i = 0; i < s.reference.numel(); ++i)
    s.reference[i] = detail::clamp01(0.5 + 0.04 * (rng.uniform() - 0.5));
  // garment texture in the reference
  const int64_t gh = std::max<int64_t>(H / 3, 2), gw = std::max<int64_t>(W / 3, 2);
  const int64_t ry = rng.uniform_int(std::max<int64_t>(H - gh, 1));
  const int64_t rx = rng.uniform_int(std::max<int64_t>(W - gw, 1));
  const double hue = rng.uniform();
  for (int64_t i = 0; i < gh; ++i)
    for (int64_t j = 0; j < gw; ++j) {
      float rgb[3];
      detail::hsv_to_rgb(hue + 0.15 * double(i + j) / double(gh + gw), 0.8, 0.9, rgb);
      for (int64_t c = 0; c < 3; ++c)
        s.reference[(c * H + ry + i) * W + rx + j] =
            detail::clamp01(rgb[c] + 0.1 * (rng.uniform() - 0.5));
    }

  // target placement (translation; same size keeps the map affine & simple)
  const int64_t ty = rng.uniform_int(std::max<int64_t>(H - gh, 1));
  const int64_t tx = rng.uniform_int(std::max<int64_t>(W - gw, 1));
  s.mask = Tensor<float>({1, H, W});
  s.gt_flow = coordinate_map<float>(H, W).clone();
  for (int64_t i = 0; i < gh; ++i)
    for (int64_t j = 0; j < gw; ++j) {
      const int64_t gy = ty + i, gx = tx + j;
      s.mask[gy * W + gx] = 1.0f;
      s.gt_flow[(gy * W + gx) * 2 + 0] =
          H > 1 ? float(-1.0 + 2.0 * double(ry + i) / double(H - 1)) : 0.f;
      s.gt_flow[(gy * W + gx) * 2 + 1] =
          W > 1 ? float(-1.0 + 2.0 * double(rx + j) / double(W - 1)) : 0.f;
    }

  // target: smooth background outside the mask, warped garment inside
  Tensor<float> bg({3, H, W});
  const double bphase = rng.uniform(0, 6.28);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < H; ++i)
      for (int64_t j = 0; j < W; ++j)
        bg[(c * H + i) * W + j] = detail::clamp01(
            0.35 + 0.15 * std::sin(2.0 * M_PI * (double(i) / H + double(j) / W) + bphase + c));
  const Tensor<float> warped = kernels::grid_sample(s.reference, s.gt_flow);
  s.target = bg.clone();
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < H * W; ++i)
      if (s.mask[i] != 0.0f) s.target[c * H * W + i] = warped[c * H * W + i];

  // garment-agnostic image + mask channel
  s.aux = Tensor<float>({4, H, W});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < H * W; ++i)
      s.aux[c * H * W + i] = s.mask[i] != 0.0f ? 0.0f : s.target[c * H * W + i];
  for (int64_t i = 0; i < H * W; ++i) s.aux[3 * H * W + i] = s.mask[i];
  return s;
}

inline int64_t aux_channels_for(const std::string& task_kind) {
  if (task_kind == "tryon_fill") return 4;
  if (task_kind == "patch_permutation" || task_kind == "stripes" || task_kind == "shift")
    return 3;
  throw param_error("unknown task_kind '" + task_kind + "'");
}

inline SyntheticSample gen_sample(const std::string& task_kind, uint64_t seed, int64_t H,
                                  int64_t W, int grid_n = 4, int period = 4) {
  if (task_kind == "patch_permutation") return gen_patch_permutation(seed, grid_n, H, W);
  if (task_kind == "stripes") return gen_stripes(seed, period, H, W);
  if (task_kind == "shift") return gen_shift(seed, H, W);
  if (task_kind == "tryon_fill") return gen_tryon_fill(seed, H, W);
  throw param_error("unknown task_kind '" + task_kind + "'");
}

}  // namespace leffa
