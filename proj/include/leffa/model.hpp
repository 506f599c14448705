#pragma once

#include <map>
#include <string>
#include <vector>

#include "leffa/attention_flow.hpp"
#include "leffa/autodiff.hpp"
#include "leffa/rng.hpp"
#include "leffa/tensor.hpp"

// Dual-branch denoiser: a generative branch over [z_t; aux] and a reference
// branch over the clean reference image. At each attention layer the
// generative branch attends over its own tokens concatenated with the
// reference tokens (plus optional register keys/values) and keeps only the
// generative half of the output. The reference-key slice of that attention is
// what the flow extraction consumes.

namespace leffa {

struct ModelConfig {
  int64_t aux_channels = 3;
  int64_t width = 64;
  int64_t heads = 4;
  int registers = 0;
  bool freeze_reference = false;

  void validate() const {
    if (width < heads || width % heads != 0)
      throw param_error("model width must be a positive multiple of heads");
    if (aux_channels < 0 || registers < 0) throw param_error("invalid model config");
  }
};

struct LayerAttention {
  AttentionMapRef cross;      // normalized reference-key slice (+ registers)
  double reference_mass = 0;  // mean pre-renormalization row mass on reference keys
};

template <typename T>
struct ForwardResult {
  int predicted_noise = -1;  // tape id, same shape as z_t
  std::vector<LayerAttention> layers;
  std::vector<int64_t> layer_heights, layer_widths;
};

// Slice rows of a [b, m, n] tensor along the middle axis.
template <typename T>
int slice_rows3(Tape<T>& tape, int a, int64_t start, int64_t len) {
  const int tr = tape.transpose_last2(a);          // [b, n, m]
  const int sl = tape.slice_last(tr, start, len);  // [b, n, len]
  return tape.transpose_last2(sl);                 // [b, len, n]
}

// Reference-key slice of a concatenated self-attention map.
// full: [heads, rows, 2n + r] where rows is n (generative queries only) or 2n
// (full self-attention, generative rows kept); returns the renormalized
// [heads, n, n + r] block over reference keys plus registers.
template <typename T>
AttentionMapRef extract_cross_attention(Tape<T>& tape, int full, int64_t n, int64_t registers) {
  // copy: pushing nodes below may reallocate the tape's storage
  const std::vector<int64_t> s = tape.value(full).shape();
  if (s.size() != 3 || s[2] != 2 * n + registers || (s[1] != n && s[1] != 2 * n))
    throw dim_error("extract_cross_attention: map shape " + shape_str(s) +
                    " inconsistent with n=" + std::to_string(n));
  int block = full;
  if (s[1] == 2 * n) block = slice_rows3(tape, full, 0, n);
  const int refcols = tape.slice_last(block, n, n + registers);
  AttentionMapRef m;
  m.weights = tape.normalize_rows(refcols, T(1e-8));
  m.heads = s[0];
  m.n_q = n;
  m.n_k = n;
  m.registers = registers;
  return m;
}

template <typename T>
class DualBranchModel {
 public:
  DualBranchModel(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    init_branch("gen.", 3 + cfg_.aux_channels, rng, true);
    init_branch("ref.", 3, rng, false);
    if (cfg_.registers > 0) {
      const int64_t dh = cfg_.width / cfg_.heads;
      for (const char* blk : {"reg.block1.", "reg.block2."}) {
        add_param(std::string(blk) + "k", {cfg_.registers, dh}, rng, T(0.02));
        add_param(std::string(blk) + "v", {cfg_.registers, dh}, rng, T(0.02));
      }
    }
  }

  const ModelConfig& config() const { return cfg_; }
  std::map<std::string, Tensor<T>>& params() { return params_; }
  const std::map<std::string, Tensor<T>>& params() const { return params_; }

  // Attention-layer spatial sizes for an HxW input (stride-2 stem twice).
  static std::vector<int64_t> layer_heights(int64_t H) { return {(H + 1) / 2, (H + 3) / 4}; }
  static std::vector<int64_t> layer_widths(int64_t W) { return {(W + 1) / 2, (W + 3) / 4}; }

  // selected_layers: indices (0 = half res, 1 = quarter res) whose attention
  // runs at config tau and carries register tokens; all others run at tau 1.
  ForwardResult<T> forward(Tape<T>& tape, const Tensor<T>& z_t, const Tensor<T>& aux,
                           const Tensor<T>& reference, int t, const LeffaConfig& leffa,
                           const std::vector<size_t>& selected_layers) {
    if (z_t.rank() != 3 || z_t.dim(0) != 3)
      throw dim_error("forward expects z_t[3,H,W], got " + shape_str(z_t.shape()));
    if (aux.dim(0) != cfg_.aux_channels || aux.dim(1) != z_t.dim(1) || aux.dim(2) != z_t.dim(2))
      throw param_error("aux conditioning shape " + shape_str(aux.shape()) +
                        " does not match model/aux config");
    if (reference.dim(1) != z_t.dim(1) || reference.dim(2) != z_t.dim(2))
      throw param_error("reference resolution " + shape_str(reference.shape()) +
                        " does not match z_t " + shape_str(z_t.shape()));

    ids_.clear();
    for (auto& [name, v] : params_) {
      const bool frozen = cfg_.freeze_reference && name.rfind("ref.", 0) == 0;
      ids_[name] = tape.leaf(v, !frozen);
    }

    const Tensor<T> temb = time_embedding(t);
    auto sel = [&](size_t layer) {
      for (size_t s : selected_layers)
        if (s == layer) return true;
      return false;
    };

    // Reference branch: encoder + plain self-attention blocks.
    const int ref_in = tape.constant(reference);
    int rx = tape.relu(conv(tape, "ref.stem.", ref_in, 1));
    rx = tape.relu(conv(tape, "ref.down1.", rx, 2));
    const int rfeat1 = self_block(tape, "ref.block1.", rx);
    const int rx2 = tape.relu(conv(tape, "ref.down2.", rfeat1, 2));
    const int rfeat2 = self_block(tape, "ref.block2.", rx2);

    // Generative branch.
    const int gen_in = tape.constant(concat_channels(z_t, aux));
    int gx = tape.relu(conv(tape, "gen.stem.", gen_in, 1));
    gx = tape.relu(conv(tape, "gen.down1.", gx, 2));

    ForwardResult<T> out;
    out.layer_heights = layer_heights(z_t.dim(1));
    out.layer_widths = layer_widths(z_t.dim(2));

    LayerAttention att1;
    gx = cross_block(tape, "gen.block1.", "reg.block1.", gx, rfeat1, temb,
                     sel(0) ? T(leffa.tau) : T(1), sel(0), leffa, att1);
    int gx2 = tape.relu(conv(tape, "gen.down2.", gx, 2));
    LayerAttention att2;
    gx2 = cross_block(tape, "gen.block2.", "reg.block2.", gx2, rfeat2, temb,
                      sel(1) ? T(leffa.tau) : T(1), sel(1), leffa, att2);
    out.layers = {att1, att2};

    // Decoder: upsample, refine, predict noise at full resolution.
    int d = tape.bilinear_resize(gx2, gx >= 0 ? tape.value(gx).dim(1) : 0,
                                 tape.value(gx).dim(2));
    d = tape.add(d, gx);  // skip connection at half resolution
    d = tape.relu(conv(tape, "gen.up1.", d, 1));
    d = tape.bilinear_resize(d, z_t.dim(1), z_t.dim(2));
    out.predicted_noise = conv(tape, "gen.out.", d, 1);
    return out;
  }

  int param_id(const std::string& name) const { return ids_.at(name); }
  const std::map<std::string, int>& param_ids() const { return ids_; }

  Tensor<T> time_embedding(int t) const {
    const int64_t dim = cfg_.width, half = dim / 2;
    Tensor<T> e({1, dim});
    for (int64_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
      e[i] = T(std::sin(double(t) * freq));
      e[half + i] = T(std::cos(double(t) * freq));
    }
    return e;
  }

 private:
  static Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
    std::copy(a.data(), a.data() + a.numel(), y.data());
    std::copy(b.data(), b.data() + b.numel(), y.data() + a.numel());
    return y;
  }

  void init_branch(const std::string& p, int64_t in_ch, Rng& rng, bool with_decoder) {
    const int64_t w = cfg_.width;
    add_conv(p + "stem.", w, in_ch, rng);
    add_conv(p + "down1.", w, w, rng);
    add_block(p + "block1.", rng);
    add_conv(p + "down2.", w, w, rng);
    add_block(p + "block2.", rng);
    if (with_decoder) {
      add_conv(p + "up1.", w, w, rng);
      add_conv(p + "out.", 3, w, rng);
    }
  }

  void add_block(const std::string& p, Rng& rng) {
    const int64_t w = cfg_.width;
    add_conv(p + "conv1.", w, w, rng);
    add_conv(p + "conv2.", w, w, rng);
    const T s = T(std::sqrt(1.0 / double(w)));
    for (const char* n : {"wq", "wk", "wv", "wo"}) add_param(p + n, {w, w}, rng, s);
    for (const char* n : {"bq", "bk", "bv", "bo"}) params_.emplace(p + n, Tensor<T>({w}));
    if (p.rfind("gen.", 0) == 0) {
      add_param(p + "t.w", {w, w}, rng, s);
      params_.emplace(p + "t.b", Tensor<T>({w}));
    }
  }

  void add_conv(const std::string& p, int64_t oc, int64_t ic, Rng& rng) {
    add_param(p + "k", {oc, ic, 3, 3}, rng, T(std::sqrt(2.0 / double(ic * 9))));
    params_.emplace(p + "b", Tensor<T>({oc}));
  }

  void add_param(const std::string& name, std::vector<int64_t> shape, Rng& rng, T std) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.gaussian()) * std;
    params_.emplace(name, std::move(t));
  }

  int conv(Tape<T>& tape, const std::string& p, int x, int64_t stride) {
    return tape.conv2d(x, ids_.at(p + "k"), ids_.at(p + "b"), stride);
  }

  // [c,h,w] feature -> [n, c] tokens and back.
  int to_tokens(Tape<T>& tape, int x) {
    const std::vector<int64_t> s = tape.value(x).shape();
    return tape.reshape(tape.chw_to_hwc(x), {s[1] * s[2], s[0]});
  }
  int from_tokens(Tape<T>& tape, int tok, int64_t h, int64_t w) {
    const int64_t c = tape.value(tok).dim(1);
    return tape.hwc_to_chw(tape.reshape(tok, {h, w, c}));
  }

  int linear(Tape<T>& tape, int x, const std::string& wname, const std::string& bname) {
    return tape.add_row_bias(tape.matmul(x, ids_.at(wname)), ids_.at(bname));
  }

  // Reference block: conv, self-attention over own tokens, conv; residuals.
  // Returns the block's output features [c,h,w].
  int self_block(Tape<T>& tape, const std::string& p, int x) {
    const std::vector<int64_t> s = tape.value(x).shape();
    const int h1 = tape.relu(conv(tape, p + "conv1.", x, 1));
    const int tok = to_tokens(tape, h1);
    const int q = tape.split_heads(linear(tape, tok, p + "wq", p + "bq"), cfg_.heads);
    const int k = tape.split_heads(linear(tape, tok, p + "wk", p + "bk"), cfg_.heads);
    const int v = tape.split_heads(linear(tape, tok, p + "wv", p + "bv"), cfg_.heads);
    const AttentionMapRef a = attention(tape, q, k, -1, T(1), s[1], s[2]);
    const int o = linear(tape, tape.merge_heads(tape.matmul(a.weights, v)), p + "wo", p + "bo");
    const int x2 = tape.add(h1, from_tokens(tape, o, s[1], s[2]));
    return tape.add(x, tape.relu(conv(tape, p + "conv2.", x2, 1)));
  }

  // Generative block: queries from generative tokens, keys/values from the
  // concatenation [gen; ref] plus optional registers; output is the
  // generative half by construction.
  int cross_block(Tape<T>& tape, const std::string& p, const std::string& regp, int x, int rfeat,
                  const Tensor<T>& temb, T tau, bool selected, const LeffaConfig& leffa,
                  LayerAttention& att) {
    const std::vector<int64_t> s = tape.value(x).shape();
    const int64_t n = s[1] * s[2];
    // timestep conditioning as a per-channel bias
    const int tproj = linear(tape, tape.constant(temb), p + "t.w", p + "t.b");
    int xb = tape.add_channel_bias(x, tape.reshape(tproj, {cfg_.width}));
    const int h1 = tape.relu(conv(tape, p + "conv1.", xb, 1));
    const int gtok = to_tokens(tape, h1);
    const int rtok = to_tokens(tape, rfeat);
    const int alltok = tape.concat0(gtok, rtok);
    const int q = tape.split_heads(linear(tape, gtok, p + "wq", p + "bq"), cfg_.heads);
    int k = tape.split_heads(linear(tape, alltok, p + "wk", p + "bk"), cfg_.heads);
    int v = tape.split_heads(linear(tape, alltok, p + "wv", p + "bv"), cfg_.heads);
    int64_t r = 0;
    if (selected && cfg_.registers > 0) {
      r = cfg_.registers;
      k = tape.append_tokens_bcast(k, ids_.at(regp + "k"));
      v = tape.append_tokens_bcast(v, ids_.at(regp + "v"));
    }
    const int64_t dh = cfg_.width / cfg_.heads;
    const int logits =
        tape.scale(tape.matmul(q, tape.transpose_last2(k)), T(1) / std::sqrt(T(dh)));
    const int aw = tape.softmax_lastdim(logits, tau);  // [heads, n, 2n + r]
    att.cross = extract_cross_attention(tape, aw, n, r);
    att.cross.layer_h = s[1];
    att.cross.layer_w = s[2];
    att.reference_mass = mean_reference_mass(tape.value(aw), n, r);
    (void)leffa;
    const int o =
        linear(tape, tape.merge_heads(tape.matmul(aw, v)), p + "wo", p + "bo");
    const int x2 = tape.add(h1, from_tokens(tape, o, s[1], s[2]));
    return tape.add(xb, tape.relu(conv(tape, p + "conv2.", x2, 1)));
  }

  static double mean_reference_mass(const Tensor<T>& aw, int64_t n, int64_t r) {
    const int64_t heads = aw.dim(0), rows = aw.dim(1), cols = aw.dim(2);
    double total = 0;
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t i = 0; i < rows; ++i) {
        const T* p = aw.data() + (h * rows + i) * cols;
        double m = 0;
        for (int64_t j = n; j < 2 * n + r; ++j) m += double(p[j]);
        total += m;
      }
    return total / double(heads * rows);
  }

  ModelConfig cfg_;
  std::map<std::string, Tensor<T>> params_;
  std::map<std::string, int> ids_;
};

}  // namespace leffa
