#pragma once

#include <vector>

#include "leffa/attention_flow.hpp"
#include "leffa/autodiff.hpp"

// Flow upsampling, reference warping, and the masked L2 loss over warped
// layers.

namespace leffa {

// Bilinear flow upsampling, align-corners: [h,w,2] -> [H,W,2].
template <typename T>
int upsample_flow(Tape<T>& tape, int flow, int64_t H, int64_t W) {
  const auto& s = tape.value(flow).shape();
  if (s.size() != 3 || s[2] != 2)
    throw dim_error("upsample_flow expects [h,w,2], got " + shape_str(s));
  if (H < s[0] || W < s[1]) throw param_error("upsample_flow target smaller than source");
  return tape.chw_to_hwc(tape.bilinear_resize(tape.hwc_to_chw(flow), H, W));
}

// Number of active pixels in a {0,1} mask.
template <typename T>
int64_t mask_count(const Tensor<T>& mask) {
  int64_t n = 0;
  for (int64_t i = 0; i < mask.numel(); ++i) n += mask[i] != T(0);
  return n;
}

// Sum over layers of reduce(mask .* (target - warped)^2). Mean reduction
// divides by (masked pixels x channels); sum is the raw masked sum. Empty
// layer list yields exact scalar zero.
template <typename T>
int leffa_loss(Tape<T>& tape, const std::vector<int>& warped_layers, int target, int mask,
               LossReduction reduction = LossReduction::mean) {
  // copies: pushing nodes below may reallocate the tape's storage
  const std::vector<int64_t> ts = tape.value(target).shape();
  const std::vector<int64_t> ms = tape.value(mask).shape();
  if (ms.size() != 3 || ms[0] != 1 || ms[1] != ts[1] || ms[2] != ts[2])
    throw dim_error("leffa_loss mask shape " + shape_str(ms) + " vs target " + shape_str(ts));
  int total = tape.constant(Tensor<T>::scalar(T(0)));
  if (warped_layers.empty()) return total;
  const int64_t active = mask_count(tape.value(mask));
  for (int w : warped_layers) {
    if (!tape.value(w).same_shape(tape.value(target)))
      throw dim_error("leffa_loss warped shape " + shape_str(tape.value(w).shape()) +
                      " vs target " + shape_str(ts));
    const int diff = tape.sub(target, w);
    int term = tape.sum_all(tape.mul_mask(tape.mul(diff, diff), mask));
    if (reduction == LossReduction::mean)
      term = tape.scale(term, active > 0 ? T(1) / T(active * ts[0]) : T(0));
    total = tape.add(total, term);
  }
  return total;
}

}  // namespace leffa
