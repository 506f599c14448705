#pragma once

#include <cmath>

#include "leffa/autodiff.hpp"
#include "leffa/tensor.hpp"

// DDPM plumbing: linear beta schedule, forward noising, noise-prediction MSE
// and the combined objective.

namespace leffa {

template <typename T>
struct DiffusionSchedule {
  int total_steps = 1000;
  Tensor<T> betas;       // [T], linear in [beta_min, beta_max]
  Tensor<T> alpha_bars;  // [T], cumulative product of (1 - beta)

  explicit DiffusionSchedule(int T_steps = 1000, T beta_min = T(1e-4), T beta_max = T(2e-2))
      : total_steps(T_steps), betas({int64_t(T_steps)}), alpha_bars({int64_t(T_steps)}) {
    if (T_steps < 1 || beta_min <= T(0) || beta_max >= T(1) || beta_max < beta_min)
      throw param_error("invalid diffusion schedule parameters");
    T prod = T(1);
    for (int t = 0; t < T_steps; ++t) {
      betas[t] = T_steps > 1 ? beta_min + (beta_max - beta_min) * T(t) / T(T_steps - 1)
                             : beta_min;
      prod *= (T(1) - betas[t]);
      alpha_bars[t] = prod;
    }
  }
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
template <typename T>
Tensor<T> add_noise(const Tensor<T>& z0, int t, const Tensor<T>& eps,
                    const DiffusionSchedule<T>& sched) {
  if (t < 0 || t >= sched.total_steps)
    throw param_error("add_noise: timestep " + std::to_string(t) + " out of range");
  if (!z0.same_shape(eps)) throw dim_error("add_noise: noise shape mismatch");
  const T a = std::sqrt(sched.alpha_bars[t]);
  const T b = std::sqrt(T(1) - sched.alpha_bars[t]);
  Tensor<T> z = z0.clone();
  for (int64_t i = 0; i < z.numel(); ++i) z[i] = a * z[i] + b * eps[i];
  return z;
}

// MSE between predicted noise and the noise actually applied.
template <typename T>
int diffusion_loss(Tape<T>& tape, int predicted_noise, int eps) {
  if (!tape.value(predicted_noise).same_shape(tape.value(eps)))
    throw dim_error("diffusion_loss shape mismatch: " +
                    shape_str(tape.value(predicted_noise).shape()) + " vs " +
                    shape_str(tape.value(eps).shape()));
  const int diff = tape.sub(predicted_noise, eps);
  return tape.mean_all(tape.mul(diff, diff));
}

// l_diffusion + lambda * l_leffa. Callers gate the leffa term to exact zero
// (skip it entirely) when out of timestep scope or no layer is selected.
template <typename T>
int combined_loss(Tape<T>& tape, int l_diffusion, int l_leffa, T lambda_leffa) {
  if (lambda_leffa < T(0)) throw param_error("lambda_leffa must be >= 0");
  return tape.add(l_diffusion, tape.scale(l_leffa, lambda_leffa));
}

}  // namespace leffa
