#pragma once

#include <leffa/autodiff.hpp>
#include <leffa/gradcheck.hpp>
#include <leffa/rng.hpp>
#include <leffa/tensor.hpp>

// Shared helpers for the test suite.

namespace testutil {

template <typename T>
leffa::Tensor<T> random_tensor(std::vector<int64_t> shape, leffa::Rng& rng, double scale = 1.0) {
  leffa::Tensor<T> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = T(scale * rng.gaussian());
  return t;
}

// Row-stochastic [rows, cols] matrix from uniform positives.
template <typename T>
leffa::Tensor<T> random_stochastic(int64_t rows, int64_t cols, leffa::Rng& rng) {
  leffa::Tensor<T> t({rows, cols});
  for (int64_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (int64_t c = 0; c < cols; ++c) {
      t[r * cols + c] = T(rng.uniform() + 1e-3);
      s += t[r * cols + c];
    }
    for (int64_t c = 0; c < cols; ++c) t[r * cols + c] /= s;
  }
  return t;
}

// Checks the tape gradient of a scalar-valued graph against central
// differences, perturbing one chosen input tensor. build() receives a tape
// and the input's leaf id and must return the scalar loss id.
template <typename T, typename Build>
T tape_fd_check(const leffa::Tensor<T>& x, Build build, T step = T(1e-4)) {
  leffa::Tape<T> tape;
  const int xid = tape.leaf(x.clone());
  const int loss = build(tape, xid);
  tape.backward(loss);
  const leffa::Tensor<T> analytic = tape.grad(xid);
  auto f = [&](const leffa::Tensor<T>& xv) {
    leffa::Tape<T> t2;
    const int id = t2.leaf(xv.clone());
    return t2.value(build(t2, id)).item();
  };
  return leffa::finite_difference_check<T>(f, x, analytic, step);
}

}  // namespace testutil
