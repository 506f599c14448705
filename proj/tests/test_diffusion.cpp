#include <catch2/catch_amalgamated.hpp>
#include <leffa/diffusion.hpp>
#include <leffa/rng.hpp>

#include "helpers.hpp"

using namespace leffa;
using testutil::random_tensor;

TEST_CASE("schedule: alpha_bar decreases and the noising weights are unitary") {
  const DiffusionSchedule<double> s;
  REQUIRE(s.total_steps == 1000);
  REQUIRE(s.betas[0] == Catch::Approx(1e-4).epsilon(1e-12));
  REQUIRE(s.betas[999] == Catch::Approx(2e-2).epsilon(1e-12));
  for (int t = 1; t < s.total_steps; ++t) REQUIRE(s.alpha_bars[t] < s.alpha_bars[t - 1]);
  for (int t = 0; t < s.total_steps; ++t) {
    const double a = std::sqrt(s.alpha_bars[t]), b = std::sqrt(1.0 - s.alpha_bars[t]);
    REQUIRE(std::abs(a * a + b * b - 1.0) < 1e-6);
  }
  REQUIRE_THROWS_AS(DiffusionSchedule<double>(0), param_error);
  REQUIRE_THROWS_AS(DiffusionSchedule<double>(10, 0.0, 0.5), param_error);
  REQUIRE_THROWS_AS(DiffusionSchedule<double>(10, 0.1, 1.0), param_error);
}

TEST_CASE("add_noise: near-zero beta keeps z0, heavy noising approaches eps") {
  Rng rng(51);
  const auto z0 = random_tensor<double>({3, 2, 2}, rng);
  const auto eps = random_tensor<double>({3, 2, 2}, rng);
  const DiffusionSchedule<double> clean(1, 1e-12, 1e-12);  // alpha_bar ~ 1
  REQUIRE(max_abs_diff(add_noise(z0, 0, eps, clean), z0) < 1e-5);
  const DiffusionSchedule<double> noisy(2000, 1e-2, 0.5);  // alpha_bar(T-1) ~ 0
  REQUIRE(max_abs_diff(add_noise(z0, 1999, eps, noisy), eps) < 1e-5);
}

TEST_CASE("add_noise: closed form at alpha_bar = 0.25") {
  const DiffusionSchedule<double> s(1, 0.75, 0.75);
  REQUIRE(s.alpha_bars[0] == Catch::Approx(0.25).epsilon(1e-12));
  const auto z0 = Tensor<double>::full({2, 2, 2}, 1.0);
  const Tensor<double> eps({2, 2, 2});
  const auto zt = add_noise(z0, 0, eps, s);
  for (int64_t i = 0; i < zt.numel(); ++i) REQUIRE(zt[i] == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("add_noise: linear in z0 and eps; range-checks t") {
  Rng rng(52);
  const DiffusionSchedule<double> s;
  const auto z0 = random_tensor<double>({3, 2, 2}, rng);
  const auto eps = random_tensor<double>({3, 2, 2}, rng);
  const int t = 321;
  // additivity: noise(a+b, e1+e2) == noise(a, e1) + noise(b, e2)
  const auto z1 = random_tensor<double>({3, 2, 2}, rng);
  const auto e1 = random_tensor<double>({3, 2, 2}, rng);
  Tensor<double> zsum = z0.clone(), esum = eps.clone();
  for (int64_t i = 0; i < zsum.numel(); ++i) {
    zsum[i] += z1[i];
    esum[i] += e1[i];
  }
  const auto lhs = add_noise(zsum, t, esum, s);
  const auto a = add_noise(z0, t, eps, s);
  const auto b = add_noise(z1, t, e1, s);
  for (int64_t i = 0; i < lhs.numel(); ++i)
    REQUIRE(lhs[i] == Catch::Approx(a[i] + b[i]).margin(1e-12));
  REQUIRE_THROWS_AS(add_noise(z0, -1, eps, s), param_error);
  REQUIRE_THROWS_AS(add_noise(z0, 1000, eps, s), param_error);
  REQUIRE_THROWS_AS(add_noise(z0, 0, random_tensor<double>({3, 2, 3}, rng), s), dim_error);
}

TEST_CASE("diffusion_loss: MSE examples") {
  Rng rng(53);
  Tape<double> tape;
  const auto e = random_tensor<double>({3, 2, 2}, rng);
  const int eps = tape.constant(e);
  REQUIRE(tape.value(diffusion_loss(tape, tape.constant(e.clone()), eps)).item() == 0.0);
  Tensor<double> off = e.clone();
  for (int64_t i = 0; i < off.numel(); ++i) off[i] += 1.0;
  REQUIRE(tape.value(diffusion_loss(tape, tape.constant(off), eps)).item() ==
          Catch::Approx(1.0).epsilon(1e-12));
  const int pred = tape.constant(Tensor<double>({2}, {0, 0}));
  const int target = tape.constant(Tensor<double>({2}, {1, 3}));
  REQUIRE(tape.value(diffusion_loss(tape, pred, target)).item() ==
          Catch::Approx(5.0).epsilon(1e-12));
  REQUIRE_THROWS_AS(diffusion_loss(tape, pred, tape.constant(Tensor<double>({3}))), dim_error);
}

TEST_CASE("combined_loss: weighting and gating arithmetic") {
  Tape<double> tape;
  const int ld = tape.constant(Tensor<double>::scalar(0.5));
  const int ll = tape.constant(Tensor<double>::scalar(2.0));
  REQUIRE(tape.value(combined_loss(tape, ld, ll, 1e-3)).item() ==
          Catch::Approx(0.502).epsilon(1e-12));
  REQUIRE(tape.value(combined_loss(tape, ld, ll, 0.0)).item() == 0.5);
  REQUIRE_THROWS_AS(combined_loss(tape, ld, ll, -0.1), param_error);
}

TEST_CASE("combined_loss: lambda=0 passes gradients through untouched") {
  Rng rng(54);
  Tape<double> tape;
  const auto x = random_tensor<double>({4}, rng);
  const int id = tape.leaf(x.clone());
  const int ld = tape.sum_all(tape.mul(id, id));
  const int ll = tape.sum_all(id);
  tape.backward(combined_loss(tape, ld, ll, 0.0));
  Tensor<double> expected({4});
  for (int64_t i = 0; i < 4; ++i) expected[i] = 2.0 * x[i];
  REQUIRE(max_abs_diff(tape.grad(id), expected) == 0.0);
}
