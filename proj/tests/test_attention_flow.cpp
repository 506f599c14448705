#include <catch2/catch_amalgamated.hpp>
#include <leffa/attention_flow.hpp>
#include <leffa/gradcheck.hpp>
#include <leffa/rng.hpp>

#include "helpers.hpp"

using namespace leffa;
using testutil::random_stochastic;
using testutil::random_tensor;

TEST_CASE("attention: single query and key normalize to weight 1") {
  Tape<double> tape;
  const int q = tape.constant(Tensor<double>({1, 1, 2}, {0.3, -0.7}));
  const int k = tape.constant(Tensor<double>({1, 1, 2}, {1.5, 0.2}));
  const auto m = attention(tape, q, k, -1, 1.0);
  REQUIRE(tape.value(m.weights).numel() == 1);
  REQUIRE(tape.value(m.weights)[0] == 1.0);
}

TEST_CASE("attention: scaled logits [0, ln 4] at tau=2 give [1/3, 2/3]") {
  // d = 1 so q.k^T / sqrt(d) is the raw product
  Tape<double> tape;
  const int q = tape.constant(Tensor<double>({1, 1, 1}, {1.0}));
  const int k = tape.constant(Tensor<double>({1, 2, 1}, {0.0, std::log(4.0)}));
  const auto m = attention(tape, q, k, -1, 2.0);
  const auto& w = tape.value(m.weights);
  REQUIRE(w[0] == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  REQUIRE(w[1] == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("attention: negligible-mass registers leave spatial weights unchanged") {
  // Spatial logits are large positive while zero register keys produce logit
  // 0, so the registers receive exponentially small mass.
  Tape<double> tape;
  const int q = tape.constant(Tensor<double>({1, 1, 1}, {40.0}));
  const int k = tape.constant(Tensor<double>({1, 2, 1}, {1.0, 0.6}));
  const auto bare = attention(tape, q, k, -1, 1.0);
  const int reg = tape.constant(Tensor<double>({2, 1}));  // zero keys
  const auto with_reg = attention(tape, q, k, reg, 1.0);
  REQUIRE(with_reg.registers == 2);
  REQUIRE(tape.value(with_reg.weights).dim(2) == 4);
  for (int64_t j = 0; j < 2; ++j)
    REQUIRE(std::abs(tape.value(with_reg.weights)[j] - tape.value(bare.weights)[j]) < 1e-6);
}

TEST_CASE("attention: mismatched head or feature dims are rejected") {
  Tape<double> tape;
  const int q = tape.constant(Tensor<double>({2, 1, 3}));
  const int k = tape.constant(Tensor<double>({1, 1, 3}));
  REQUIRE_THROWS_AS(attention(tape, q, k, -1, 1.0), dim_error);
  const int k2 = tape.constant(Tensor<double>({2, 1, 4}));
  REQUIRE_THROWS_AS(attention(tape, q, k2, -1, 1.0), dim_error);
  const int k3 = tape.constant(Tensor<double>({2, 1, 3}));
  REQUIRE_THROWS_AS(attention(tape, q, k3, -1, 0.0), param_error);
}

TEST_CASE("average_heads: one head is the identity") {
  Tape<double> tape;
  Rng rng(31);
  AttentionMapRef m;
  const auto w = random_stochastic<double>(3, 4, rng);
  m.weights = tape.constant(w.reshaped({1, 3, 4}));
  m.heads = 1;
  const int avg = average_heads(tape, m);
  REQUIRE(max_abs_diff(tape.value(avg), w) == 0.0);
}

TEST_CASE("average_heads: opposite one-hot heads average to one half") {
  Tape<double> tape;
  AttentionMapRef m;
  m.weights = tape.constant(Tensor<double>({2, 1, 2}, {1, 0, 0, 1}));
  m.heads = 2;
  const int avg = average_heads(tape, m);
  REQUIRE(tape.value(avg)[0] == 0.5);
  REQUIRE(tape.value(avg)[1] == 0.5);
}

TEST_CASE("average_heads: output rows stay row-stochastic") {
  Rng rng(32);
  for (int it = 0; it < 20; ++it) {
    Tape<double> tape;
    const int64_t heads = 1 + rng.uniform_int(4), nq = 1 + rng.uniform_int(5),
                  nk = 1 + rng.uniform_int(6);
    Tensor<double> w({heads, nq, nk});
    for (int64_t h = 0; h < heads; ++h) {
      const auto rw = random_stochastic<double>(nq, nk, rng);
      std::copy(rw.data(), rw.data() + rw.numel(), w.data() + h * nq * nk);
    }
    AttentionMapRef m;
    m.weights = tape.constant(w);
    m.heads = heads;
    const auto& avg = tape.value(average_heads(tape, m));
    for (int64_t i = 0; i < nq; ++i) {
      double s = 0;
      for (int64_t j = 0; j < nk; ++j) s += avg[i * nk + j];
      REQUIRE(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("coordinate_map: 2x2 corners and 3x3 center") {
  const auto c2 = coordinate_map<double>(2, 2);
  const double expect[] = {-1, -1, -1, 1, 1, -1, 1, 1};
  for (int i = 0; i < 8; ++i) REQUIRE(c2[i] == expect[i]);
  const auto c3 = coordinate_map<double>(3, 3);
  REQUIRE(c3[(1 * 3 + 1) * 2 + 0] == 0.0);
  REQUIRE(c3[(1 * 3 + 1) * 2 + 1] == 0.0);
}

TEST_CASE("coordinate_map: degenerate axis maps to zero") {
  const auto c = coordinate_map<double>(1, 4);
  const double cols[] = {-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0};
  for (int j = 0; j < 4; ++j) {
    REQUIRE(c[j * 2 + 0] == 0.0);
    REQUIRE(c[j * 2 + 1] == Catch::Approx(cols[j]).epsilon(1e-12));
  }
}

TEST_CASE("coordinate_map: linear spacing formula") {
  const auto c = coordinate_map<double>(5, 7);
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 7; ++j) {
      REQUIRE(c[(i * 7 + j) * 2 + 0] == Catch::Approx(-1.0 + 2.0 * i / 4.0).epsilon(1e-12));
      REQUIRE(c[(i * 7 + j) * 2 + 1] == Catch::Approx(-1.0 + 2.0 * j / 6.0).epsilon(1e-12));
    }
  REQUIRE_THROWS_AS(coordinate_map<double>(0, 3), param_error);
}

TEST_CASE("attention_to_flow: one-hot rows pick out key coordinates") {
  const auto coords = coordinate_map<double>(2, 3);
  Tape<double> tape;
  Tensor<double> a({6, 6});
  const int64_t hot[] = {3, 0, 5, 2, 4, 1};
  for (int64_t i = 0; i < 6; ++i) a[i * 6 + hot[i]] = 1.0;
  const int flow = attention_to_flow(tape, tape.constant(a), coords, 0);
  const auto& f = tape.value(flow);
  REQUIRE(f.shape() == std::vector<int64_t>{2, 3, 2});
  for (int64_t i = 0; i < 6; ++i) {
    REQUIRE(f[i * 2 + 0] == coords[hot[i] * 2 + 0]);
    REQUIRE(f[i * 2 + 1] == coords[hot[i] * 2 + 1]);
  }
}

TEST_CASE("attention_to_flow: uniform attention on a symmetric grid is zero flow") {
  const auto coords = coordinate_map<double>(3, 3);
  Tape<double> tape;
  const int avg = tape.constant(Tensor<double>::full({9, 9}, 1.0 / 9.0));
  const auto& f = tape.value(attention_to_flow(tape, avg, coords, 0));
  for (int64_t i = 0; i < f.numel(); ++i) REQUIRE(std::abs(f[i]) < 1e-12);
}

TEST_CASE("attention_to_flow: register mass renormalizes away") {
  // half the row on the register token, half one-hot at spatial key j
  const auto coords = coordinate_map<double>(2, 2);
  Tape<double> tape;
  Tensor<double> a({4, 5});
  const int64_t hot[] = {2, 0, 3, 1};
  for (int64_t i = 0; i < 4; ++i) {
    a[i * 5 + hot[i]] = 0.5;
    a[i * 5 + 4] = 0.5;  // register column
  }
  const auto& f = tape.value(attention_to_flow(tape, tape.constant(a), coords, 1));
  for (int64_t i = 0; i < 4; ++i) {
    REQUIRE(f[i * 2 + 0] == Catch::Approx(coords[hot[i] * 2 + 0]).margin(1e-7));
    REQUIRE(f[i * 2 + 1] == Catch::Approx(coords[hot[i] * 2 + 1]).margin(1e-7));
  }
}

TEST_CASE("attention_to_flow: flow stays in [-1,1] for random stochastic maps") {
  Rng rng(33);
  const auto coords = coordinate_map<double>(3, 4);
  for (int it = 0; it < 1000; ++it) {
    Tape<double> tape;
    const bool with_reg = it % 2 == 1;
    const int64_t r = with_reg ? 1 + rng.uniform_int(3) : 0;
    const auto a = random_stochastic<double>(12, 12 + r, rng);
    const auto& f = tape.value(attention_to_flow(tape, tape.constant(a), coords, r));
    for (int64_t i = 0; i < f.numel(); ++i) {
      REQUIRE(f[i] >= -1.0 - 1e-9);
      REQUIRE(f[i] <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("attention_to_flow: commutes with head averaging for identical heads") {
  Rng rng(34);
  const auto coords = coordinate_map<double>(2, 3);
  const auto row = random_stochastic<double>(6, 6, rng);
  Tensor<double> heads({3, 6, 6});
  for (int h = 0; h < 3; ++h) std::copy(row.data(), row.data() + 36, heads.data() + h * 36);
  Tape<double> tape;
  AttentionMapRef m;
  m.weights = tape.constant(heads);
  m.heads = 3;
  const int favg = attention_to_flow(tape, average_heads(tape, m), coords, 0);
  const int fone = attention_to_flow(tape, tape.constant(row), coords, 0);
  REQUIRE(max_abs_diff(tape.value(favg), tape.value(fone)) < 1e-12);
}

TEST_CASE("temperature monotonicity: larger tau shrinks every row maximum") {
  Rng rng(35);
  for (int it = 0; it < 100; ++it) {
    Tensor<double> logits({1, 6});
    for (int64_t j = 0; j < 6; ++j) logits[j] = rng.gaussian() * 2.0;
    logits[0] += 0.5;  // guarantee a non-constant row
    double prev_max = 2.0;
    for (double tau : {0.5, 1.0, 2.0, 5.0}) {
      const auto y = kernels::softmax_lastdim(logits, tau);
      double mx = 0;
      for (int64_t j = 0; j < 6; ++j) mx = std::max(mx, y[j]);
      REQUIRE(mx < prev_max);
      prev_max = mx;
    }
  }
}

TEST_CASE("select_layers: inclusive threshold") {
  const std::vector<int64_t> heights = {8, 4, 2, 1};  // ratios 1/8 ... 1/64 of 64
  REQUIRE(select_layers(heights, 64, 1.0 / 32.0) == std::vector<size_t>{0, 1, 2});
  REQUIRE(select_layers(heights, 64, 1.0 / 64.0) == std::vector<size_t>{0, 1, 2, 3});
  REQUIRE(select_layers({64, 8}, 64, 1.0) == std::vector<size_t>{0});
  REQUIRE(select_layers(heights, 64, 0.5).empty());
}

TEST_CASE("timestep_in_scope: strict upper bound") {
  REQUIRE(timestep_in_scope(300, 500));
  REQUIRE_FALSE(timestep_in_scope(500, 500));
  REQUIRE_FALSE(timestep_in_scope(0, 0));
  REQUIRE_FALSE(timestep_in_scope(999, 0));
}

TEST_CASE("attention config validation") {
  LeffaConfig c;
  REQUIRE_NOTHROW(c.validate());
  c.tau = 0;
  REQUIRE_THROWS_AS(c.validate(), param_error);
  c = LeffaConfig{};
  c.lambda_leffa = -1;
  REQUIRE_THROWS_AS(c.validate(), param_error);
  c = LeffaConfig{};
  c.theta_resolution = 0;
  REQUIRE_THROWS_AS(c.validate(), param_error);
  c = LeffaConfig{};
  c.theta_resolution = 1.5;
  REQUIRE_THROWS_AS(c.validate(), param_error);
}

TEST_CASE("attention to flow is differentiable w.r.t. queries and keys") {
  Rng rng(36);
  const auto coords = coordinate_map<double>(2, 2);
  const auto qv = random_tensor<double>({1, 4, 3}, rng);
  const auto kv = random_tensor<double>({1, 4, 3}, rng);
  auto build = [&](Tape<double>& t, int id, bool vary_q) {
    const int q = vary_q ? id : t.constant(qv);
    const int k = vary_q ? t.constant(kv) : id;
    const auto m = attention(t, q, k, -1, 2.0, 2, 2);
    const int flow = attention_to_flow(t, average_heads(t, m), coords, 0);
    return t.sum_all(t.mul(flow, flow));
  };
  REQUIRE(testutil::tape_fd_check<double>(
              qv, [&](Tape<double>& t, int id) { return build(t, id, true); }) <= 1e-4);
  REQUIRE(testutil::tape_fd_check<double>(
              kv, [&](Tape<double>& t, int id) { return build(t, id, false); }) <= 1e-4);
}
