#include <catch2/catch_amalgamated.hpp>
#include <leffa/warp.hpp>
#include <leffa/rng.hpp>

#include "helpers.hpp"

using namespace leffa;
using testutil::random_tensor;

namespace {

// Scalar brute-force bilinear sampler used as the oracle for grid_sample.
// Shares the documented conventions: align-corners pixel mapping
// p = (c+1)/2*(n-1), a snap to integer pixels within 1e-5 relative, and
// border clamping.
template <typename T>
T oracle_sample(const Tensor<T>& img, int64_t ch, T cy, T cx) {
  const int64_t h = img.dim(1), w = img.dim(2);
  auto unnorm = [](T c, int64_t n) {
    if (n <= 1) return T(0);
    T p = (c + T(1)) / T(2) * T(n - 1);
    const T r = std::nearbyint(p);
    if (std::abs(p - r) <= T(1e-5) * std::max<T>(T(1), std::abs(r))) p = r;
    return std::min(std::max(p, T(0)), T(n - 1));
  };
  const T py = unnorm(cy, h), px = unnorm(cx, w);
  const int64_t y0 = std::min<int64_t>(std::max<int64_t>(int64_t(std::floor(py)), 0),
                                       std::max<int64_t>(h - 2, 0));
  const int64_t x0 = std::min<int64_t>(std::max<int64_t>(int64_t(std::floor(px)), 0),
                                       std::max<int64_t>(w - 2, 0));
  const int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const T fy = py - T(y0), fx = px - T(x0);
  const T* p = img.data() + ch * h * w;
  return (T(1) - fy) * ((T(1) - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
         fy * ((T(1) - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
}

}  // namespace

TEST_CASE("upsample_flow: constant flow stays constant at any size") {
  Tape<float> tape;
  const int flow = tape.constant(Tensor<float>::full({3, 3, 2}, 0.25f));
  const auto& up = tape.value(upsample_flow(tape, flow, 9, 7));
  REQUIRE(up.shape() == std::vector<int64_t>{9, 7, 2});
  for (int64_t i = 0; i < up.numel(); ++i) REQUIRE(up[i] == 0.25f);
}

TEST_CASE("upsample_flow: same size is the identity") {
  Rng rng(41);
  Tape<float> tape;
  const auto f = random_tensor<float>({4, 5, 2}, rng, 0.3);
  const int flow = tape.constant(f);
  REQUIRE(max_abs_diff(tape.value(upsample_flow(tape, flow, 4, 5)), f) == 0.0f);
}

TEST_CASE("upsample_flow: coordinate maps upsample onto coordinate maps") {
  Tape<float> tape;
  const int flow = tape.constant(coordinate_map<float>(2, 2));
  const auto& up = tape.value(upsample_flow(tape, flow, 4, 4));
  REQUIRE(max_abs_diff(up, coordinate_map<float>(4, 4)) < 1e-6f);
}

TEST_CASE("upsample_flow: rejects shrinking or malformed flow") {
  Tape<float> tape;
  const int flow = tape.constant(Tensor<float>({4, 4, 2}));
  REQUIRE_THROWS_AS(upsample_flow(tape, flow, 2, 4), param_error);
  const int bad = tape.constant(Tensor<float>({4, 4, 3}));
  REQUIRE_THROWS_AS(upsample_flow(tape, bad, 8, 8), dim_error);
}

TEST_CASE("grid_sample: identity coordinate map is bit-exact") {
  Rng rng(42);
  for (auto [h, w] : {std::pair<int64_t, int64_t>{8, 8}, {5, 7}, {16, 12}}) {
    const auto img = random_tensor<float>({3, h, w}, rng);
    const auto out = kernels::grid_sample(img, coordinate_map<float>(h, w));
    REQUIRE(max_abs_diff(out, img) == 0.0f);
  }
}

TEST_CASE("grid_sample: constant [-1,-1] flow samples the top-left pixel") {
  Rng rng(43);
  const auto img = random_tensor<float>({3, 4, 6}, rng);
  const auto out = kernels::grid_sample(img, Tensor<float>::full({4, 6, 2}, -1.0f));
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 24; ++i) REQUIRE(out[c * 24 + i] == img[c * 24]);
}

TEST_CASE("grid_sample: matches the scalar oracle on 100 random 8x8 cases") {
  Rng rng(44);
  for (int it = 0; it < 100; ++it) {
    const auto img = random_tensor<float>({3, 8, 8}, rng);
    Tensor<float> flow({8, 8, 2});
    for (int64_t i = 0; i < flow.numel(); ++i) flow[i] = float(rng.uniform() * 2 - 1);
    const auto out = kernels::grid_sample(img, flow);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < 64; ++i) {
        const float expect = oracle_sample(img, c, flow[i * 2], flow[i * 2 + 1]);
        REQUIRE(std::abs(out[c * 64 + i] - expect) <= 1e-6f);
      }
  }
}

TEST_CASE("grid_sample: output stays inside the reference value range") {
  Rng rng(45);
  for (int it = 0; it < 20; ++it) {
    const auto img = random_tensor<float>({3, 6, 6}, rng);
    float lo = img[0], hi = img[0];
    for (int64_t i = 0; i < img.numel(); ++i) {
      lo = std::min(lo, img[i]);
      hi = std::max(hi, img[i]);
    }
    Tensor<float> flow({5, 5, 2});
    for (int64_t i = 0; i < flow.numel(); ++i) flow[i] = float(rng.uniform() * 4 - 2);  // includes out-of-range
    const auto out = kernels::grid_sample(img, flow);
    for (int64_t i = 0; i < out.numel(); ++i) {
      REQUIRE(out[i] >= lo - 1e-6f);
      REQUIRE(out[i] <= hi + 1e-6f);
    }
  }
}

TEST_CASE("leffa_loss: zero when warped equals target") {
  Rng rng(46);
  Tape<float> tape;
  const auto t = random_tensor<float>({3, 4, 4}, rng);
  const int target = tape.constant(t);
  const int warped = tape.constant(t.clone());
  const int mask = tape.constant(Tensor<float>::full({1, 4, 4}, 1.0f));
  REQUIRE(tape.value(leffa_loss<float>(tape, {warped}, target, mask)).item() == 0.0f);
}

TEST_CASE("leffa_loss: zero mask zeroes the loss") {
  Rng rng(47);
  Tape<float> tape;
  const int target = tape.constant(random_tensor<float>({3, 4, 4}, rng));
  const int warped = tape.constant(random_tensor<float>({3, 4, 4}, rng));
  const int mask = tape.constant(Tensor<float>({1, 4, 4}));
  REQUIRE(tape.value(leffa_loss<float>(tape, {warped}, target, mask)).item() == 0.0f);
}

TEST_CASE("leffa_loss: single masked pixel, one channel off by 0.5") {
  Tape<double> tape;
  Tensor<double> target({3, 2, 2});
  Tensor<double> warped({3, 2, 2});
  warped[0] = 0.5;  // channel 0, pixel (0,0)
  Tensor<double> mask({1, 2, 2});
  mask[0] = 1.0;
  const int loss = leffa_loss<double>(tape, {tape.constant(warped)}, tape.constant(target),
                                      tape.constant(mask));
  // mean over (1 masked pixel x 3 channels) of the squared difference
  REQUIRE(tape.value(loss).item() == Catch::Approx(0.25 / 3.0).epsilon(1e-12));
  const int loss_sum = leffa_loss<double>(tape, {tape.constant(warped)}, tape.constant(target),
                                          tape.constant(mask), LossReduction::sum);
  REQUIRE(tape.value(loss_sum).item() == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("leffa_loss: empty layer list is exactly zero; extra layers add up") {
  Rng rng(48);
  Tape<double> tape;
  const int target = tape.constant(random_tensor<double>({3, 3, 3}, rng));
  const int mask = tape.constant(Tensor<double>::full({1, 3, 3}, 1.0));
  REQUIRE(tape.value(leffa_loss<double>(tape, {}, target, mask)).item() == 0.0);
  const int w1 = tape.constant(random_tensor<double>({3, 3, 3}, rng));
  const int w2 = tape.constant(random_tensor<double>({3, 3, 3}, rng));
  const double one = tape.value(leffa_loss<double>(tape, {w1}, target, mask)).item();
  const double two = tape.value(leffa_loss<double>(tape, {w1, w2}, target, mask)).item();
  REQUIRE(two > one);
  const double w2only = tape.value(leffa_loss<double>(tape, {w2}, target, mask)).item();
  REQUIRE(two == Catch::Approx(one + w2only).epsilon(1e-12));
}

TEST_CASE("leffa_loss: shape mismatches are dimension errors") {
  Tape<double> tape;
  const int target = tape.constant(Tensor<double>({3, 4, 4}));
  const int mask = tape.constant(Tensor<double>({1, 4, 4}));
  const int bad = tape.constant(Tensor<double>({3, 4, 5}));
  REQUIRE_THROWS_AS(leffa_loss<double>(tape, {bad}, target, mask), dim_error);
  const int badmask = tape.constant(Tensor<double>({1, 5, 4}));
  REQUIRE_THROWS_AS(leffa_loss<double>(tape, {target}, target, badmask), dim_error);
}

TEST_CASE("full attention-through-warp chain matches finite differences") {
  // attention -> head average -> flow -> upsample -> grid sample -> masked L2
  Rng rng(49);
  const int64_t lh = 2, lw = 2, H = 4, W = 4;
  const auto coords = coordinate_map<double>(lh, lw);
  const auto reference = random_tensor<double>({3, H, W}, rng, 0.3);
  const auto target = random_tensor<double>({3, H, W}, rng, 0.3);
  Tensor<double> mask({1, H, W});
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = i % 3 == 0 ? 0.0 : 1.0;
  const auto qv = random_tensor<double>({2, lh * lw, 3}, rng);
  const auto kv = random_tensor<double>({2, lh * lw, 3}, rng);
  const auto regv = random_tensor<double>({2, 3}, rng);

  auto build = [&](Tape<double>& t, int id, int which) {
    const int q = which == 0 ? id : t.constant(qv);
    const int k = which == 1 ? id : t.constant(kv);
    const int reg = which == 2 ? id : t.constant(regv);
    const auto m = attention(t, q, k, reg, 2.0, lh, lw);
    const int flow = attention_to_flow(t, average_heads(t, m), coords, m.registers);
    const int up = upsample_flow(t, flow, H, W);
    const int warped = t.grid_sample(t.constant(reference), up);
    return leffa_loss<double>(t, {warped}, t.constant(target), t.constant(mask));
  };
  for (int which : {0, 1, 2}) {
    const Tensor<double>& x = which == 0 ? qv : which == 1 ? kv : regv;
    REQUIRE(testutil::tape_fd_check<double>(
                x, [&](Tape<double>& t, int id) { return build(t, id, which); }) <= 1e-4);
  }
}
