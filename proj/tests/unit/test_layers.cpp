#include <doctest.h>

#include <cmath>
#include <random>

#include "lpdesc/error.hpp"
#include "lpdesc/gradcheck.hpp"
#include "lpdesc/layers.hpp"
#include "lpdesc/optim.hpp"

using namespace lpdesc;

namespace {

const ForwardContext kCheck{Mode::check, nullptr};

Tensor4<double> random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor4<double> t(n, c, h, w);
  for (auto& v : t.values()) v = normal(rng);
  return t;
}

void randomize(Layer<double>& layer, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.5);
  for (Param<double>* p : layer_params(layer)) {
    for (auto& v : p->value) v += normal(rng);
  }
}

}  // namespace

TEST_CASE("conv2d counts overlaps") {
  Conv2d<float> conv(1, 1, 3, 1, 1);
  std::fill(conv.weight.value.begin(), conv.weight.value.end(), 1.0f);
  LayerCache<float> cache;
  const auto y = conv.forward(Tensor4<float>(1, 1, 3, 3, 1.0f), kCheck, cache);
  CHECK(y.at(0, 0, 1, 1) == 9.0f);
  CHECK(y.at(0, 0, 0, 0) == 4.0f);
  CHECK(y.at(0, 0, 2, 2) == 4.0f);
  CHECK(y.at(0, 0, 0, 1) == 6.0f);
}

TEST_CASE("identity 1x1 convolution") {
  Conv2d<double> conv(2, 2, 1, 1, 0);
  conv.weight.value = {1, 0, 0, 1};
  const auto x = random_tensor(3, 2, 4, 5, 1);
  LayerCache<double> cache;
  CHECK(conv.forward(x, kCheck, cache) == x);
}

TEST_CASE("conv2d output extents and shape errors") {
  Conv2d<float> conv(3, 4, 3, 2, 1);
  CHECK(conv.output_extent(32) == 16);
  CHECK(conv.output_extent(5) == 3);
  LayerCache<float> cache;
  CHECK_THROWS_AS(conv.forward(Tensor4<float>(1, 2, 8, 8), kCheck, cache), ValidationError);
}

TEST_CASE("conv2d backward matches finite differences") {
  Layer<double> conv = Conv2d<double>(2, 3, 3, 2, 1);
  randomize(conv, 3);
  const auto r = check_layer(conv, random_tensor(1, 2, 5, 5, 4), GradCheckOptions{});
  CHECK(r.probes >= 60);
  CHECK(r.max_relative_error < 1e-4);
  // A layer with a kernel wider than it is padded still checks out.
  Layer<double> wide = Conv2d<double>(1, 2, 5, 3, 2);
  randomize(wide, 5);
  CHECK(check_layer(wide, random_tensor(2, 1, 7, 6, 6), GradCheckOptions{}).max_relative_error < 1e-4);
}

TEST_CASE("instance norm") {
  InstanceNorm<double> in;
  LayerCache<double> cache;
  const auto flat = in.forward(Tensor4<double>(2, 1, 4, 4, 0.7), kCheck, cache);
  for (double v : flat.values()) CHECK(std::abs(v) < 1e-9);

  const auto x = random_tensor(2, 1, 6, 6, 8);
  Tensor4<double> shifted = x;
  for (auto& v : shifted.values()) v = 3.0 * v + 1.5;
  const auto a = in.forward(x, kCheck, cache);
  const auto b = in.forward(shifted, kCheck, cache);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  for (int s = 0; s < 2; ++s) {
    double mean = 0.0, sq = 0.0;
    for (int y = 0; y < 6; ++y) {
      for (int xx = 0; xx < 6; ++xx) mean += a.at(s, 0, y, xx);
    }
    mean /= 36.0;
    for (int y = 0; y < 6; ++y) {
      for (int xx = 0; xx < 6; ++xx) sq += std::pow(a.at(s, 0, y, xx) - mean, 2);
    }
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(sq / 36.0 - 1.0) < 1e-4);
  }
  Layer<double> layer = InstanceNorm<double>{};
  CHECK(check_layer(layer, random_tensor(2, 2, 4, 4, 9), GradCheckOptions{}).max_relative_error < 1e-4);
}

TEST_CASE("batch norm") {
  Layer<double> bn = BatchNorm<double>(2);
  randomize(bn, 10);
  CHECK(check_layer(bn, random_tensor(4, 2, 3, 3, 11), GradCheckOptions{}).max_relative_error < 1e-4);

  BatchNorm<float> fresh(3);
  LayerCache<float> cache;
  const ForwardContext infer{Mode::infer, nullptr};
  CHECK_THROWS_AS(fresh.forward(Tensor4<float>(2, 3, 2, 2), infer, cache), ValidationError);

  // Running statistics: EMA with momentum 0.1 of the batch mean and the
  // unbiased batch variance.
  Tensor4<float> x(2, 3, 1, 2);
  const float vals[] = {1, 3, 0, 0, 2, 2, 5, 7, 1, 1, 4, 6};
  std::copy(std::begin(vals), std::end(vals), x.data());
  const ForwardContext train{Mode::train, nullptr};
  fresh.forward(x, train, cache);
  CHECK(fresh.updates == 1);
  // channel 0 values {1, 3, 5, 7}: mean 4, unbiased variance 20/3
  CHECK(fresh.running_mean[0] == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(fresh.running_var[0] == doctest::Approx(0.9 + 0.1 * 20.0 / 3.0).epsilon(1e-6));
  const auto y = fresh.forward(x, infer, cache);
  CHECK(y.at(0, 0, 0, 0) == doctest::Approx((1.0 - 0.4) / std::sqrt(0.9 + 2.0 / 3.0 + 1e-5)).epsilon(1e-5));
}

TEST_CASE("relu and dropout") {
  Relu<float> relu;
  LayerCache<float> cache;
  Tensor4<float> x(1, 1, 1, 3);
  x[0] = -1.0f;
  x[1] = 0.0f;
  x[2] = 2.0f;
  const auto y = relu.forward(x, kCheck, cache);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 0.0f);
  CHECK(y[2] == 2.0f);
  x[0] = NAN;
  CHECK(std::isnan(relu.forward(x, kCheck, cache)[0]));

  std::mt19937_64 rng(3);
  const ForwardContext train{Mode::train, &rng};
  Dropout<float> none(0.0);
  const auto ones = Tensor4<float>(1, 1, 1000, 1000, 1.0f);
  CHECK(none.forward(ones, train, cache) == ones);

  Dropout<float> half(0.5);
  const auto d = half.forward(ones, train, cache);
  double mean = 0.0;
  for (float v : d.values()) {
    CHECK((v == 0.0f || v == 2.0f));
    mean += v;
  }
  mean /= static_cast<double>(d.size());
  CHECK(std::abs(mean - 1.0) < 0.01);
  CHECK(half.forward(ones, ForwardContext{Mode::infer, nullptr}, cache) == ones);
  CHECK_THROWS_AS(Dropout<float>(1.0), ValidationError);
}

TEST_CASE("l2 normalization") {
  L2Normalize<double> l2;
  LayerCache<double> cache;
  Tensor4<double> x(1, 4, 1, 1);
  x[0] = 3.0;
  x[1] = 4.0;
  const auto y = l2.forward(x, kCheck, cache);
  CHECK(y[0] == doctest::Approx(0.6));
  CHECK(y[1] == doctest::Approx(0.8));
  CHECK(y[2] == 0.0);
  const auto z = l2.forward(y, kCheck, cache);
  for (std::size_t i = 0; i < 4; ++i) CHECK(z[i] == doctest::Approx(y[i]).epsilon(1e-15));
  Layer<double> layer = L2Normalize<double>{};
  CHECK(check_layer(layer, random_tensor(3, 5, 2, 2, 12), GradCheckOptions{}).max_relative_error < 1e-4);
}

TEST_CASE("finite-difference harness") {
  // A linear map is differentiated exactly up to roundoff.
  Layer<double> linear = Conv2d<double>(3, 2, 1, 1, 0);
  randomize(linear, 13);
  CHECK(check_layer(linear, random_tensor(2, 3, 3, 3, 14), GradCheckOptions{}).max_relative_error < 1e-7);

  GradCheckOptions fault;
  fault.fault_layer = 0;
  CHECK(check_layer(linear, random_tensor(2, 3, 3, 3, 14), fault).max_relative_error > 0.1);

  double v = 2.0;
  std::vector<Probe> probes = {{&v, 12.0, "x"}};
  const auto r = finite_diff_check(probes, [&] { return v * v * v; }, GradCheckOptions{});
  CHECK(r.max_relative_error < 1e-8);
  CHECK(r.probes == 1);
}

TEST_CASE("sgd step") {
  Param<float> p("w", {3}, true, 1.0f);
  p.grad = {0.5f, -1.0f, 2.0f};
  OptimConfig plain{1.0, 0.0, 0.0, 10};
  sgd_step(p, plain, 0);
  CHECK(p.value == std::vector<float>{0.5f, 2.0f, -1.0f});

  CHECK(effective_learning_rate(OptimConfig{0.3, 0.9, 0.0, 6}, 5) == doctest::Approx(0.05));
  CHECK(effective_learning_rate(OptimConfig{0.3, 0.9, 0.0, 6}, 0) == 0.3);
  CHECK_THROWS_AS(effective_learning_rate(OptimConfig{0.3, 0.9, 0.0, 6}, 6), ValidationError);

  Param<double> q("w", {1}, true, 0.0);
  const OptimConfig mom{0.1, 0.9, 0.0, 10};
  q.grad = {1.0};
  sgd_step(q, mom, 0);
  sgd_step(q, mom, 0);
  CHECK(q.value[0] == doctest::Approx(-0.1 * (1.0 + 1.9)).epsilon(1e-15));

  // Weight decay applies to decayed parameters only.
  Param<double> w("w", {1}, true, 2.0), s("scale", {1}, false, 2.0);
  const OptimConfig wd{1.0, 0.0, 0.5, 10};
  sgd_step(w, wd, 0);
  sgd_step(s, wd, 0);
  CHECK(w.value[0] == doctest::Approx(1.0));
  CHECK(s.value[0] == 2.0);
  CHECK_THROWS_AS(validate(OptimConfig{0.1, 1.0, 0.0, 10}), ValidationError);
}
