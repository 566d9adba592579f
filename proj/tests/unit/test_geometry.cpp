#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "lpdesc/error.hpp"
#include "lpdesc/geometry.hpp"

using namespace lpdesc;

namespace {
constexpr double kPi = std::numbers::pi;
}

TEST_CASE("log-polar grid origin and radii") {
  // lambda * sigma / 2 = 16
  const GridSpec spec{32, 16.0, GridKind::logpolar};
  const Keypoint kp = make_keypoint(50.0, 40.0, 2.0, 0.0);
  const SamplingGrid g = logpolar_grid(kp, spec);
  CHECK(g.src_x[g.index(0, 0)] == doctest::Approx(51.0).epsilon(1e-12));
  CHECK(g.src_y[g.index(0, 0)] == doctest::Approx(40.0).epsilon(1e-12));
  // Geometric midpoint of [1, 16].
  CHECK(g.src_x[g.index(0, 16)] - 50.0 == doctest::Approx(4.0).epsilon(1e-9));
  // A quarter turn is row 8 of 32; radius 4 straight down (y grows downwards).
  CHECK(g.src_x[g.index(8, 16)] == doctest::Approx(50.0).epsilon(1e-9));
  CHECK(g.src_y[g.index(8, 16)] == doctest::Approx(44.0).epsilon(1e-9));
}

TEST_CASE("log-polar grid needs a radius above one pixel") {
  CHECK_THROWS_AS(logpolar_grid(make_keypoint(0, 0, 0.1, 0), GridSpec{32, 16.0}), ValidationError);
}

TEST_CASE("row shift and radial stretch are exact") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-200.0, 200.0), ang(0.0, 2 * kPi);
  std::uniform_int_distribution<int> k(1, 31);
  std::uniform_int_distribution<std::int64_t> m(std::int64_t{1} << 31, std::int64_t{5} << 32);
  const GridSpec spec{32, 2.0, GridKind::logpolar};
  for (int t = 0; t < 20; ++t) {
    const double r = std::exp(std::ldexp(static_cast<double>(m(rng)), -32));
    const double r2 = std::exp(2.0 * std::log(r));
    const Keypoint kp = make_keypoint(pos(rng), pos(rng), r, ang(rng));
    const int shift = k(rng);
    const Keypoint turned = make_keypoint(kp.x, kp.y, kp.sigma, kp.theta + 2 * kPi * shift / 32);
    const Keypoint wide = make_keypoint(kp.x, kp.y, r2, kp.theta);
    const auto g = logpolar_grid(kp, spec);
    const auto gt = logpolar_grid(turned, spec);
    const auto gw = logpolar_grid(wide, spec);
    for (int row = 0; row < 32; ++row) {
      for (int col = 0; col < 32; ++col) {
        const auto a = gt.index(row, col);
        const auto b = g.index((row + shift) % 32, col);
        CHECK(gt.src_x[a] == g.src_x[b]);
        CHECK(gt.src_y[a] == g.src_y[b]);
      }
      for (int x = 0; 2 * x <= 31; ++x) {
        CHECK(gw.src_x[gw.index(row, x)] == g.src_x[g.index(row, 2 * x)]);
        CHECK(gw.src_y[gw.index(row, x)] == g.src_y[g.index(row, 2 * x)]);
      }
    }
  }
}

TEST_CASE("cartesian grid") {
  // r = 12 * 2 / 2 = 12
  const GridSpec spec{33, 12.0, GridKind::cartesian};
  const Keypoint kp = make_keypoint(100.0, 80.0, 2.0, 0.0);
  const auto g = cartesian_grid(kp, spec);
  CHECK(g.src_x[g.index(16, 16)] == 100.0);
  CHECK(g.src_y[g.index(16, 16)] == 80.0);
  CHECK(g.src_x[g.index(32, 32)] == doctest::Approx(112.0).epsilon(1e-12));
  CHECK(g.src_y[g.index(32, 32)] == doctest::Approx(92.0).epsilon(1e-12));

  const auto q = cartesian_grid(make_keypoint(100.0, 80.0, 2.0, kPi / 2), spec);
  // (u, v) = (1, 0): R(pi/2) maps the x offset onto y.
  CHECK(q.src_x[q.index(16, 32)] == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(q.src_y[q.index(16, 32)] == doctest::Approx(92.0).epsilon(1e-12));
}

TEST_CASE("scale ratio and orientation residual") {
  CHECK(scale_ratio(2.0, 2.0) == 1.0);
  CHECK(scale_ratio(1.0, 4.0) == 4.0);
  CHECK(scale_ratio(3.0, 2.0) == 1.5);
  CHECK(scale_ratio(2.0, 3.0) == 1.5);
  CHECK_THROWS_AS(scale_ratio(0.0, 1.0), ValidationError);

  CHECK(orientation_residual_deg(0.0, kPi / 4, kPi / 4) == doctest::Approx(0.0));
  CHECK(orientation_residual_deg(0.0, 2 * kPi - 0.01, 0.0) == doctest::Approx(0.01 * 180 / kPi));
  const double r = orientation_residual_deg(0.0, 0.5, 0.0);
  CHECK(r == doctest::Approx(28.6479).epsilon(1e-5));
  CHECK(r > 25.0);
}

TEST_CASE("keypoint text round trip") {
  const std::vector<Keypoint> kps = {make_keypoint(1.5, 2.25, 1.2, 0.3),
                                     make_keypoint(100.0, 7.0, 3.0, 6.0)};
  std::stringstream ss;
  format_keypoints(ss, kps);
  CHECK(parse_keypoints(ss) == kps);

  std::istringstream bad("1 2 -1 0\n");
  CHECK_THROWS_AS(parse_keypoints(bad), ValidationError);
  std::istringstream comments("# header\n3 4 1 0\n");
  CHECK(parse_keypoints(comments).size() == 1);
}

TEST_CASE("orientation is wrapped into [0, 2pi)") {
  CHECK(make_keypoint(0, 0, 1, -0.5).theta == doctest::Approx(2 * kPi - 0.5));
  CHECK(make_keypoint(0, 0, 1, 2 * kPi + 0.25).theta == doctest::Approx(0.25));
}
