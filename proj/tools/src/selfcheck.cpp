#include "selfcheck.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "lpdesc/eval.hpp"
#include "lpdesc/geometry.hpp"
#include "lpdesc/gradcheck.hpp"
#include "lpdesc/network.hpp"
#include "lpdesc/triplet.hpp"

namespace lpdesc {

namespace {

using Rng = std::mt19937_64;

bool row_shift(Rng& rng) {
  const GridSpec spec{32, 96.0, GridKind::logpolar};
  std::uniform_real_distribution<double> pos(0.0, 500.0), sig(0.8, 4.0), ang(0.0, 6.28);
  std::uniform_int_distribution<int> shift(1, spec.size - 1);
  for (int t = 0; t < 50; ++t) {
    const Keypoint kp = make_keypoint(pos(rng), pos(rng), sig(rng), ang(rng));
    const int k = shift(rng);
    Keypoint turned = kp;
    turned.theta = normalize_angle(kp.theta + 2.0 * std::numbers::pi * k / spec.size);
    const auto g0 = logpolar_grid(kp, spec);
    const auto g1 = logpolar_grid(turned, spec);
    for (int row = 0; row < spec.size; ++row) {
      for (int col = 0; col < spec.size; ++col) {
        const auto i1 = g1.index(row, col);
        const auto i0 = g0.index((row + k) % spec.size, col);
        if (g1.src_x[i1] != g0.src_x[i0] || g1.src_y[i1] != g0.src_y[i0]) return false;
      }
    }
  }
  return true;
}

bool mining(Rng& rng) {
  std::uniform_int_distribution<int> size(2, 24), level(0, 3);
  for (int t = 0; t < 100; ++t) {
    const int k = size(rng);
    DistanceMatrix d{k, std::vector<double>(static_cast<std::size_t>(k) * k)};
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) d.values[i * k + j] = i == j ? kDistanceSentinel : 0.5 * level(rng);
    }
    const auto mined = mine_hardest_in_batch(d);
    for (int i = 0; i < k; ++i) {
      int row = -1, col = -1;
      for (int j = 0; j < k; ++j) {
        if (row < 0 || d(i, j) < d(i, row)) row = j;
        if (col < 0 || d(j, i) < d(col, i)) col = j;
      }
      const bool take_a = d(i, row) <= d(col, i);
      const Triplet& m = mined[i];
      if ((m.anchor == AnchorSide::a) != take_a || m.negative != (take_a ? row : col)) return false;
    }
  }
  return true;
}

bool fpr_fixture() {
  std::vector<double> pos, neg;
  for (int i = 1; i <= 20; ++i) pos.push_back(i);
  for (double v : {1.5, 10.0, 18.5, 19.5, 20.0, 25.0, 30.0, 31.0, 40.0, 50.0}) neg.push_back(v);
  // threshold = 19th smallest positive = 19, negatives <= 19: 1.5, 10, 18.5
  return fpr95(pos, neg) == 0.3;
}

bool descriptor_norm(Rng& rng) {
  Network<float> net = build_network<float>(rng());
  Tensor4<float> x(4, 1, kPatchSize, kPatchSize);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : x.values()) v = u(rng);
  const auto y = net.forward(x, Mode::check);
  for (int i = 0; i < y.n(); ++i) {
    double s = 0.0;
    for (int j = 0; j < kDescriptorDim; ++j) s += std::pow(y.data()[i * kDescriptorDim + j], 2.0);
    if (std::abs(std::sqrt(s) - 1.0) > 1e-5) return false;
  }
  return true;
}

bool checkpoint_round_trip(Rng& rng) {
  const Network<float> net = build_network<float>(rng());
  std::stringstream a, b;
  save_checkpoint(net, a);
  const Network<float> back = load_checkpoint(a);
  save_checkpoint(back, b);
  return a.str() == b.str();
}

bool conv_gradient(Rng& rng) {
  Layer<double> conv = Conv2d<double>(2, 2, 3, 1, 1);
  Tensor4<double> x(2, 2, 5, 5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : x.values()) v = n(rng);
  for (Param<double>* p : layer_params(conv)) {
    for (auto& v : p->value) v = 0.3 * n(rng);
  }
  return check_layer(conv, x, GradCheckOptions{}).max_relative_error < 1e-4;
}

}  // namespace

bool run_selfcheck(std::uint64_t seed, std::ostream& out) {
  Rng rng(seed);
  const std::pair<const char*, std::function<bool()>> checks[] = {
      {"logpolar row shift", [&] { return row_shift(rng); }},
      {"hardest-in-batch mining", [&] { return mining(rng); }},
      {"fpr95 fixture", [] { return fpr_fixture(); }},
      {"descriptor unit norm", [&] { return descriptor_norm(rng); }},
      {"checkpoint round trip", [&] { return checkpoint_round_trip(rng); }},
      {"conv2d gradient", [&] { return conv_gradient(rng); }},
  };
  bool all = true;
  for (const auto& [name, fn] : checks) {
    const bool ok = fn();
    all = all && ok;
    out << (ok ? "PASS " : "FAIL ") << name << "\n";
  }
  return all;
}

}  // namespace lpdesc
