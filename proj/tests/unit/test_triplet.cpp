#include <doctest.h>

#include <cmath>
#include <random>

#include "lpdesc/gradcheck.hpp"
#include "lpdesc/triplet.hpp"

using namespace lpdesc;

namespace {

DescriptorMatrix<double> random_unit_rows(int k, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  DescriptorMatrix<double> m(k, dim);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < dim; ++j) m(i, j) = normal(rng);
    m.row(i).normalize();
  }
  return m;
}

// Exhaustive mining oracle: scan every candidate in both directions.
std::vector<Triplet> oracle_mining(const DistanceMatrix& d) {
  std::vector<Triplet> out;
  for (int k = 0; k < d.size; ++k) {
    int best_b = -1, best_a = -1;
    for (int j = 0; j < d.size; ++j) {
      if (j == k) continue;
      if (best_b < 0 || d(k, j) < d(k, best_b)) best_b = j;
      if (best_a < 0 || d(j, k) < d(best_a, k)) best_a = j;
    }
    Triplet t;
    if (d(k, best_b) <= d(best_a, k)) {
      t = {AnchorSide::a, k, best_b, d(k, best_b)};
    } else {
      t = {AnchorSide::b, k, best_a, d(best_a, k)};
    }
    out.push_back(t);
  }
  return out;
}

}  // namespace

TEST_CASE("distance matrix") {
  DescriptorMatrix<double> a(2, 3), b(2, 3);
  a << 1, 0, 0, 0, 1, 0;
  b << 0, 1, 0, 1, 0, 0;
  const auto d = distance_matrix(a, b);
  CHECK(d(0, 0) == kDistanceSentinel);
  CHECK(d(0, 1) == 0.0);
  CHECK(d(1, 0) == 0.0);
  DescriptorMatrix<double> c(2, 3);
  c << 0, 0, 1, 0, 0, 1;
  CHECK(distance_matrix(a, c)(0, 1) == doctest::Approx(std::sqrt(2.0)));

  std::mt19937_64 rng(1);
  const auto x = random_unit_rows(8, 16, rng);
  const auto y = random_unit_rows(8, 16, rng);
  const auto dm = distance_matrix(x, y);
  const auto pos = positive_distances(x, y);
  for (int i = 0; i < 8; ++i) {
    CHECK(pos[i] == doctest::Approx((x.row(i) - y.row(i)).norm()).epsilon(1e-12));
    for (int j = 0; j < 8; ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (int t = 0; t < 16; ++t) s += (x(i, t) - y(j, t)) * (x(i, t) - y(j, t));
      CHECK(std::abs(dm(i, j) - std::sqrt(s)) < 1e-6);
    }
  }
}

TEST_CASE("mining by hand and under ties") {
  DistanceMatrix d{2, {kDistanceSentinel, 0.3, 0.5, kDistanceSentinel}};
  const auto t = mine_hardest_in_batch(d);
  CHECK(t[0].anchor == AnchorSide::a);
  CHECK(t[0].negative == 1);
  CHECK(t[0].negative_distance == 0.3);
  // k = 1: row min 0.5 vs column min 0.3 -> anchor b, negative a_0
  CHECK(t[1].anchor == AnchorSide::b);
  CHECK(t[1].negative == 0);

  DistanceMatrix flat{4, std::vector<double>(16, 0.7)};
  for (int i = 0; i < 4; ++i) flat.values[i * 4 + i] = kDistanceSentinel;
  for (const auto& m : mine_hardest_in_batch(flat)) {
    CHECK(m.anchor == AnchorSide::a);
    CHECK(m.negative == (m.index == 0 ? 1 : 0));
  }
}

TEST_CASE("mining agrees with the exhaustive oracle") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> size(2, 64), coarse(0, 4);
  std::uniform_real_distribution<double> fine(0.0, 2.0);
  for (int t = 0; t < 60; ++t) {
    const int k = size(rng);
    DistanceMatrix d{k, std::vector<double>(static_cast<std::size_t>(k) * k)};
    const bool ties = t % 2 == 0;
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) d.values[i * k + j] = i == j ? kDistanceSentinel : ties ? 0.25 * coarse(rng) : fine(rng);
    }
    const auto got = mine_hardest_in_batch(d);
    const auto want = oracle_mining(d);
    REQUIRE(got.size() == want.size());
    for (int i = 0; i < k; ++i) {
      CHECK(got[i].anchor == want[i].anchor);
      CHECK(got[i].index == want[i].index);
      CHECK(got[i].negative == want[i].negative);
      CHECK(got[i].negative_distance == want[i].negative_distance);
    }
  }
}

TEST_CASE("margin loss terms") {
  const std::vector<double> pos = {0.0, 0.5}, neg = {1.2, 0.5};
  const auto t = triplet_margin_loss(pos, neg, 1.0, 2);
  CHECK(t.loss == doctest::Approx(0.0 + 1.0));
  CHECK(t.active == 1);
  CHECK(t.d_pos[0] == 0.0);
  CHECK(t.d_pos[1] == doctest::Approx(2 * 0.5));
  CHECK(t.d_neg[1] == doctest::Approx(-2 * 0.5));
  const auto linear = triplet_margin_loss(pos, neg, 1.0, 1);
  CHECK(linear.loss == doctest::Approx(1.0));
  CHECK(linear.d_pos[1] == 1.0);
}

TEST_CASE("identical positives with far negatives cost at most the margin per item") {
  std::mt19937_64 rng(4);
  const auto a = random_unit_rows(16, 32, rng);
  const auto r = triplet_loss<double>(a, a);
  CHECK(r.loss <= 16.0);
  for (const auto& tr : r.triplets) CHECK(tr.negative_distance > 0.0);
}

TEST_CASE("loss gradient matches finite differences") {
  std::mt19937_64 rng(21);
  auto fa = random_unit_rows(8, 12, rng);
  auto fb = random_unit_rows(8, 12, rng);
  const TripletLossConfig cfg{};
  const auto r = triplet_loss(fa, fb, cfg);
  REQUIRE(r.active > 0);
  std::vector<Probe> probes;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 12; ++j) {
      probes.push_back({&fa(i, j), r.grad_a(i, j), "a"});
      probes.push_back({&fb(i, j), r.grad_b(i, j), "b"});
    }
  }
  std::uint64_t regime = 0;
  auto objective = [&] {
    const auto q = triplet_loss(fa, fb, cfg);
    regime = static_cast<std::uint64_t>(q.active);
    for (const auto& t : q.triplets) regime = regime * 1000003 + t.negative * 2 + (t.anchor == AnchorSide::b);
    return q.loss;
  };
  objective();
  GradCheckOptions opts;
  opts.probes = 1000;
  const auto rep = finite_diff_check(probes, objective, opts, [&] { return regime; });
  CHECK(rep.probes > 150);
  CHECK(rep.max_relative_error < 1e-4);
}
