#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "lpdesc/error.hpp"
#include "lpdesc/eval.hpp"

using namespace lpdesc;
namespace fs = std::filesystem;

namespace {

// Brute-force oracle: try every positive distance as a threshold, keep the
// smallest one that admits at least 95% of positives.
double fpr95_oracle(const std::vector<double>& pos, const std::vector<double>& neg) {
  double best = INFINITY;
  for (double t : pos) {
    const auto admitted = std::count_if(pos.begin(), pos.end(), [t](double p) { return p <= t; });
    if (100 * admitted >= 95 * static_cast<long>(pos.size())) best = std::min(best, t);
  }
  const auto fp = std::count_if(neg.begin(), neg.end(), [best](double n) { return n <= best; });
  return static_cast<double>(fp) / static_cast<double>(neg.size());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("fpr95 rank") {
  CHECK(fpr95_rank(1) == 1);
  CHECK(fpr95_rank(20) == 19);
  CHECK(fpr95_rank(21) == 20);
  CHECK(fpr95_rank(100) == 95);
  CHECK(fpr95_rank(101) == 96);
}

TEST_CASE("fpr95 fixtures") {
  CHECK(fpr95(std::vector<double>{0.1}, std::vector<double>{0.9}) == 0.0);

  std::vector<double> pos, neg;
  for (int i = 1; i <= 20; ++i) pos.push_back(i);
  neg = {1.5, 10.0, 18.5, 19.5, 20.0, 25.0, 30.0, 31.0, 40.0, 50.0};
  CHECK(fpr95(pos, neg) == 0.3);

  // Positives and negatives from the same distribution.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(10000), n(10000);
  for (auto& v : p) v = u(rng);
  for (auto& v : n) v = u(rng);
  CHECK(std::abs(fpr95(p, n) - 0.95) < 0.02);

  CHECK_THROWS_AS(fpr95(std::vector<double>{}, neg), ValidationError);
  CHECK_THROWS_AS(fpr95(pos, std::vector<double>{}), ValidationError);
  CHECK_THROWS_AS(fpr95(std::vector<double>{-1.0}, neg), ValidationError);
}

TEST_CASE("fpr95 against the brute-force oracle") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 100; ++t) {
    std::uniform_int_distribution<int> size(1, 60);
    std::uniform_int_distribution<int> level(0, 9);  // coarse values force ties
    std::vector<double> pos(static_cast<std::size_t>(size(rng)));
    std::vector<double> neg(static_cast<std::size_t>(size(rng)));
    for (auto& v : pos) v = 0.1 * level(rng);
    for (auto& v : neg) v = 0.1 * level(rng) + 0.05 * (t % 2);
    CHECK(fpr95(pos, neg) == fpr95_oracle(pos, neg));
  }
}

TEST_CASE("binned fpr95") {
  MatchScores s;
  for (int i = 0; i < 25; ++i) s.positives.push_back({0.1 * i, 3.0, 7.0});
  s.positives.push_back({0.2, 1.1, 1.0});
  s.positives.push_back({0.2, 5.0, 1.0});  // outside the grid
  s.negatives = {0.05, 1.0, 3.0};
  const BinGrid g = binned_fpr95(s, BinGrid{});
  REQUIRE(g.cells.size() == 20);
  CHECK(g.outside == 1);
  const BinCell& big = g.cell(3, 1);
  CHECK(big.scale_lo == 2.0);
  CHECK(big.scale_hi == 4.0);
  CHECK(big.count == 25);
  CHECK_FALSE(big.low_confidence);
  REQUIRE(big.fpr95.has_value());
  std::vector<double> sub;
  for (int i = 0; i < 25; ++i) sub.push_back(0.1 * i);
  CHECK(*big.fpr95 == fpr95_oracle(sub, s.negatives));
  CHECK(g.cell(0, 0).count == 1);
  CHECK(g.cell(0, 0).low_confidence);
  int empty = 0;
  for (const auto& c : g.cells) {
    if (c.count == 0) {
      ++empty;
      CHECK_FALSE(c.fpr95.has_value());
    }
  }
  CHECK(empty == 18);

  const std::vector<double> edges{1.0, 2.0, 4.0};
  CHECK(bin_index(edges, 1.0) == 0);
  CHECK(bin_index(edges, 2.0) == 1);
  CHECK(bin_index(edges, 4.0) == 1);
  CHECK(bin_index(edges, 4.01) == -1);
  CHECK(bin_index(edges, 0.99) == -1);

  CHECK(scale_band_fpr95(s, 2.0, 4.0).has_value());
  CHECK_FALSE(scale_band_fpr95(s, 8.0, 9.0).has_value());

  BinGrid bad;
  bad.scale_edges = {1.0, 1.0};
  CHECK_THROWS_AS(binned_fpr95(s, bad), ValidationError);
}

TEST_CASE("retrieval ranks") {
  const std::vector<float> q{0, 0};
  const std::vector<float> m{1, 0};
  CHECK(retrieval_ranks(q, m, std::vector<float>{3, 0, 0, 2}, 2) == std::vector<int>{1});
  // A distractor at exactly the true distance counts against the query.
  CHECK(retrieval_ranks(q, m, std::vector<float>{0, 1, 5, 5}, 2) == std::vector<int>{2});
  // Other queries' matches are candidates too.
  const std::vector<float> q2{0, 0, 10, 0};
  const std::vector<float> m2{2, 0, 0.5f, 0};
  CHECK(retrieval_ranks(q2, m2, {}, 2) == std::vector<int>{2, 2});
  CHECK_THROWS_AS(retrieval_ranks(q2, m, {}, 2), ValidationError);

  std::mt19937_64 rng(13);
  std::normal_distribution<float> n(0.0f, 1.0f);
  double total = 0.0;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    std::vector<float> qq(8), mm(8), dd(99 * 8);
    for (auto& v : qq) v = n(rng);
    for (auto& v : mm) v = n(rng);
    for (auto& v : dd) v = n(rng);
    total += retrieval_ranks(qq, mm, dd, 8)[0];
  }
  CHECK(std::abs(total / trials - 50.5) < 0.1 * 50.5);
}

TEST_CASE("rank summary") {
  const std::vector<int> ranks{1, 1, 2, 4};
  const RankSummary s = summarize_ranks(ranks);
  CHECK(s.cdf == std::vector<double>{0.5, 0.75, 0.75, 1.0});
  CHECK(s.rank1 == 0.5);
  CHECK(s.mean_rank == 2.0);
  CHECK_THROWS_AS(summarize_ranks(std::vector<int>{0}), ValidationError);
}

TEST_CASE("distractor selection") {
  const std::vector<Keypoint> kps{make_keypoint(0, 0, 1, 0), make_keypoint(3, 0, 1, 0),
                                  make_keypoint(3.01, 0, 1, 0), make_keypoint(10, 10, 1, 0)};
  const std::vector<Keypoint> ends{make_keypoint(0, 0, 1, 0)};
  CHECK(select_distractors(kps, ends, 3.0) == std::vector<std::size_t>{2, 3});
}

TEST_CASE("scoring correspondences") {
  DescriptorFile a, b;
  a.dim = b.dim = 2;
  a.values = {0, 0, 1, 0, 2, 0};
  b.values = {0, 1, 1, 1, 2, 1};
  const std::vector<Correspondence> items{{0, 0, 1.0, 0.0}, {1, 1, 2.0, 3.0}, {2, 2, 1.5, 1.0}};
  std::mt19937_64 rng(14);
  const MatchScores s = score_correspondences(a, b, items, 4, rng);
  REQUIRE(s.positives.size() == 3);
  for (const auto& p : s.positives) CHECK(p.distance == doctest::Approx(1.0));
  CHECK(s.positives[1].scale_ratio == 2.0);
  REQUIRE(s.negatives.size() == 12);
  for (double d : s.negatives) CHECK(d > 1.1);
  const std::vector<Correspondence> beyond{{5, 0, 1.0, 0.0}};
  CHECK_THROWS_AS(score_correspondences(a, b, beyond, 1, rng), ValidationError);
}

TEST_CASE("csv outputs") {
  const fs::path dir = fs::temp_directory_path() / "lpdesc_unit_csv";
  fs::create_directories(dir);
  const std::vector<MetricRow> rows{{"net", GridKind::logpolar, 96.0, 0.25, 40, 400}};
  write_metrics_csv(dir / "m.csv", rows);
  CHECK(slurp(dir / "m.csv") == "method,grid_kind,lambda,fpr95,positives,negatives\nnet,logpolar,96,0.25,40,400\n");

  MatchScores s;
  s.positives.push_back({0.1, 1.0, 0.0});
  s.negatives = {0.5};
  write_bins_csv(dir / "b.csv", binned_fpr95(s, BinGrid{}));
  const std::string bins = slurp(dir / "b.csv");
  CHECK(std::count(bins.begin(), bins.end(), '\n') == 21);
  CHECK(bins.find("empty") != std::string::npos);

  write_ranks_csv(dir / "r.csv", summarize_ranks(std::vector<int>{1, 2}));
  CHECK(slurp(dir / "r.csv").find("1,0.5") != std::string::npos);
  fs::remove_all(dir);
}
