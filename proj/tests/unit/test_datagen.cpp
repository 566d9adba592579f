#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "lpdesc/datagen.hpp"
#include "lpdesc/error.hpp"
#include "lpdesc/eval.hpp"

using namespace lpdesc;
namespace fs = std::filesystem;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

ViewPair blank_pair(const Eigen::Matrix3d& h, int size = 100) {
  ViewPair p;
  p.image_a = Image(size, size, 0.5f);
  p.image_b = Image(size, size, 0.5f);
  p.mapping = Homography{h};
  return p;
}

Eigen::Matrix3d scaling(double s) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  h(0, 0) = h(1, 1) = s;
  return h;
}

Image smooth_texture(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TextureOptions t;
  t.height = t.width = size;
  t.blobs = static_cast<int>(600.0 * size * size / (256.0 * 256.0));
  return gaussian_texture(t, rng);
}

void check_same_items(const CorrespondenceSet& got, const CorrespondenceSet& want) {
  REQUIRE(got.items.size() == want.items.size());
  for (std::size_t i = 0; i < got.items.size(); ++i) {
    CHECK(got.items[i].idx_a == want.items[i].idx_a);
    CHECK(got.items[i].idx_b == want.items[i].idx_b);
    CHECK(got.items[i].scale_ratio == doctest::Approx(want.items[i].scale_ratio));
    CHECK(got.items[i].orientation_residual_deg ==
          doctest::Approx(want.items[i].orientation_residual_deg).scale(1.0));
  }
}

}  // namespace

TEST_CASE("keypoint projection") {
  const ViewPair id = blank_pair(Eigen::Matrix3d::Identity());
  const Keypoint kp = make_keypoint(10.5, 20.25, 1.7, 0.4);
  const Projection p = project_keypoint(kp, id, Direction::a_to_b);
  CHECK(p.in_range);
  CHECK(p.x == doctest::Approx(10.5));
  CHECK(p.y == doctest::Approx(20.25));
  CHECK(p.scale == doctest::Approx(1.7));
  CHECK(p.theta == doctest::Approx(0.4));

  const ViewPair twice = blank_pair(scaling(2.0));
  const Projection q = project_keypoint(make_keypoint(10, 20, 1.5, 0.0), twice, Direction::a_to_b);
  CHECK(q.x == doctest::Approx(20.0));
  CHECK(q.y == doctest::Approx(40.0));
  CHECK(q.scale == doctest::Approx(3.0));
  const Projection back = project_keypoint(make_keypoint(20, 40, 3.0, 0.0), twice, Direction::b_to_a);
  CHECK(back.x == doctest::Approx(10.0));
  CHECK(back.scale == doctest::Approx(1.5));

  ViewPair masked = blank_pair(Eigen::Matrix3d::Identity());
  masked.mask_b = Image(100, 100);
  (*masked.mask_b)(30, 30) = 1.0f;
  CHECK(project_keypoint(make_keypoint(30, 30, 1, 0), masked, Direction::a_to_b).occluded);
  CHECK_FALSE(project_keypoint(make_keypoint(40, 30, 1, 0), masked, Direction::a_to_b).occluded);
  CHECK_THROWS_AS(project_keypoint(make_keypoint(140, 30, 1, 0), masked, Direction::a_to_b), ValidationError);
}

TEST_CASE("depth projection") {
  ViewPair p;
  p.image_a = p.image_b = Image(64, 64, 0.5f);
  DepthMapping dm;
  dm.depth_a = Image(64, 64, 4.0f);
  dm.depth_b = Image(64, 64, 2.0f);
  dm.k_a << 50, 0, 32, 0, 50, 32, 0, 0, 1;
  dm.k_b = dm.k_a;
  dm.translation = Eigen::Vector3d(0, 0, -2);  // camera b moved halfway towards the plane
  p.mapping = dm;
  // A point at the principal point stays there and appears twice as large.
  const Projection q = project_keypoint(make_keypoint(32, 32, 1.5, 0.3), p, Direction::a_to_b);
  CHECK(q.in_range);
  CHECK_FALSE(q.occluded);
  CHECK(q.x == doctest::Approx(32.0));
  CHECK(q.scale == doctest::Approx(3.0));
  CHECK(q.theta == doctest::Approx(0.3));
  // Off-axis: x = 32 + 10 at depth 4 -> X = 0.8, seen at 32 + 50 * 0.8 / 2.
  const Projection r = project_keypoint(make_keypoint(42, 32, 1.5, 0.0), p, Direction::a_to_b);
  CHECK(r.x == doctest::Approx(52.0));

  // Depth disagreement beyond 5% counts as occlusion.
  std::get<DepthMapping>(p.mapping).depth_b = Image(64, 64, 2.2f);
  CHECK(project_keypoint(make_keypoint(32, 32, 1.5, 0.0), p, Direction::a_to_b).occluded);
  std::get<DepthMapping>(p.mapping).depth_b = Image(64, 64, 2.08f);
  CHECK_FALSE(project_keypoint(make_keypoint(32, 32, 1.5, 0.0), p, Direction::a_to_b).occluded);
  std::get<DepthMapping>(p.mapping).depth_a(32, 32) = -1.0f;
  CHECK(project_keypoint(make_keypoint(32, 32, 1.5, 0.0), p, Direction::a_to_b).occluded);
}

TEST_CASE("correspondence filters") {
  FilterStats st;
  SUBCASE("bijectivity keeps the smaller residual") {
    ViewPair p = blank_pair(Eigen::Matrix3d::Identity());
    p.keypoints_a = {make_keypoint(50.0, 50.0, 2, 0), make_keypoint(50.0, 50.8, 2, 0)};
    p.keypoints_b = {make_keypoint(50.0, 50.6, 2, 0)};
    const auto set = build_correspondences(p, FilterConfig{}, &st);
    REQUIRE(set.items.size() == 1);
    CHECK(set.items[0].idx_a == 1);
    CHECK(st.matched == 2);
    CHECK(st.after_bijective == 1);
  }
  SUBCASE("projection tolerance is inclusive") {
    ViewPair p = blank_pair(Eigen::Matrix3d::Identity());
    p.keypoints_a = {make_keypoint(20.0, 20.0, 2, 0), make_keypoint(60.0, 60.0, 2, 0)};
    p.keypoints_b = {make_keypoint(21.5, 20.0, 2, 0), make_keypoint(61.6, 60.0, 2, 0)};
    const auto set = build_correspondences(p, FilterConfig{}, &st);
    REQUIRE(set.items.size() == 1);
    CHECK(set.items[0].idx_a == 0);
  }
  SUBCASE("orientation residual of 30 degrees is excluded") {
    ViewPair p = blank_pair(Eigen::Matrix3d::Identity());
    p.keypoints_a = {make_keypoint(20, 20, 2, 0), make_keypoint(60, 60, 2, 0)};
    p.keypoints_b = {make_keypoint(20, 20, 2, 30 * kDeg), make_keypoint(60, 60, 2, 24 * kDeg)};
    const auto set = build_correspondences(p, FilterConfig{}, &st);
    REQUIRE(set.items.size() == 1);
    CHECK(set.items[0].idx_a == 1);
    CHECK(set.items[0].orientation_residual_deg == doctest::Approx(24.0));
  }
  SUBCASE("minimum separation is strict") {
    ViewPair p = blank_pair(Eigen::Matrix3d::Identity());
    p.keypoints_a = {make_keypoint(20, 20, 2, 0), make_keypoint(27, 20, 2, 0),
                     make_keypoint(60, 60, 2, 0), make_keypoint(66.9, 60, 2, 0)};
    p.keypoints_b = p.keypoints_a;
    const auto set = build_correspondences(p, FilterConfig{}, &st);
    REQUIRE(set.items.size() == 2);
    CHECK(set.items[0].idx_a == 0);
    CHECK(set.items[1].idx_a == 1);
  }
  SUBCASE("scale ratios follow the homography Jacobian") {
    ViewPair p = blank_pair(scaling(2.0), 200);
    p.keypoints_a = {make_keypoint(30, 30, 1.5, 0.2)};
    p.keypoints_b = {make_keypoint(60, 60, 1.5, 0.2)};
    const auto set = build_correspondences(p, FilterConfig{}, &st);
    REQUIRE(set.items.size() == 1);
    CHECK(set.items[0].scale_ratio == doctest::Approx(2.0));
    CHECK(audit_correspondences(set, p, FilterConfig{}).empty());
  }
  CHECK_THROWS_AS(build_correspondences(blank_pair(Eigen::Matrix3d::Identity()), FilterConfig{0.0}),
                  ValidationError);
}

TEST_CASE("audit catches tampered records") {
  ViewPair p = blank_pair(Eigen::Matrix3d::Identity());
  p.keypoints_a = {make_keypoint(20, 20, 2, 0), make_keypoint(60, 60, 2, 0)};
  p.keypoints_b = p.keypoints_a;
  auto set = build_correspondences(p, FilterConfig{});
  REQUIRE(set.items.size() == 2);
  set.items[1].idx_b = 0;
  CHECK_FALSE(audit_correspondences(set, p, FilterConfig{}).empty());
}

TEST_CASE("identity synthesis reproduces view a") {
  std::mt19937_64 rng(5);
  const Image base = smooth_texture(96, 1);
  SynthOptions o;
  o.keypoints = 40;
  const auto sp = synth_pair(base, centered_similarity(96, 96, 1.0, 0.0), 0.0, rng, o);
  CHECK(sp.pair.image_b == sp.pair.image_a);
  REQUIRE(!sp.planted.items.empty());
  for (const auto& c : sp.planted.items) CHECK(c.scale_ratio == doctest::Approx(1.0));
  check_same_items(build_correspondences(sp.pair, FilterConfig{}), sp.planted);
}

TEST_CASE("un-updated keypoint scales carry the transform scale") {
  std::mt19937_64 rng(6);
  const Image base = smooth_texture(160, 2);
  SynthOptions o;
  o.keypoints = 60;
  o.detector.update_attributes = false;
  const auto sp = synth_pair(base, centered_similarity(160, 160, 2.0, 0.0), 0.0, rng, o);
  REQUIRE(sp.planted.items.size() > 5);
  for (const auto& c : sp.planted.items) CHECK(c.scale_ratio == doctest::Approx(2.0));
  check_same_items(build_correspondences(sp.pair, FilterConfig{}), sp.planted);

  const auto tri = synth_pair(base, centered_similarity(160, 160, 3.0, 10 * kDeg), 0.0, rng, o);
  MatchScores scores;
  for (const auto& c : build_correspondences(tri.pair, FilterConfig{}).items) {
    scores.positives.push_back({0.1, c.scale_ratio, c.orientation_residual_deg});
  }
  scores.negatives = {0.5, 0.6};
  REQUIRE(!scores.positives.empty());
  const BinGrid bins = binned_fpr95(scores, BinGrid{});
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 5; ++c) {
      const bool target = r == 3 && (c == 1 || c == 2);
      if (!target) CHECK(bins.cell(r, c).count == 0);
    }
  }
  // Residuals sit at 10 degrees, on the edge between two orientation cells.
  CHECK(bins.cell(3, 1).count + bins.cell(3, 2).count == static_cast<int>(scores.positives.size()));
}

TEST_CASE("synthesis argument checks") {
  std::mt19937_64 rng(7);
  const Image base(64, 64, 0.5f);
  CHECK_THROWS_AS(synth_pair(base, centered_similarity(64, 64, 5.0, 0.0), 0.0, rng), ValidationError);
  CHECK_THROWS_AS(synth_pair(base, centered_similarity(64, 64, 1.0, 30 * kDeg), 0.0, rng), ValidationError);
  SimilarityTransform away{1.0, 0.0, 500.0, 0.0};
  CHECK_THROWS_AS(synth_pair(base, away, 0.0, rng), ValidationError);
}

TEST_CASE("orientation jitter") {
  std::mt19937_64 rng(8);
  const Keypoint kp = make_keypoint(1, 2, 1.5, 2.0);
  CHECK(jitter_orientation(kp, rng, 0.0) == kp);
  double s = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double d = (jitter_orientation(kp, rng, 5.0).theta - kp.theta) / kDeg;
    s += d;
    sq += d * d;
  }
  const double mean = s / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(sd - 5.0) < 0.1);
  const Keypoint edge = make_keypoint(0, 0, 1, 2 * std::numbers::pi - 1e-9);
  for (int i = 0; i < 100; ++i) {
    const double t = jitter_orientation(edge, rng, 5.0).theta;
    CHECK(t >= 0.0);
    CHECK(t < 2 * std::numbers::pi);
  }
}

TEST_CASE("batch shares") {
  const std::vector<std::size_t> eleven(11, 50);
  CHECK(batch_shares(eleven, 110) == std::vector<int>(11, 10));
  const std::vector<std::size_t> three(3, 50);
  CHECK(batch_shares(three, 10) == std::vector<int>{4, 3, 3});
  const std::vector<std::size_t> short_one = {1, 50, 50};
  CHECK(batch_shares(short_one, 12) == std::vector<int>{1, 6, 5});
  const std::vector<std::size_t> with_empty = {0, 9, 9};
  CHECK(batch_shares(with_empty, 6) == std::vector<int>{0, 3, 3});
  const std::vector<std::size_t> tiny = {2, 2};
  CHECK_THROWS_AS(batch_shares(tiny, 5), ValidationError);
}

TEST_CASE("assembled batches never repeat a point") {
  std::mt19937_64 rng(9);
  const Image base = smooth_texture(128, 3);
  std::vector<TrainingSource> sources;
  for (int i = 0; i < 3; ++i) {
    SynthOptions o;
    o.keypoints = 60;
    auto sp = synth_pair(base, centered_similarity(128, 128, 1.1, 0.1), 0.01, rng, o);
    auto set = build_correspondences(sp.pair, FilterConfig{});
    sources.push_back(make_training_source("s" + std::to_string(i), sp.pair, set, 30.0, rng));
  }
  BatchOptions bo;
  bo.batch_size = 48;
  bo.grid = GridSpec{32, 16.0, GridKind::cartesian};
  for (int t = 0; t < 10; ++t) {
    const auto batch = assemble_batch(sources, bo, rng);
    CHECK(batch.a.size() == 48);
    std::set<std::uint64_t> ids(batch.point_ids.begin(), batch.point_ids.end());
    CHECK(ids.size() == 48);
    CHECK_NOTHROW(validate_batch(batch));
  }
  PatchPairBatch dup;
  dup.a.resize(2);
  dup.b.resize(2);
  dup.point_ids = {3, 3};
  CHECK_THROWS_AS(validate_batch(dup), ValidationError);
}

TEST_CASE("view pair files round trip") {
  std::mt19937_64 rng(10);
  SynthOptions o;
  o.keypoints = 30;
  o.occluders = 3;
  const auto sp = synth_pair(smooth_texture(80, 4), centered_similarity(80, 80, 0.9, 0.05), 0.01, rng, o);
  const fs::path dir = fs::temp_directory_path() / "lpdesc_unit_pair";
  fs::remove_all(dir);
  const auto manifest = write_view_pair(dir, sp.pair, sp.planted);
  const PairManifest m = read_manifest(manifest);
  const ViewPair back = load_view_pair(m);
  CHECK(back.image_a == sp.pair.image_a);
  CHECK(back.image_b == sp.pair.image_b);
  CHECK(back.keypoints_a.size() == sp.pair.keypoints_a.size());
  CHECK(back.mask_b.has_value());
  const auto set = read_correspondences(*m.correspondences);
  CHECK(set.items.size() == sp.planted.items.size());
  CHECK(set.provenance == Provenance::synthetic);
  CHECK(std::get<Homography>(back.mapping).h.isApprox(std::get<Homography>(sp.pair.mapping).h, 1e-12));

  std::ofstream(dir / "bad.txt") << "image_a = a.lpim\nshear = 3\n";
  CHECK_THROWS_AS(read_manifest(dir / "bad.txt"), ValidationError);
  fs::remove_all(dir);
}
