#include "lpdesc/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "lpdesc/error.hpp"

namespace lpdesc {

namespace {

bool inside(const Image& img, double x, double y) {
  return x >= 0.0 && y >= 0.0 && x <= img.width() - 1 && y <= img.height() - 1;
}

float nearest(const Image& img, double x, double y) {
  const int xi = std::clamp(static_cast<int>(std::lround(x)), 0, img.width() - 1);
  const int yi = std::clamp(static_cast<int>(std::lround(y)), 0, img.height() - 1);
  return img(yi, xi);
}

bool hidden(const std::optional<Image>& mask, double x, double y) {
  return mask && !mask->empty() && inside(*mask, x, y) && nearest(*mask, x, y) > 0.5f;
}

double focal(const Eigen::Matrix3d& k) { return 0.5 * (k(0, 0) + k(1, 1)); }

Projection project_homography(const Keypoint& kp, const Eigen::Matrix3d& h) {
  Projection out;
  const Eigen::Vector3d p = h * Eigen::Vector3d(kp.x, kp.y, 1.0);
  if (!(p.z() > 0.0)) return out;
  out.x = p.x() / p.z();
  out.y = p.y() / p.z();
  Eigen::Matrix2d j;
  j << h(0, 0) - out.x * h(2, 0), h(0, 1) - out.x * h(2, 1),
       h(1, 0) - out.y * h(2, 0), h(1, 1) - out.y * h(2, 1);
  j /= p.z();
  out.scale = kp.sigma * std::sqrt(std::abs(j.determinant()));
  const Eigen::Vector2d d = j * Eigen::Vector2d(std::cos(kp.theta), std::sin(kp.theta));
  out.theta = normalize_angle(std::atan2(d.y(), d.x()));
  out.in_range = true;
  return out;
}

struct DepthView {
  const Image* src_depth;
  const Image* dst_depth;
  Eigen::Matrix3d k_src, k_dst, rotation;
  Eigen::Vector3d translation;
};

Projection project_depth(const Keypoint& kp, const DepthView& v, double tolerance) {
  Projection out;
  const double d = nearest(*v.src_depth, kp.x, kp.y);
  if (!(d > 0.0)) {
    out.occluded = true;
    return out;
  }
  const Eigen::Matrix3d k_inv = v.k_src.inverse();
  auto warp = [&](double x, double y, double& z) {
    const Eigen::Vector3d y3 = v.rotation * (d * (k_inv * Eigen::Vector3d(x, y, 1.0))) + v.translation;
    z = y3.z();
    const Eigen::Vector3d p = v.k_dst * y3;
    return Eigen::Vector2d(p.x() / p.z(), p.y() / p.z());
  };
  double z = 0.0;
  const Eigen::Vector2d p = warp(kp.x, kp.y, z);
  if (!(z > 0.0)) return out;
  out.x = p.x();
  out.y = p.y();
  out.scale = kp.sigma * (focal(v.k_dst) / focal(v.k_src)) * (d / z);
  double z2 = 0.0;
  const Eigen::Vector2d q = warp(kp.x + std::cos(kp.theta), kp.y + std::sin(kp.theta), z2);
  out.theta = normalize_angle(std::atan2(q.y() - p.y(), q.x() - p.x()));
  out.in_range = true;
  if (inside(*v.dst_depth, out.x, out.y)) {
    const double seen = nearest(*v.dst_depth, out.x, out.y);
    if (!(seen > 0.0) || std::abs(seen - z) > tolerance * z) out.occluded = true;
  }
  return out;
}

double dist(double ax, double ay, double bx, double by) { return std::hypot(ax - bx, ay - by); }

}  // namespace

Projection project_keypoint(const Keypoint& kp, const ViewPair& pair, Direction direction) {
  const bool forward = direction == Direction::a_to_b;
  const Image& src = forward ? pair.image_a : pair.image_b;
  const Image& dst = forward ? pair.image_b : pair.image_a;
  if (!inside(src, kp.x, kp.y)) {
    throw ValidationError("project_keypoint: keypoint (" + std::to_string(kp.x) + ", " +
                          std::to_string(kp.y) + ") lies outside its image");
  }
  Projection out;
  if (const auto* hom = std::get_if<Homography>(&pair.mapping)) {
    out = project_homography(kp, forward ? hom->h : Eigen::Matrix3d(hom->h.inverse()));
  } else {
    const auto& dm = std::get<DepthMapping>(pair.mapping);
    DepthView v;
    if (forward) {
      v = {&dm.depth_a, &dm.depth_b, dm.k_a, dm.k_b, dm.rotation, dm.translation};
    } else {
      const Eigen::Matrix3d rt = dm.rotation.transpose();
      v = {&dm.depth_b, &dm.depth_a, dm.k_b, dm.k_a, rt, -rt * dm.translation};
    }
    out = project_depth(kp, v, dm.depth_tolerance);
  }
  if (out.in_range && !inside(dst, out.x, out.y)) out.in_range = false;
  const auto& src_mask = forward ? pair.mask_a : pair.mask_b;
  const auto& dst_mask = forward ? pair.mask_b : pair.mask_a;
  if (hidden(src_mask, kp.x, kp.y)) out.occluded = true;
  if (out.in_range && hidden(dst_mask, out.x, out.y)) out.occluded = true;
  return out;
}

void validate(const FilterConfig& cfg) {
  if (!(cfg.projection_tol > 0.0)) throw ValidationError("projection_tol must be positive");
  if (!(cfg.orientation_tol > 0.0)) throw ValidationError("orientation_tol must be positive");
  if (!(cfg.min_separation > 0.0)) throw ValidationError("min_separation must be positive");
  if (!(cfg.distractor_exclusion > 0.0)) {
    throw ValidationError("distractor_exclusion must be positive");
  }
}

std::string_view to_string(Provenance p) {
  return p == Provenance::synthetic ? "synthetic" : "depth-projected";
}

Provenance parse_provenance(std::string_view text) {
  if (text == "synthetic") return Provenance::synthetic;
  if (text == "depth-projected") return Provenance::depth_projected;
  throw ValidationError("unknown provenance '" + std::string(text) + "'");
}

CorrespondenceSet build_correspondences(const ViewPair& pair, const FilterConfig& cfg,
                                        FilterStats* stats) {
  validate(cfg);
  FilterStats local;
  FilterStats& st = stats != nullptr ? *stats : local;
  st = {};

  struct Candidate {
    std::size_t a, b;
    double residual;
    Projection proj;
  };

  // (1) projection + nearest neighbour within tolerance
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < pair.keypoints_a.size(); ++i) {
    const Keypoint& ka = pair.keypoints_a[i];
    const Projection p = project_keypoint(ka, pair, Direction::a_to_b);
    if (!p.in_range) continue;
    ++st.projected;
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t j = 0; j < pair.keypoints_b.size(); ++j) {
      const double d = dist(p.x, p.y, pair.keypoints_b[j].x, pair.keypoints_b[j].y);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best_d <= cfg.projection_tol) cands.push_back({i, best, best_d, p});
  }
  st.matched = static_cast<int>(cands.size());

  // (2) bijective: one a per b, smallest residual then lowest a index
  std::vector<long> owner(pair.keypoints_b.size(), -1);
  for (std::size_t c = 0; c < cands.size(); ++c) {
    long& o = owner[cands[c].b];
    if (o < 0 || cands[c].residual < cands[static_cast<std::size_t>(o)].residual) {
      o = static_cast<long>(c);
    }
  }
  std::vector<Candidate> kept;
  for (std::size_t c = 0; c < cands.size(); ++c) {
    if (owner[cands[c].b] == static_cast<long>(c)) kept.push_back(cands[c]);
  }
  st.after_bijective = static_cast<int>(kept.size());

  // (3) cycle: the matched b keypoint must project back onto its a keypoint
  std::erase_if(kept, [&](const Candidate& c) {
    const Keypoint& ka = pair.keypoints_a[c.a];
    const Projection back = project_keypoint(pair.keypoints_b[c.b], pair, Direction::b_to_a);
    return !back.in_range || dist(back.x, back.y, ka.x, ka.y) > cfg.projection_tol;
  });
  st.after_cycle = static_cast<int>(kept.size());

  // (4) occlusion
  std::erase_if(kept, [](const Candidate& c) { return c.proj.occluded; });
  st.after_occlusion = static_cast<int>(kept.size());

  // (5) orientation against the ground-truth rotation
  std::erase_if(kept, [&](const Candidate& c) {
    const double ta = pair.keypoints_a[c.a].theta;
    const double res = orientation_residual_deg(ta, pair.keypoints_b[c.b].theta, c.proj.theta - ta);
    return res > cfg.orientation_tol;
  });
  st.after_orientation = static_cast<int>(kept.size());

  // (6) drop pairs with an endpoint too close to another retained endpoint
  std::vector<bool> crowded(kept.size(), false);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      const Keypoint& ai = pair.keypoints_a[kept[i].a];
      const Keypoint& aj = pair.keypoints_a[kept[j].a];
      const Keypoint& bi = pair.keypoints_b[kept[i].b];
      const Keypoint& bj = pair.keypoints_b[kept[j].b];
      if (dist(ai.x, ai.y, aj.x, aj.y) < cfg.min_separation ||
          dist(bi.x, bi.y, bj.x, bj.y) < cfg.min_separation) {
        crowded[i] = crowded[j] = true;
      }
    }
  }

  CorrespondenceSet out;
  out.provenance = std::holds_alternative<Homography>(pair.mapping) ? Provenance::synthetic
                                                                    : Provenance::depth_projected;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (crowded[i]) continue;
    const Candidate& c = kept[i];
    const Keypoint& ka = pair.keypoints_a[c.a];
    const Keypoint& kb = pair.keypoints_b[c.b];
    Correspondence rec;
    rec.idx_a = c.a;
    rec.idx_b = c.b;
    rec.scale_ratio = scale_ratio(c.proj.scale, kb.sigma);
    rec.orientation_residual_deg = orientation_residual_deg(ka.theta, kb.theta, c.proj.theta - ka.theta);
    out.items.push_back(rec);
  }
  st.after_separation = static_cast<int>(out.items.size());
  return out;
}

std::vector<std::string> audit_correspondences(const CorrespondenceSet& set, const ViewPair& pair,
                                               const FilterConfig& cfg) {
  std::vector<std::string> issues;
  std::vector<int> seen_a(pair.keypoints_a.size(), 0);
  std::vector<int> seen_b(pair.keypoints_b.size(), 0);
  for (std::size_t n = 0; n < set.items.size(); ++n) {
    const Correspondence& c = set.items[n];
    const std::string where = "record " + std::to_string(n) + ": ";
    if (c.idx_a >= pair.keypoints_a.size() || c.idx_b >= pair.keypoints_b.size()) {
      issues.push_back(where + "index out of range");
      continue;
    }
    if (++seen_a[c.idx_a] > 1) issues.push_back(where + "keypoint a reused");
    if (++seen_b[c.idx_b] > 1) issues.push_back(where + "keypoint b reused");
    if (!(c.scale_ratio >= 1.0)) issues.push_back(where + "scale ratio below 1");
    if (!(c.orientation_residual_deg >= 0.0 && c.orientation_residual_deg <= cfg.orientation_tol)) {
      issues.push_back(where + "orientation residual outside tolerance");
    }
    const Keypoint& ka = pair.keypoints_a[c.idx_a];
    const Keypoint& kb = pair.keypoints_b[c.idx_b];
    const Projection fwd = project_keypoint(ka, pair, Direction::a_to_b);
    if (!fwd.in_range || dist(fwd.x, fwd.y, kb.x, kb.y) > cfg.projection_tol) {
      issues.push_back(where + "projection residual above tolerance");
    }
    const Projection back = project_keypoint(kb, pair, Direction::b_to_a);
    if (!back.in_range || dist(back.x, back.y, ka.x, ka.y) > cfg.projection_tol) {
      issues.push_back(where + "cycle residual above tolerance");
    }
    if (fwd.occluded) issues.push_back(where + "occluded");
  }
  return issues;
}

Keypoint jitter_orientation(const Keypoint& kp, std::mt19937_64& rng, double std_degrees) {
  if (std_degrees < 0.0) throw ValidationError("jitter std must be non-negative");
  if (std_degrees == 0.0) return kp;
  std::normal_distribution<double> normal(0.0, std_degrees * std::numbers::pi / 180.0);
  Keypoint out = kp;
  out.theta = normalize_angle(kp.theta + normal(rng));
  return out;
}

TrainingSource make_training_source(std::string name, ViewPair pair, CorrespondenceSet set,
                                    double support, std::mt19937_64& rng, std::size_t cap) {
  TrainingSource src;
  src.name = std::move(name);
  if (set.items.size() > cap) {
    std::shuffle(set.items.begin(), set.items.end(), rng);
    set.items.resize(cap);
    std::sort(set.items.begin(), set.items.end(),
              [](const Correspondence& x, const Correspondence& y) { return x.idx_a < y.idx_a; });
  }
  const int limit = std::min({pair.image_a.height(), pair.image_a.width(), pair.image_b.height(),
                              pair.image_b.width()}) - 1;
  src.pad = std::clamp(static_cast<int>(std::ceil(support)), 0, limit);
  src.padded_a = mirror_pad(pair.image_a, src.pad);
  src.padded_b = mirror_pad(pair.image_b, src.pad);
  src.pair = std::move(pair);
  src.set = std::move(set);
  return src;
}

void validate_batch(const PatchPairBatch& batch) {
  if (batch.a.size() != batch.b.size() || batch.a.size() != batch.point_ids.size()) {
    throw ValidationError("batch sides differ in size");
  }
  std::vector<std::uint64_t> ids = batch.point_ids;
  std::sort(ids.begin(), ids.end());
  const auto dup = std::adjacent_find(ids.begin(), ids.end());
  if (dup != ids.end()) {
    throw ValidationError("batch repeats 3D point " + std::to_string(*dup));
  }
}

std::vector<int> batch_shares(std::span<const std::size_t> available, int batch_size) {
  if (batch_size < 2) throw ValidationError("batch size must be at least 2");
  std::vector<int> shares(available.size(), 0);
  std::vector<std::size_t> live;
  std::size_t total = 0;
  for (std::size_t i = 0; i < available.size(); ++i) {
    if (available[i] > 0) live.push_back(i);
    total += available[i];
  }
  if (live.empty()) throw ValidationError("every source is empty");
  if (total < static_cast<std::size_t>(batch_size)) {
    throw ValidationError("only " + std::to_string(total) + " correspondences for a batch of " +
                          std::to_string(batch_size));
  }
  const int n = static_cast<int>(live.size());
  for (int r = 0; r < n; ++r) {
    shares[live[static_cast<std::size_t>(r)]] = batch_size / n + (r < batch_size % n ? 1 : 0);
  }
  int deficit = 0;
  for (std::size_t i : live) {
    const int cap = static_cast<int>(std::min<std::size_t>(available[i], static_cast<std::size_t>(batch_size)));
    if (shares[i] > cap) {
      deficit += shares[i] - cap;
      shares[i] = cap;
    }
  }
  for (std::size_t r = 0; deficit > 0; r = (r + 1) % live.size()) {
    const std::size_t i = live[r];
    if (static_cast<std::size_t>(shares[i]) < available[i]) {
      ++shares[i];
      --deficit;
    }
  }
  return shares;
}

std::vector<Patch> extract_patches(const Image& img, std::span<const Keypoint> keypoints,
                                   const GridSpec& grid) {
  std::vector<Patch> out;
  out.reserve(keypoints.size());
  for (const Keypoint& kp : keypoints) out.push_back(extract_patch(img, make_grid(kp, grid)));
  return out;
}

PatchPairBatch assemble_batch(std::span<const TrainingSource> sources, const BatchOptions& options,
                              std::mt19937_64& rng) {
  PatchPairBatch batch;
  std::vector<std::size_t> available;
  for (const TrainingSource& s : sources) {
    available.push_back(s.set.items.size());
    if (s.set.items.empty()) batch.warnings.push_back("source '" + s.name + "' has no correspondences; skipped");
  }
  const std::vector<int> shares = batch_shares(available, options.batch_size);
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const TrainingSource& src = sources[s];
    // partial Fisher-Yates: the first share entries are a uniform sample
    std::vector<std::size_t> order(src.set.items.size());
    std::iota(order.begin(), order.end(), 0);
    for (int k = 0; k < shares[s]; ++k) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k), order.size() - 1);
      std::swap(order[static_cast<std::size_t>(k)], order[pick(rng)]);
    }
    for (int k = 0; k < shares[s]; ++k) {
      const std::size_t ci = order[static_cast<std::size_t>(k)];
      const Correspondence& c = src.set.items[ci];
      const Keypoint ka =
          jitter_orientation(src.pair.keypoints_a[c.idx_a], rng, options.jitter_std_deg);
      const Keypoint& kb = src.pair.keypoints_b[c.idx_b];
      batch.a.push_back(extract_patch(src.padded_a, make_grid(ka, options.grid), src.pad));
      batch.b.push_back(extract_patch(src.padded_b, make_grid(kb, options.grid), src.pad));
      batch.point_ids.push_back((static_cast<std::uint64_t>(s) << 32) | c.idx_a);
      batch.scale_ratios.push_back(c.scale_ratio);
    }
  }
  validate_batch(batch);
  return batch;
}

}  // namespace lpdesc
