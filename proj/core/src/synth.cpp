#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <Eigen/Dense>

#include "lpdesc/datagen.hpp"
#include "lpdesc/error.hpp"

namespace lpdesc {

namespace {

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

// Buckets points by cell so separation checks stay local.
class PointGrid {
 public:
  explicit PointGrid(double cell) : cell_(cell) {}

  bool clear_of(double x, double y, double radius) const {
    const long cx = cell(x);
    const long cy = cell(y);
    for (long dy = -1; dy <= 1; ++dy) {
      for (long dx = -1; dx <= 1; ++dx) {
        auto it = cells_.find(key(cx + dx, cy + dy));
        if (it == cells_.end()) continue;
        for (const auto& [px, py] : it->second) {
          if (std::hypot(px - x, py - y) < radius) return false;
        }
      }
    }
    return true;
  }

  void add(double x, double y) { cells_[key(cell(x), cell(y))].emplace_back(x, y); }

 private:
  long cell(double v) const { return static_cast<long>(std::floor(v / cell_)); }
  static long long key(long x, long y) { return (static_cast<long long>(x) << 32) ^ (y & 0xffffffffLL); }

  double cell_;
  std::unordered_map<long long, std::vector<std::pair<double, double>>> cells_;
};

struct Disc {
  double x, y, r;
};

// Same nearest-pixel rule the correspondence builder applies to masks.
bool masked(const std::optional<Image>& mask, double x, double y) {
  if (!mask) return false;
  const int xi = std::clamp(static_cast<int>(std::lround(x)), 0, mask->width() - 1);
  const int yi = std::clamp(static_cast<int>(std::lround(y)), 0, mask->height() - 1);
  return (*mask)(yi, xi) > 0.5f;
}

// Pastes clutter into random discs and marks them in the mask.
void add_occluders(Image& view, Image& mask, const SynthOptions& o, std::mt19937_64& rng) {
  if (o.occluders <= 0) return;
  TextureOptions t;
  t.height = view.height();
  t.width = view.width();
  t.blobs = 300;
  const Image clutter = gaussian_texture(t, rng);
  std::uniform_real_distribution<double> ux(0.0, view.width() - 1.0);
  std::uniform_real_distribution<double> uy(0.0, view.height() - 1.0);
  std::uniform_real_distribution<double> ur(o.occluder_min_radius, o.occluder_max_radius);
  for (int i = 0; i < o.occluders; ++i) {
    const Disc d{ux(rng), uy(rng), ur(rng)};
    const int x0 = std::max(0, static_cast<int>(std::floor(d.x - d.r)));
    const int x1 = std::min(view.width() - 1, static_cast<int>(std::ceil(d.x + d.r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(d.y - d.r)));
    const int y1 = std::min(view.height() - 1, static_cast<int>(std::ceil(d.y + d.r)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (std::hypot(x - d.x, y - d.y) <= d.r) {
          view(y, x) = clutter(y, x);
          mask(y, x) = 1.0f;
        }
      }
    }
  }
}

}  // namespace

Image gaussian_texture(const TextureOptions& o, std::mt19937_64& rng) {
  if (o.height < 2 || o.width < 2 || o.blobs < 1 || !(o.min_sigma > 0.0) ||
      !(o.max_sigma >= o.min_sigma) || !(o.max_aspect >= 1.0)) {
    throw ValidationError("gaussian_texture: invalid options");
  }
  std::vector<double> acc(static_cast<std::size_t>(o.height) * o.width, 0.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int n = 0; n < o.blobs; ++n) {
    const double sigma = log_uniform(rng, o.min_sigma, o.max_sigma);
    const double aspect = 1.0 + (o.max_aspect - 1.0) * unit(rng);
    const double angle = std::numbers::pi * unit(rng);
    const double cx = -2.0 * sigma + (o.width + 4.0 * sigma) * unit(rng);
    const double cy = -2.0 * sigma + (o.height + 4.0 * sigma) * unit(rng);
    const double amp = 2.0 * unit(rng) - 1.0;
    const double s_major = sigma * std::sqrt(aspect);
    const double s_minor = sigma / std::sqrt(aspect);
    const double c = std::cos(angle), s = std::sin(angle);
    const double reach = 4.0 * s_major;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
    const int x1 = std::min(o.width - 1, static_cast<int>(std::ceil(cx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
    const int y1 = std::min(o.height - 1, static_cast<int>(std::ceil(cy + reach)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = (c * dx + s * dy) / s_major;
        const double v = (-s * dx + c * dy) / s_minor;
        acc[static_cast<std::size_t>(y) * o.width + x] += amp * std::exp(-0.5 * (u * u + v * v));
      }
    }
  }
  const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
  const double span = *hi - *lo;
  Image img(o.height, o.width);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    img.data()[i] = static_cast<float>(span > 0.0 ? 0.05 + 0.9 * (acc[i] - *lo) / span : 0.5);
  }
  return img;
}

Image gaussian_blur(const Image& img, double sigma) {
  if (!(sigma > 0.0)) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * static_cast<std::size_t>(radius) + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    total += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  }
  for (double& v : k) v /= total;
  const int h = img.height(), w = img.width();
  Image64 tmp(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[static_cast<std::size_t>(i + radius)] * img(y, reflect101(x + i, w));
      tmp(y, x) = s;
    }
  }
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[static_cast<std::size_t>(i + radius)] * tmp(reflect101(y + i, h), x);
      out(y, x) = static_cast<float>(s);
    }
  }
  return out;
}

Eigen::Matrix3d SimilarityTransform::homography() const {
  const double c = scale * std::cos(rotation);
  const double s = scale * std::sin(rotation);
  Eigen::Matrix3d h;
  h << c, -s, tx,
       s, c, ty,
       0.0, 0.0, 1.0;
  return h;
}

SimilarityTransform centered_similarity(int height, int width, double scale, double rotation) {
  const double cx = 0.5 * (width - 1);
  const double cy = 0.5 * (height - 1);
  SimilarityTransform t{scale, rotation, 0.0, 0.0};
  const double c = scale * std::cos(rotation);
  const double s = scale * std::sin(rotation);
  t.tx = cx - (c * cx - s * cy);
  t.ty = cy - (s * cx + c * cy);
  return t;
}

SynthPair synth_pair(const Image& base, const SimilarityTransform& transform, double noise_level,
                     std::mt19937_64& rng, const SynthOptions& o) {
  if (base.height() < 2 || base.width() < 2) throw ValidationError("synth_pair: base image too small");
  if (!(transform.scale >= 0.25 && transform.scale <= 4.0)) {
    throw ValidationError("synth_pair: scale must lie in [1/4, 4]");
  }
  if (!(std::abs(transform.rotation) <= 25.0 * std::numbers::pi / 180.0 + 1e-12)) {
    throw ValidationError("synth_pair: rotation must lie within 25 degrees");
  }
  if (!(noise_level >= 0.0)) throw ValidationError("synth_pair: noise level must be non-negative");
  if (!(o.sigma_min > 0.0 && o.sigma_max >= o.sigma_min) || o.detector.max_scale_mismatch < 1.0) {
    throw ValidationError("synth_pair: invalid keypoint scale options");
  }

  const Eigen::Matrix3d h = transform.homography();
  const Eigen::Matrix3d h_inv = h.inverse();
  const int height = base.height(), width = base.width();

  auto to_b = [&](double x, double y) {
    const Eigen::Vector3d p = h * Eigen::Vector3d(x, y, 1.0);
    return Eigen::Vector2d(p.x() / p.z(), p.y() / p.z());
  };
  bool visible = false;
  for (int i = 0; i <= 16 && !visible; ++i) {
    for (int j = 0; j <= 16 && !visible; ++j) {
      const Eigen::Vector2d p = to_b((width - 1) * j / 16.0, (height - 1) * i / 16.0);
      visible = p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width - 1 && p.y() <= height - 1;
    }
  }
  if (!visible) throw ValidationError("synth_pair: transform moves the content fully out of frame");

  SynthPair out;
  ViewPair& pair = out.pair;
  pair.mapping = Homography{h};
  pair.image_a = base;

  const Image source = transform.scale < 1.0
                           ? gaussian_blur(base, 0.5 * std::sqrt(1.0 / (transform.scale * transform.scale) - 1.0))
                           : base;
  pair.image_b = Image(height, width);
  std::normal_distribution<double> noise(0.0, noise_level);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Eigen::Vector3d p = h_inv * Eigen::Vector3d(x, y, 1.0);
      double v = bilinear_sample(source, p.x() / p.z(), p.y() / p.z());
      if (noise_level > 0.0) v = std::clamp(v + noise(rng), 0.0, 1.0);
      pair.image_b(y, x) = static_cast<float>(v);
    }
  }

  if (o.occluders > 0) {
    pair.mask_a = Image(height, width);
    pair.mask_b = Image(height, width);
    add_occluders(pair.image_a, *pair.mask_a, o, rng);
    add_occluders(pair.image_b, *pair.mask_b, o, rng);
  }

  std::uniform_real_distribution<double> ux(o.border, width - 1 - o.border);
  std::uniform_real_distribution<double> uy(o.border, height - 1 - o.border);
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> loc_noise(0.0, o.detector.location_px);
  std::normal_distribution<double> ori_noise(0.0, o.detector.orientation_deg * std::numbers::pi / 180.0);

  PointGrid grid_a(o.separation), grid_b(o.separation);
  const long max_attempts = 30L * o.keypoints;
  for (long attempt = 0; attempt < max_attempts &&
                         static_cast<int>(pair.keypoints_a.size()) < o.keypoints;
       ++attempt) {
    const double x = ux(rng), y = uy(rng);
    const double sigma = log_uniform(rng, o.sigma_min, o.sigma_max);
    const double theta = angle(rng);
    const double mismatch = o.detector.max_scale_mismatch > 1.0
                                ? log_uniform(rng, 1.0, o.detector.max_scale_mismatch)
                                : 1.0;
    const bool grow = coin(rng);
    const double dx = o.detector.location_px > 0.0 ? loc_noise(rng) : 0.0;
    const double dy = o.detector.location_px > 0.0 ? loc_noise(rng) : 0.0;
    const double dt = o.detector.orientation_deg > 0.0 ? ori_noise(rng) : 0.0;

    const Eigen::Vector2d pb = to_b(x, y);
    const double bx = pb.x() + dx, by = pb.y() + dy;
    if (bx < o.border || by < o.border || bx > width - 1 - o.border || by > height - 1 - o.border) continue;
    if (masked(pair.mask_a, x, y) || masked(pair.mask_b, pb.x(), pb.y())) continue;
    if (!grid_a.clear_of(x, y, o.separation) || !grid_b.clear_of(bx, by, o.separation)) continue;

    const double warped_sigma = transform.scale * sigma;
    const double warped_theta = normalize_angle(theta + transform.rotation);
    const double sigma_ref = o.detector.update_attributes ? warped_sigma : sigma;
    const double theta_ref = o.detector.update_attributes ? warped_theta : theta;
    const Keypoint ka = make_keypoint(x, y, sigma, theta);
    const Keypoint kb = make_keypoint(bx, by, grow ? sigma_ref * mismatch : sigma_ref / mismatch,
                                      theta_ref + dt);
    grid_a.add(x, y);
    grid_b.add(bx, by);
    const std::size_t idx = pair.keypoints_a.size();
    pair.keypoints_a.push_back(ka);
    pair.keypoints_b.push_back(kb);

    Correspondence c;
    c.idx_a = idx;
    c.idx_b = idx;
    c.scale_ratio = scale_ratio(warped_sigma, kb.sigma);
    c.orientation_residual_deg = orientation_residual_deg(theta, kb.theta, transform.rotation);
    if (c.orientation_residual_deg <= 25.0) out.planted.items.push_back(c);
  }
  out.planted.provenance = Provenance::synthetic;
  return out;
}

}  // namespace lpdesc
