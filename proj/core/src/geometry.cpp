#include "lpdesc/geometry.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "lpdesc/error.hpp"

namespace lpdesc {

double normalize_angle(double radians) {
  double a = std::fmod(radians, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  // fmod of a tiny negative value can round back up to exactly 2pi.
  if (a >= kTwoPi) a = 0.0;
  return a;
}

Keypoint make_keypoint(double x, double y, double sigma, double theta) {
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(theta)) {
    throw ValidationError("keypoint has non-finite coordinates");
  }
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ValidationError("keypoint scale must be positive, got " + std::to_string(sigma));
  }
  return Keypoint{x, y, sigma, normalize_angle(theta)};
}

double support_radius(const Keypoint& kp, double lambda) {
  return lambda * kp.sigma / 2.0;
}

namespace {

void check_spec(const GridSpec& spec, GridKind expected) {
  if (spec.kind != expected) {
    throw ValidationError(std::string("grid spec kind is ") +
                          std::string(to_string(spec.kind)) + ", expected " +
                          std::string(to_string(expected)));
  }
  if (spec.size < 2) throw ValidationError("patch size must be at least 2");
  if (!(spec.lambda > 0.0)) throw ValidationError("lambda must be positive");
}

SamplingGrid empty_grid(const GridSpec& spec) {
  SamplingGrid grid;
  grid.size = spec.size;
  grid.kind = spec.kind;
  grid.lambda = spec.lambda;
  const std::size_t n = static_cast<std::size_t>(spec.size) * spec.size;
  grid.src_x.resize(n);
  grid.src_y.resize(n);
  return grid;
}

}  // namespace

SamplingGrid logpolar_grid(const Keypoint& kp, const GridSpec& spec) {
  check_spec(spec, GridKind::logpolar);
  const double radius = support_radius(kp, spec.lambda);
  if (!(radius > 1.0)) {
    throw ValidationError("log-polar support radius must exceed 1 pixel, got " +
                          std::to_string(radius));
  }
  const int n = spec.size;
  SamplingGrid grid = empty_grid(spec);

  const double log_radius =
      std::ldexp(std::round(std::ldexp(std::log(radius), kLogRadiusFractionBits)),
                 -kLogRadiusFractionBits);
  std::vector<double> rho(static_cast<std::size_t>(n));
  for (int col = 0; col < n; ++col) {
    rho[static_cast<std::size_t>(col)] = std::exp((log_radius * col) / n);
  }

  // Angles live on an integer lattice of n * 2^20 steps per turn.
  const std::int64_t row_step = std::int64_t{1} << kAngleFractionBits;
  const std::int64_t cycle = row_step * n;
  const double theta_rows = kp.theta * n / kTwoPi;
  std::int64_t phase = std::llround(std::ldexp(theta_rows, kAngleFractionBits)) % cycle;
  if (phase < 0) phase += cycle;

  for (int row = 0; row < n; ++row) {
    const std::int64_t lattice = (phase + row * row_step) % cycle;
    const double phi = kTwoPi * static_cast<double>(lattice) / static_cast<double>(cycle);
    const double c = std::cos(phi);
    const double s = std::sin(phi);
    for (int col = 0; col < n; ++col) {
      const std::size_t i = grid.index(row, col);
      grid.src_x[i] = kp.x + rho[static_cast<std::size_t>(col)] * c;
      grid.src_y[i] = kp.y + rho[static_cast<std::size_t>(col)] * s;
    }
  }
  return grid;
}

SamplingGrid cartesian_grid(const Keypoint& kp, const GridSpec& spec) {
  check_spec(spec, GridKind::cartesian);
  const int n = spec.size;
  const double radius = support_radius(kp, spec.lambda);
  SamplingGrid grid = empty_grid(spec);
  const double c = std::cos(kp.theta);
  const double s = std::sin(kp.theta);
  const double center = (n - 1) / 2.0;
  for (int row = 0; row < n; ++row) {
    // Offsets computed as (2r * t) / (L-1) so that r = (L-1)/2 is exact.
    const double dv = (2.0 * radius * (row - center)) / (n - 1);
    for (int col = 0; col < n; ++col) {
      const double du = (2.0 * radius * (col - center)) / (n - 1);
      const std::size_t i = grid.index(row, col);
      grid.src_x[i] = kp.x + (du * c - dv * s);
      grid.src_y[i] = kp.y + (du * s + dv * c);
    }
  }
  return grid;
}

SamplingGrid make_grid(const Keypoint& kp, const GridSpec& spec) {
  return spec.kind == GridKind::logpolar ? logpolar_grid(kp, spec)
                                         : cartesian_grid(kp, spec);
}

double scale_ratio(double s_warped, double s_other) {
  if (!(s_warped > 0.0) || !(s_other > 0.0)) {
    throw ValidationError("scale_ratio: scales must be positive");
  }
  return std::max(s_warped, s_other) / std::min(s_warped, s_other);
}

double orientation_residual_deg(double theta_a, double theta_b,
                                double relative_rotation) {
  double d = normalize_angle(theta_a + relative_rotation - theta_b);
  if (d > std::numbers::pi) d = kTwoPi - d;
  return d * 180.0 / std::numbers::pi;
}

std::vector<Keypoint> parse_keypoints(std::istream& is) {
  std::vector<Keypoint> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double x, y, sigma, theta;
    if (!(ls >> x >> y >> sigma >> theta)) {
      throw ValidationError("keypoint line " + std::to_string(line_no) +
                            ": expected 'x y sigma theta'");
    }
    try {
      out.push_back(make_keypoint(x, y, sigma, theta));
    } catch (const ValidationError& e) {
      throw ValidationError("keypoint line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void format_keypoints(std::ostream& os, std::span<const Keypoint> kps) {
  os << std::setprecision(17);
  for (const auto& kp : kps) {
    os << kp.x << ' ' << kp.y << ' ' << kp.sigma << ' ' << kp.theta << '\n';
  }
}

std::vector<Keypoint> read_keypoints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open keypoint file " + path.string());
  return parse_keypoints(in);
}

void write_keypoints(const std::filesystem::path& path, std::span<const Keypoint> kps) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write keypoint file " + path.string());
  out << "# x y sigma theta\n";
  format_keypoints(out, kps);
}

}  // namespace lpdesc
