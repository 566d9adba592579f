#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <numbers>
#include <span>
#include <vector>

#include "lpdesc/image.hpp"

namespace lpdesc {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Wraps an angle into [0, 2pi).
double normalize_angle(double radians);

/// A detection: center in pixels, detector scale, orientation in radians.
struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double sigma = 1.0;
  double theta = 0.0;

  bool operator==(const Keypoint&) const = default;
};

/// Validates sigma > 0 and finite coordinates; wraps theta into [0, 2pi).
Keypoint make_keypoint(double x, double y, double sigma, double theta);

struct GridSpec {
  int size = 32;
  double lambda = 96.0;
  GridKind kind = GridKind::logpolar;
};

/// Source coordinates for every target pixel of one patch, row-major.
/// For log-polar grids rows are angles and columns are radii.
struct SamplingGrid {
  int size = 0;
  GridKind kind = GridKind::logpolar;
  double lambda = 0.0;
  std::vector<double> src_x;
  std::vector<double> src_y;

  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(size) +
           static_cast<std::size_t>(col);
  }
};

/// Support radius in pixels: lambda * sigma / 2.
double support_radius(const Keypoint& kp, double lambda);

/// Orientation is snapped to 2^-20 of a row (2pi / (L * 2^20) radians) and
/// the log-radius to a multiple of 2^-32, so that rotating a keypoint by a
/// whole number of rows, or squaring its radius, moves samples to exactly
/// the same coordinates as another row or column of the grid.
inline constexpr int kAngleFractionBits = 20;
inline constexpr int kLogRadiusFractionBits = 32;

/// Log-polar grid: radius exp(ln(r) * col / L), angle theta + 2pi * row / L.
/// Column 0 lies on the unit circle around the keypoint.
SamplingGrid logpolar_grid(const Keypoint& kp, const GridSpec& spec);

/// Regular grid covering the square of half-width r rotated by theta.
SamplingGrid cartesian_grid(const Keypoint& kp, const GridSpec& spec);

/// Dispatches on spec.kind.
SamplingGrid make_grid(const Keypoint& kp, const GridSpec& spec);

/// A verified keypoint pair across two views.
struct Correspondence {
  std::size_t idx_a = 0;
  std::size_t idx_b = 0;
  double scale_ratio = 1.0;
  double orientation_residual_deg = 0.0;

  bool operator==(const Correspondence&) const = default;
};

/// max/min of two positive scales.
double scale_ratio(double s_warped, double s_other);

/// |(theta_a + relative_rotation) - theta_b| wrapped into [0, 180] degrees.
double orientation_residual_deg(double theta_a, double theta_b,
                                double relative_rotation);

// Keypoint text format: "x y sigma theta" per line, '#' starts a comment.
std::vector<Keypoint> parse_keypoints(std::istream& is);
void format_keypoints(std::ostream& os, std::span<const Keypoint> kps);
std::vector<Keypoint> read_keypoints(const std::filesystem::path& path);
void write_keypoints(const std::filesystem::path& path,
                     std::span<const Keypoint> kps);

}  // namespace lpdesc
