#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "lpdesc/geometry.hpp"
#include "lpdesc/image.hpp"

namespace lpdesc {

/// Plane-induced map from view a to view b (pixel coordinates).
struct Homography {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
};

/// Per-view depth along the optical axis plus intrinsics and the relative
/// pose X_b = R * X_a + t. Negative depth marks invalid or occluded pixels.
struct DepthMapping {
  Image depth_a;
  Image depth_b;
  Eigen::Matrix3d k_a = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d k_b = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double depth_tolerance = 0.05;  // relative disagreement counted as occlusion
};

using ViewMapping = std::variant<Homography, DepthMapping>;

struct ViewPair {
  Image image_a;
  Image image_b;
  std::vector<Keypoint> keypoints_a;
  std::vector<Keypoint> keypoints_b;
  ViewMapping mapping;
  // Optional visibility masks: values > 0.5 mark pixels that are hidden in
  // the other view.
  std::optional<Image> mask_a;
  std::optional<Image> mask_b;
};

enum class Direction { a_to_b, b_to_a };

struct Projection {
  double x = 0.0;
  double y = 0.0;
  double scale = 0.0;  // warped detector scale
  double theta = 0.0;  // warped orientation
  bool in_range = false;
  bool occluded = false;
};

/// Maps a keypoint into the other view. The location is filled in even when
/// the point is occluded so that each filter can be judged on its own.
/// Throws ValidationError if the keypoint lies outside its own image.
Projection project_keypoint(const Keypoint& kp, const ViewPair& pair, Direction direction);

struct FilterConfig {
  double projection_tol = 1.5;   // pixels
  double orientation_tol = 25.0; // degrees
  double min_separation = 7.0;   // pixels
  double distractor_exclusion = 3.0;
};

void validate(const FilterConfig& cfg);

enum class Provenance { synthetic, depth_projected };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view text);

struct CorrespondenceSet {
  std::vector<Correspondence> items;
  Provenance provenance = Provenance::synthetic;
};

/// Per-stage counts of the last build, mostly for logs and tests.
struct FilterStats {
  int projected = 0;
  int matched = 0;
  int after_bijective = 0;
  int after_cycle = 0;
  int after_occlusion = 0;
  int after_orientation = 0;
  int after_separation = 0;
};

/// Nearest-neighbour matching of projected a-keypoints, bijective check
/// (smallest residual wins), cycle check, occlusion, orientation and
/// minimum-separation filters, in that order.
CorrespondenceSet build_correspondences(const ViewPair& pair, const FilterConfig& cfg,
                                        FilterStats* stats = nullptr);

/// Independent re-verification of a set against its pair. Returns one
/// message per violation; empty means the set is consistent.
std::vector<std::string> audit_correspondences(const CorrespondenceSet& set, const ViewPair& pair,
                                               const FilterConfig& cfg);

// --- Synthetic scenes -------------------------------------------------------

struct TextureOptions {
  int height = 256;
  int width = 256;
  int blobs = 600;
  double min_sigma = 1.5;
  double max_sigma = 24.0;
  double max_aspect = 3.0;
};

/// Sum of randomly placed anisotropic Gaussian blobs, rescaled into
/// [0.05, 0.95]. Smooth at every scale above min_sigma.
Image gaussian_texture(const TextureOptions& options, std::mt19937_64& rng);

/// b = scale * R(rotation) * a + (tx, ty).
struct SimilarityTransform {
  double scale = 1.0;
  double rotation = 0.0;  // radians
  double tx = 0.0;
  double ty = 0.0;

  Eigen::Matrix3d homography() const;
};

/// Similarity about the image center (rotation and scale leave the center
/// fixed).
SimilarityTransform centered_similarity(int height, int width, double scale, double rotation);

struct DetectorNoise {
  double location_px = 0.0;     // Gaussian std of b-keypoint location noise
  double orientation_deg = 0.0; // Gaussian std of b-keypoint orientation noise
  double max_scale_mismatch = 1.0;  // ratio drawn log-uniformly in [1, max]
  /// false: b-keypoints keep the a-keypoint scale and orientation instead of
  /// the warped ones, so the mismatch equals the transform itself.
  bool update_attributes = true;
};

struct SynthOptions {
  int keypoints = 200;  // attempted; fewer survive placement constraints
  double sigma_min = 1.2;
  double sigma_max = 2.4;
  double border = 4.0;         // keypoints keep this far from image edges
  double separation = 8.0;     // planted keypoints at least this far apart
  DetectorNoise detector;
  int occluders = 0;           // independent clutter discs per view
  double occluder_min_radius = 6.0;
  double occluder_max_radius = 20.0;
};

struct SynthPair {
  ViewPair pair;
  CorrespondenceSet planted;  // ground truth by construction
};

/// Resamples `base` under the similarity (with anti-alias prefiltering when
/// it shrinks), adds Gaussian noise of std `noise_level`, plants keypoints
/// and their images in b. Throws ValidationError when the transform moves
/// the content fully out of frame or the arguments are out of range.
SynthPair synth_pair(const Image& base, const SimilarityTransform& transform, double noise_level,
                     std::mt19937_64& rng, const SynthOptions& options = {});

/// Adds N(0, std_degrees^2) to the orientation and wraps into [0, 2pi).
Keypoint jitter_orientation(const Keypoint& kp, std::mt19937_64& rng, double std_degrees);

/// Separable Gaussian blur with reflect-101 borders; sigma <= 0 is a no-op.
Image gaussian_blur(const Image& img, double sigma);

// --- Training batches -------------------------------------------------------

/// A view pair ready for on-the-fly patch extraction.
struct TrainingSource {
  std::string name;
  ViewPair pair;
  CorrespondenceSet set;
  Image padded_a;
  Image padded_b;
  int pad = 0;
};

inline constexpr std::size_t kMaxCorrespondencesPerSource = 1000;

/// Caps the set (seeded random subset) and precomputes mirror-padded views.
/// `support` is the largest support radius in pixels that will be sampled.
TrainingSource make_training_source(std::string name, ViewPair pair, CorrespondenceSet set,
                                    double support, std::mt19937_64& rng,
                                    std::size_t cap = kMaxCorrespondencesPerSource);

struct PatchPairBatch {
  std::vector<Patch> a;
  std::vector<Patch> b;
  std::vector<std::uint64_t> point_ids;  // (source << 32) | correspondence index
  std::vector<double> scale_ratios;
  std::vector<std::string> warnings;
};

/// Throws ValidationError unless sides agree in size and every point id is
/// unique.
void validate_batch(const PatchPairBatch& batch);

struct BatchOptions {
  int batch_size = 128;
  GridSpec grid;
  double jitter_std_deg = 5.0;  // applied to anchor (view a) keypoints; 0 disables
};

/// Equal share per non-empty source (remainder round-robin from the first
/// source), drawn without replacement; a short source gives its deficit to
/// the next ones. Empty sources are skipped with a warning.
std::vector<int> batch_shares(std::span<const std::size_t> available, int batch_size);

PatchPairBatch assemble_batch(std::span<const TrainingSource> sources, const BatchOptions& options,
                              std::mt19937_64& rng);

/// Patches of one view for the given keypoints, from an unpadded image.
std::vector<Patch> extract_patches(const Image& img, std::span<const Keypoint> keypoints,
                                   const GridSpec& grid);

// --- Files ------------------------------------------------------------------

// Correspondence text: "idx_a idx_b r orientation_residual_deg" per line,
// '#' comments; a "# provenance X" line records the provenance tag.
void write_correspondences(const std::filesystem::path& path, const CorrespondenceSet& set);
CorrespondenceSet read_correspondences(const std::filesystem::path& path);

/// On-disk description of a view pair: key = value lines naming the images,
/// keypoint files, optional masks and either `homography` (9 numbers,
/// row-major) or depth_a/depth_b/k_a/k_b/rotation/translation.
struct PairManifest {
  std::filesystem::path image_a, image_b;
  std::filesystem::path keypoints_a, keypoints_b;
  std::optional<std::filesystem::path> mask_a, mask_b;
  std::optional<std::filesystem::path> correspondences;
  std::optional<Eigen::Matrix3d> homography;
  std::optional<std::filesystem::path> depth_a, depth_b;
  Eigen::Matrix3d k_a = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d k_b = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double depth_tolerance = 0.05;
};

/// Relative paths inside a manifest are resolved against its directory.
PairManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const PairManifest& manifest);
ViewPair load_view_pair(const PairManifest& manifest);

/// Writes images (rawf32), keypoints, masks, planted correspondences and a
/// manifest into `dir`. Returns the manifest path.
std::filesystem::path write_view_pair(const std::filesystem::path& dir, const ViewPair& pair,
                                      const CorrespondenceSet& set);

}  // namespace lpdesc
