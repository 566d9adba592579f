#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lpdesc/datagen.hpp"
#include "lpdesc/eval.hpp"
#include "lpdesc/geometry.hpp"
#include "lpdesc/optim.hpp"
#include "lpdesc/triplet.hpp"

namespace lpdesc {

/// Flat key = value run configuration shared by every command. Unknown keys
/// and out-of-range values are rejected with the key named in the message.
struct RunConfig {
  GridKind grid_kind = GridKind::logpolar;
  int L = 32;
  std::optional<double> lambda;  // default depends on grid_kind
  int K = 128;
  int epochs = 20;
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double dropout = 0.1;
  double jitter_std_deg = 5.0;
  double margin = 1.0;
  int distance_power = 2;
  std::uint64_t seed = 1;
  int threads = 1;
  int batches_per_epoch = 0;

  // paths
  std::string dataset;     // dataset index listing manifests
  std::string checkpoint;
  std::string out;

  // synthetic data
  int synth_pairs = 12;
  int eval_pairs = 4;      // held-out pairs for experiment evaluation
  int synth_size = 512;
  int synth_keypoints = 1000;
  double synth_min_scale = 0.75;
  double synth_max_scale = 1.33;
  double synth_max_rotation_deg = 25.0;
  double synth_noise = 0.01;
  double synth_max_scale_mismatch = 4.0;
  double synth_location_noise_px = 0.3;
  double synth_orientation_noise_deg = 8.0;
  int synth_occluders = 60;
  double synth_sigma_min = 1.2;
  double synth_sigma_max = 2.4;

  // correspondence filters
  double projection_tol = 1.5;
  double orientation_tol = 25.0;
  double min_separation = 7.0;
  double distractor_exclusion = 3.0;

  // evaluation
  int negatives_per_positive = 5;
  int retrieval_matches = 500;
  int retrieval_distractors = 3000;

  double resolved_lambda() const;
  GridSpec grid_spec() const;
  OptimConfig optim() const;
  TripletLossConfig loss() const;
  FilterConfig filters() const;
  RetrievalConfig retrieval() const;

  /// Applies one key; throws ValidationError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Cross-field checks.
  void validate() const;
};

/// Every key the schema accepts, in snapshot order.
const std::vector<std::string>& config_keys();

RunConfig parse_config(std::istream& is, RunConfig base = {});
RunConfig read_config(const std::filesystem::path& path, RunConfig base = {});

/// Resolved snapshot: every key with its effective value.
std::string format_config(const RunConfig& cfg);
void write_config(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace lpdesc
