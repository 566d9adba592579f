#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lpdesc/config.hpp"
#include "lpdesc/datagen.hpp"
#include "lpdesc/eval.hpp"
#include "lpdesc/network.hpp"
#include "lpdesc/training.hpp"

namespace lpdesc {

struct SynthDatasetOptions {
  int pairs = 12;
  TextureOptions texture;
  double min_scale = 0.75;
  double max_scale = 1.33;
  double max_rotation_deg = 25.0;
  double noise = 0.01;
  SynthOptions synth;
};

SynthDatasetOptions synth_dataset_options(const RunConfig& cfg);

/// Pair i depends only on (seed, i), so datasets of different sizes share
/// their leading pairs.
std::vector<SynthPair> make_synth_dataset(const SynthDatasetOptions& options, std::uint64_t seed);

/// Runs the correspondence pipeline on every pair (the planted set is kept
/// only as ground truth) and prepares padded views for `grid`.
std::vector<TrainingSource> prepare_sources(std::span<const SynthPair> pairs, const GridSpec& grid,
                                            const FilterConfig& filters, std::uint64_t seed);

TrainingSource prepare_source(std::string name, ViewPair pair, CorrespondenceSet set,
                              const GridSpec& grid, std::mt19937_64& rng);

/// Largest support radius over both views' keypoints.
double max_support(const ViewPair& pair, double lambda);

/// Positives: every correspondence, annotated with its scale ratio and
/// orientation residual. Negatives: `negatives_per_positive` pairs (a_i, b_j)
/// with j another correspondence of the same source.
MatchScores score_sources(Network<float>& net, std::span<const TrainingSource> sources,
                          const GridSpec& grid, int negatives_per_positive, std::uint64_t seed);

TrainerOptions trainer_options(const RunConfig& cfg);

/// Seed of the held-out evaluation dataset; disjoint from the training one.
std::uint64_t eval_seed(std::uint64_t seed);

struct ExperimentResult {
  GridKind kind = GridKind::logpolar;
  double lambda = 0.0;
  std::vector<EpochStats> epochs;
  MatchScores scores;
  double fpr95 = 1.0;
  BinGrid bins;
  std::size_t train_correspondences = 0;
  double seconds = 0.0;
};

/// End-to-end desk experiment for one configuration: synthesizes
/// cfg.synth_pairs training pairs and cfg.eval_pairs held-out pairs,
/// trains a fresh network and scores the held-out correspondences.
/// `net_out`, when given, receives the trained network.
ExperimentResult run_experiment(const RunConfig& cfg,
                                const std::function<void(const EpochStats&)>& on_epoch = {},
                                Network<float>* net_out = nullptr);

}  // namespace lpdesc
