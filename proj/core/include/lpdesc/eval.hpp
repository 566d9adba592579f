#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lpdesc/geometry.hpp"
#include "lpdesc/network.hpp"

namespace lpdesc {

struct PositiveScore {
  double distance = 0.0;
  double scale_ratio = 1.0;
  double orientation_residual_deg = 0.0;
};

struct MatchScores {
  std::vector<PositiveScore> positives;
  std::vector<double> negatives;  // shared pool
};

/// Index (1-based) of the positive order statistic used as threshold:
/// ceil(0.95 * P), computed in integers.
std::size_t fpr95_rank(std::size_t positives);

/// Fraction of negatives with distance <= the ceil(0.95 P)-th smallest
/// positive distance. Throws ValidationError on empty or invalid input.
double fpr95(std::span<const double> positives, std::span<const double> negatives);
double fpr95(const MatchScores& scores);

struct BinCell {
  double scale_lo = 0.0, scale_hi = 0.0;
  double orient_lo = 0.0, orient_hi = 0.0;
  int count = 0;
  std::optional<double> fpr95;  // empty cell: no value
  bool low_confidence = true;
};

/// Cells are half-open [lo, hi) except the last one per axis, which also
/// takes its upper edge.
struct BinGrid {
  std::vector<double> scale_edges{1.0, 1.33, 1.66, 2.0, 4.0};
  std::vector<double> orient_edges{0.0, 5.0, 10.0, 15.0, 20.0, 25.0};
  int min_confident = 20;
  std::vector<BinCell> cells;  // scale-major
  int outside = 0;             // positives falling outside every cell

  const BinCell& cell(int scale_bin, int orient_bin) const;
};

void validate(const BinGrid& grid);

/// Bin index of v for the given edges, or -1 outside.
int bin_index(std::span<const double> edges, double v);

/// FPR95 per cell: the cell's positives against the global negative pool.
BinGrid binned_fpr95(const MatchScores& scores, BinGrid grid);

/// FPR95 of the positives with lo <= scale ratio <= hi against every
/// negative, pooled over orientation. nullopt when no positive qualifies.
std::optional<double> scale_band_fpr95(const MatchScores& scores, double lo, double hi);

struct RetrievalConfig {
  int matches = 500;       // N_m
  int distractors = 3000;  // N_d
  double exclusion_px = 3.0;
};

/// queries[i] truly matches matches[i]. Each query is ranked against all
/// matches and all distractors; rank = 1 + number of other candidates at a
/// distance <= the true one (ties count against the query).
std::vector<int> retrieval_ranks(std::span<const float> queries, std::span<const float> matches,
                                 std::span<const float> distractors, int dim);

struct RankSummary {
  std::vector<double> cdf;  // cdf[k - 1] = fraction with rank <= k
  double rank1 = 0.0;
  double mean_rank = 0.0;
  std::size_t queries = 0;
};

RankSummary summarize_ranks(std::span<const int> ranks);

/// Keypoints farther than `exclusion` pixels from every listed endpoint.
std::vector<std::size_t> select_distractors(std::span<const Keypoint> keypoints,
                                            std::span<const Keypoint> endpoints, double exclusion);

/// Positive distances of the correspondences and `negatives_per_positive`
/// non-matching (a_i, b_j) distances per positive, j drawn from the other
/// correspondences of the same pair.
MatchScores score_correspondences(const DescriptorFile& a, const DescriptorFile& b,
                                  std::span<const Correspondence> items, int negatives_per_positive,
                                  std::mt19937_64& rng);

double euclidean(std::span<const float> x, std::span<const float> y);

struct MetricRow {
  std::string method;
  GridKind kind = GridKind::logpolar;
  double lambda = 0.0;
  double fpr95 = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);
void write_bins_csv(const std::filesystem::path& path, const BinGrid& grid);
void write_ranks_csv(const std::filesystem::path& path, const RankSummary& summary);

}  // namespace lpdesc
