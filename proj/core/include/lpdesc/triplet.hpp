#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace lpdesc {

template <typename T>
using DescriptorMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Stands in for the excluded diagonal; unit vectors are at most 2 apart.
inline constexpr double kDistanceSentinel = 10.0;

/// K x K Euclidean distances between two descriptor sets, diagonal replaced
/// by kDistanceSentinel.
struct DistanceMatrix {
  int size = 0;
  std::vector<double> values;

  double operator()(int i, int j) const {
    return values[static_cast<std::size_t>(i) * static_cast<std::size_t>(size) +
                  static_cast<std::size_t>(j)];
  }
};

template <typename T>
DistanceMatrix distance_matrix(const DescriptorMatrix<T>& fa, const DescriptorMatrix<T>& fb);

/// ||fa_k - fb_k|| for every k.
template <typename T>
std::vector<double> positive_distances(const DescriptorMatrix<T>& fa,
                                       const DescriptorMatrix<T>& fb);

enum class AnchorSide { a, b };

struct Triplet {
  AnchorSide anchor = AnchorSide::a;
  int index = 0;     // anchor and positive share this index
  int negative = 0;  // index on the side opposite the anchor
  double negative_distance = 0.0;
};

/// Hardest-in-batch mining. For each k the row minimum (negatives of a_k)
/// and column minimum (negatives of b_k) are found, lowest index winning
/// ties; anchor a is chosen when its hardest negative is at least as close.
std::vector<Triplet> mine_hardest_in_batch(const DistanceMatrix& d);

struct MarginLossTerms {
  double loss = 0.0;
  std::vector<double> d_pos;  // dL/d(pos distance)
  std::vector<double> d_neg;  // dL/d(neg distance)
  int active = 0;
};

/// sum_k max(0, margin + pos^p - neg^p) and its derivative with respect to
/// the distances (zero on inactive terms).
MarginLossTerms triplet_margin_loss(std::span<const double> pos, std::span<const double> neg,
                                    double margin = 1.0, int distance_power = 2);

struct TripletLossConfig {
  double margin = 1.0;
  int distance_power = 2;
};

template <typename T>
struct TripletLossResult {
  double loss = 0.0;
  int active = 0;
  std::vector<Triplet> triplets;
  DescriptorMatrix<T> grad_a;
  DescriptorMatrix<T> grad_b;
};

/// Distances, mining, loss and gradients with respect to both descriptor
/// sets. The mined selection is treated as constant when differentiating.
template <typename T>
TripletLossResult<T> triplet_loss(const DescriptorMatrix<T>& fa, const DescriptorMatrix<T>& fb,
                                  const TripletLossConfig& config = {});

}  // namespace lpdesc
