#include "lpdesc/triplet.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lpdesc/error.hpp"

namespace lpdesc {

namespace {

template <typename T>
double euclidean(const DescriptorMatrix<T>& fa, int i, const DescriptorMatrix<T>& fb, int j) {
  double sq = 0.0;
  for (Eigen::Index c = 0; c < fa.cols(); ++c) {
    const double d = static_cast<double>(fa(i, c)) - static_cast<double>(fb(j, c));
    sq += d * d;
  }
  return std::sqrt(std::max(sq, 0.0));
}

template <typename T>
void check_pair(const DescriptorMatrix<T>& fa, const DescriptorMatrix<T>& fb) {
  if (fa.rows() != fb.rows()) {
    throw ValidationError("descriptor count mismatch: " + std::to_string(fa.rows()) + " vs " +
                          std::to_string(fb.rows()));
  }
  if (fa.cols() != fb.cols()) throw ValidationError("descriptor dimension mismatch");
}

}  // namespace

template <typename T>
DistanceMatrix distance_matrix(const DescriptorMatrix<T>& fa, const DescriptorMatrix<T>& fb) {
  check_pair(fa, fb);
  const int k = static_cast<int>(fa.rows());
  DistanceMatrix d;
  d.size = k;
  d.values.resize(static_cast<std::size_t>(k) * k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      d.values[static_cast<std::size_t>(i) * k + j] =
          i == j ? kDistanceSentinel : euclidean(fa, i, fb, j);
    }
  }
  return d;
}

template <typename T>
std::vector<double> positive_distances(const DescriptorMatrix<T>& fa,
                                       const DescriptorMatrix<T>& fb) {
  check_pair(fa, fb);
  std::vector<double> out(static_cast<std::size_t>(fa.rows()));
  for (int k = 0; k < static_cast<int>(fa.rows()); ++k) {
    out[static_cast<std::size_t>(k)] = euclidean(fa, k, fb, k);
  }
  return out;
}

std::vector<Triplet> mine_hardest_in_batch(const DistanceMatrix& d) {
  const int k = d.size;
  if (k < 2) throw ValidationError("hardest-in-batch mining needs K >= 2");
  std::vector<Triplet> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    int row_arg = -1;
    int col_arg = -1;
    for (int j = 0; j < k; ++j) {
      if (j == i) continue;
      if (row_arg < 0 || d(i, j) < d(i, row_arg)) row_arg = j;
      if (col_arg < 0 || d(j, i) < d(col_arg, i)) col_arg = j;
    }
    Triplet& t = out[static_cast<std::size_t>(i)];
    t.index = i;
    if (d(i, row_arg) <= d(col_arg, i)) {
      t.anchor = AnchorSide::a;
      t.negative = row_arg;
      t.negative_distance = d(i, row_arg);
    } else {
      t.anchor = AnchorSide::b;
      t.negative = col_arg;
      t.negative_distance = d(col_arg, i);
    }
  }
  return out;
}

MarginLossTerms triplet_margin_loss(std::span<const double> pos, std::span<const double> neg,
                                    double margin, int distance_power) {
  if (pos.size() != neg.size()) throw ValidationError("triplet loss: size mismatch");
  if (distance_power != 1 && distance_power != 2) {
    throw ValidationError("distance_power must be 1 or 2");
  }
  MarginLossTerms out;
  out.d_pos.assign(pos.size(), 0.0);
  out.d_neg.assign(pos.size(), 0.0);
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const double p = distance_power == 2 ? pos[k] * pos[k] : pos[k];
    const double n = distance_power == 2 ? neg[k] * neg[k] : neg[k];
    const double term = margin + p - n;
    if (term > 0.0) {
      out.loss += term;
      ++out.active;
      out.d_pos[k] = distance_power == 2 ? 2.0 * pos[k] : 1.0;
      out.d_neg[k] = distance_power == 2 ? -2.0 * neg[k] : -1.0;
    }
  }
  return out;
}

template <typename T>
TripletLossResult<T> triplet_loss(const DescriptorMatrix<T>& fa, const DescriptorMatrix<T>& fb,
                                  const TripletLossConfig& config) {
  const DistanceMatrix d = distance_matrix(fa, fb);
  TripletLossResult<T> out;
  out.triplets = mine_hardest_in_batch(d);
  const std::vector<double> pos = positive_distances(fa, fb);
  std::vector<double> neg(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) neg[k] = out.triplets[k].negative_distance;
  const MarginLossTerms terms =
      triplet_margin_loss(pos, neg, config.margin, config.distance_power);
  out.loss = terms.loss;
  out.active = terms.active;
  out.grad_a = DescriptorMatrix<T>::Zero(fa.rows(), fa.cols());
  out.grad_b = DescriptorMatrix<T>::Zero(fb.rows(), fb.cols());

  // d(dist^p)/dx for dist = ||x - y||: p=2 -> 2(x-y); p=1 -> (x-y)/dist.
  // terms.d_* already carry the outer factor (2*dist or 1), so the inner
  // derivative of dist itself is (x-y)/dist.
  auto accumulate = [&](DescriptorMatrix<T>& gx, int ix, const DescriptorMatrix<T>& x,
                        DescriptorMatrix<T>& gy, int iy, const DescriptorMatrix<T>& y,
                        double dist, double outer) {
    if (outer == 0.0 || dist == 0.0) return;
    const double s = outer / dist;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double diff = static_cast<double>(x(ix, c)) - static_cast<double>(y(iy, c));
      gx(ix, c) += static_cast<T>(s * diff);
      gy(iy, c) -= static_cast<T>(s * diff);
    }
  };

  for (std::size_t k = 0; k < pos.size(); ++k) {
    const Triplet& t = out.triplets[k];
    const int i = t.index;
    if (terms.d_pos[k] == 0.0) continue;
    accumulate(out.grad_a, i, fa, out.grad_b, i, fb, pos[k], terms.d_pos[k]);
    if (t.anchor == AnchorSide::a) {
      accumulate(out.grad_a, i, fa, out.grad_b, t.negative, fb, neg[k], terms.d_neg[k]);
    } else {
      accumulate(out.grad_b, i, fb, out.grad_a, t.negative, fa, neg[k], terms.d_neg[k]);
    }
  }
  return out;
}

template DistanceMatrix distance_matrix(const DescriptorMatrix<float>&,
                                        const DescriptorMatrix<float>&);
template DistanceMatrix distance_matrix(const DescriptorMatrix<double>&,
                                        const DescriptorMatrix<double>&);
template std::vector<double> positive_distances(const DescriptorMatrix<float>&,
                                                const DescriptorMatrix<float>&);
template std::vector<double> positive_distances(const DescriptorMatrix<double>&,
                                                const DescriptorMatrix<double>&);
template TripletLossResult<float> triplet_loss(const DescriptorMatrix<float>&,
                                               const DescriptorMatrix<float>&,
                                               const TripletLossConfig&);
template TripletLossResult<double> triplet_loss(const DescriptorMatrix<double>&,
                                                const DescriptorMatrix<double>&,
                                                const TripletLossConfig&);

}  // namespace lpdesc
