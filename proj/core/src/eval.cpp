#include "lpdesc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "lpdesc/error.hpp"

namespace lpdesc {

std::size_t fpr95_rank(std::size_t positives) { return (95 * positives + 99) / 100; }

double fpr95(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) {
    throw ValidationError("fpr95 needs at least one positive and one negative");
  }
  auto bad = [](double d) { return !std::isfinite(d) || d < 0.0; };
  if (std::any_of(positives.begin(), positives.end(), bad) ||
      std::any_of(negatives.begin(), negatives.end(), bad)) {
    throw ValidationError("fpr95: distances must be finite and non-negative");
  }
  std::vector<double> pos(positives.begin(), positives.end());
  const std::size_t k = fpr95_rank(pos.size());
  std::nth_element(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(k - 1), pos.end());
  const double threshold = pos[k - 1];
  const auto accepted = std::count_if(negatives.begin(), negatives.end(),
                                      [&](double d) { return d <= threshold; });
  return static_cast<double>(accepted) / static_cast<double>(negatives.size());
}

double fpr95(const MatchScores& scores) {
  std::vector<double> pos;
  pos.reserve(scores.positives.size());
  for (const auto& p : scores.positives) pos.push_back(p.distance);
  return fpr95(pos, scores.negatives);
}

const BinCell& BinGrid::cell(int scale_bin, int orient_bin) const {
  const int cols = static_cast<int>(orient_edges.size()) - 1;
  return cells.at(static_cast<std::size_t>(scale_bin * cols + orient_bin));
}

void validate(const BinGrid& grid) {
  for (const auto* edges : {&grid.scale_edges, &grid.orient_edges}) {
    if (edges->size() < 2) throw ValidationError("bin grid needs at least two edges per axis");
    for (std::size_t i = 1; i < edges->size(); ++i) {
      if (!((*edges)[i] > (*edges)[i - 1])) throw ValidationError("bin edges must increase strictly");
    }
  }
}

int bin_index(std::span<const double> edges, double v) {
  if (edges.size() < 2 || !(v >= edges.front()) || !(v <= edges.back())) return -1;
  const auto it = std::upper_bound(edges.begin(), edges.end(), v);
  const auto i = static_cast<int>(it - edges.begin()) - 1;
  return std::min(i, static_cast<int>(edges.size()) - 2);
}

std::optional<double> scale_band_fpr95(const MatchScores& scores, double lo, double hi) {
  std::vector<double> pos;
  for (const PositiveScore& p : scores.positives) {
    if (p.scale_ratio >= lo && p.scale_ratio <= hi) pos.push_back(p.distance);
  }
  if (pos.empty()) return std::nullopt;
  return fpr95(pos, scores.negatives);
}

BinGrid binned_fpr95(const MatchScores& scores, BinGrid grid) {
  validate(grid);
  const int rows = static_cast<int>(grid.scale_edges.size()) - 1;
  const int cols = static_cast<int>(grid.orient_edges.size()) - 1;
  std::vector<std::vector<double>> members(static_cast<std::size_t>(rows * cols));
  grid.outside = 0;
  for (const auto& p : scores.positives) {
    const int r = bin_index(grid.scale_edges, p.scale_ratio);
    const int c = bin_index(grid.orient_edges, p.orientation_residual_deg);
    if (r < 0 || c < 0) {
      ++grid.outside;
      continue;
    }
    members[static_cast<std::size_t>(r * cols + c)].push_back(p.distance);
  }
  grid.cells.clear();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      BinCell cell;
      cell.scale_lo = grid.scale_edges[static_cast<std::size_t>(r)];
      cell.scale_hi = grid.scale_edges[static_cast<std::size_t>(r) + 1];
      cell.orient_lo = grid.orient_edges[static_cast<std::size_t>(c)];
      cell.orient_hi = grid.orient_edges[static_cast<std::size_t>(c) + 1];
      const auto& m = members[static_cast<std::size_t>(r * cols + c)];
      cell.count = static_cast<int>(m.size());
      if (!m.empty()) cell.fpr95 = fpr95(m, scores.negatives);
      cell.low_confidence = cell.count < grid.min_confident;
      grid.cells.push_back(cell);
    }
  }
  return grid;
}

double euclidean(std::span<const float> x, std::span<const float> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<int> retrieval_ranks(std::span<const float> queries, std::span<const float> matches,
                                 std::span<const float> distractors, int dim) {
  if (dim <= 0) throw ValidationError("retrieval: descriptor dimension must be positive");
  const auto d = static_cast<std::size_t>(dim);
  if (queries.size() % d || matches.size() % d || distractors.size() % d) {
    throw ValidationError("retrieval: descriptor arrays are not multiples of the dimension");
  }
  if (queries.size() != matches.size()) {
    throw ValidationError("retrieval: every query needs exactly one true match");
  }
  const std::size_t n = queries.size() / d;
  const std::size_t nd = distractors.size() / d;
  auto row = [d](std::span<const float> s, std::size_t i) { return s.subspan(i * d, d); };
  std::vector<int> ranks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto q = row(queries, i);
    const double truth = euclidean(q, row(matches, i));
    int rank = 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && euclidean(q, row(matches, j)) <= truth) ++rank;
    }
    for (std::size_t j = 0; j < nd; ++j) {
      if (euclidean(q, row(distractors, j)) <= truth) ++rank;
    }
    ranks[i] = rank;
  }
  return ranks;
}

RankSummary summarize_ranks(std::span<const int> ranks) {
  RankSummary s;
  s.queries = ranks.size();
  if (ranks.empty()) return s;
  const int worst = *std::max_element(ranks.begin(), ranks.end());
  std::vector<std::size_t> hist(static_cast<std::size_t>(worst) + 1, 0);
  double total = 0.0;
  for (int r : ranks) {
    if (r < 1) throw ValidationError("ranks start at 1");
    ++hist[static_cast<std::size_t>(r)];
    total += r;
  }
  std::size_t running = 0;
  for (int k = 1; k <= worst; ++k) {
    running += hist[static_cast<std::size_t>(k)];
    s.cdf.push_back(static_cast<double>(running) / static_cast<double>(ranks.size()));
  }
  s.rank1 = s.cdf.front();
  s.mean_rank = total / static_cast<double>(ranks.size());
  return s;
}

std::vector<std::size_t> select_distractors(std::span<const Keypoint> keypoints,
                                            std::span<const Keypoint> endpoints, double exclusion) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    const bool far = std::all_of(endpoints.begin(), endpoints.end(), [&](const Keypoint& e) {
      return std::hypot(e.x - keypoints[i].x, e.y - keypoints[i].y) > exclusion;
    });
    if (far) out.push_back(i);
  }
  return out;
}

MatchScores score_correspondences(const DescriptorFile& a, const DescriptorFile& b,
                                  std::span<const Correspondence> items, int negatives_per_positive,
                                  std::mt19937_64& rng) {
  if (a.dim != b.dim) throw ValidationError("descriptor files differ in dimension");
  if (a.kind && b.kind && *a.kind != *b.kind) {
    throw ValidationError("descriptor files mix grid kinds");
  }
  if (a.lambda && b.lambda && *a.lambda != *b.lambda) {
    throw ValidationError("descriptor files mix lambda values");
  }
  MatchScores s;
  for (const auto& c : items) {
    if (c.idx_a >= a.count() || c.idx_b >= b.count()) {
      throw ValidationError("correspondence index beyond descriptor count");
    }
    s.positives.push_back({euclidean(a.row(c.idx_a), b.row(c.idx_b)), c.scale_ratio,
                           c.orientation_residual_deg});
  }
  if (items.size() >= 2) {
    std::uniform_int_distribution<std::size_t> pick(0, items.size() - 2);
    for (std::size_t i = 0; i < items.size(); ++i) {
      for (int k = 0; k < negatives_per_positive; ++k) {
        std::size_t j = pick(rng);
        if (j >= i) ++j;
        s.negatives.push_back(euclidean(a.row(items[i].idx_a), b.row(items[j].idx_b)));
      }
    }
  }
  return s;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "method,grid_kind,lambda,fpr95,positives,negatives\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.method << ',' << to_string(r.kind) << ',' << r.lambda << ',' << r.fpr95 << ','
        << r.positives << ',' << r.negatives << '\n';
  }
}

void write_bins_csv(const std::filesystem::path& path, const BinGrid& grid) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "scale_lo,scale_hi,orient_lo,orient_hi,fpr95,count,low_confidence\n" << std::setprecision(10);
  for (const auto& c : grid.cells) {
    out << c.scale_lo << ',' << c.scale_hi << ',' << c.orient_lo << ',' << c.orient_hi << ',';
    if (c.fpr95) out << *c.fpr95; else out << "empty";
    out << ',' << c.count << ',' << (c.low_confidence ? 1 : 0) << '\n';
  }
}

void write_ranks_csv(const std::filesystem::path& path, const RankSummary& summary) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "rank,cdf\n" << std::setprecision(10);
  for (std::size_t k = 0; k < summary.cdf.size(); ++k) out << k + 1 << ',' << summary.cdf[k] << '\n';
}

}  // namespace lpdesc
