#include "lpdesc/experiment.hpp"

#include <chrono>
#include <cmath>

#include "lpdesc/error.hpp"

namespace lpdesc {

SynthDatasetOptions synth_dataset_options(const RunConfig& cfg) {
  SynthDatasetOptions o;
  o.pairs = cfg.synth_pairs;
  o.texture.height = cfg.synth_size;
  o.texture.width = cfg.synth_size;
  o.texture.blobs = std::max(1, static_cast<int>(600.0 * cfg.synth_size * cfg.synth_size / (256.0 * 256.0)));
  o.min_scale = cfg.synth_min_scale;
  o.max_scale = cfg.synth_max_scale;
  o.max_rotation_deg = cfg.synth_max_rotation_deg;
  o.noise = cfg.synth_noise;
  o.synth.keypoints = cfg.synth_keypoints;
  o.synth.sigma_min = cfg.synth_sigma_min;
  o.synth.sigma_max = cfg.synth_sigma_max;
  o.synth.occluders = cfg.synth_occluders;
  o.synth.detector.location_px = cfg.synth_location_noise_px;
  o.synth.detector.orientation_deg = cfg.synth_orientation_noise_deg;
  o.synth.detector.max_scale_mismatch = cfg.synth_max_scale_mismatch;
  return o;
}

std::vector<SynthPair> make_synth_dataset(const SynthDatasetOptions& o, std::uint64_t seed) {
  if (o.pairs < 1) throw ValidationError("synthetic dataset needs at least one pair");
  if (!(o.min_scale > 0.0 && o.max_scale >= o.min_scale)) {
    throw ValidationError("synthetic dataset: invalid scale range");
  }
  std::vector<SynthPair> out;
  for (int i = 0; i < o.pairs; ++i) {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(i) + 1);
    const Image base = gaussian_texture(o.texture, rng);
    std::uniform_real_distribution<double> log_s(std::log(o.min_scale), std::log(o.max_scale));
    const double rot = o.max_rotation_deg * std::numbers::pi / 180.0;
    std::uniform_real_distribution<double> angle(-rot, rot);
    const double s = std::exp(log_s(rng));
    const double r = angle(rng);
    const auto t = centered_similarity(base.height(), base.width(), s, r);
    out.push_back(synth_pair(base, t, o.noise, rng, o.synth));
  }
  return out;
}

double max_support(const ViewPair& pair, double lambda) {
  double s = 0.0;
  for (const auto* kps : {&pair.keypoints_a, &pair.keypoints_b}) {
    for (const Keypoint& kp : *kps) s = std::max(s, support_radius(kp, lambda));
  }
  return s;
}

TrainingSource prepare_source(std::string name, ViewPair pair, CorrespondenceSet set,
                              const GridSpec& grid, std::mt19937_64& rng) {
  const double support = max_support(pair, grid.lambda) + 2.0;
  return make_training_source(std::move(name), std::move(pair), std::move(set), support, rng);
}

std::vector<TrainingSource> prepare_sources(std::span<const SynthPair> pairs, const GridSpec& grid,
                                            const FilterConfig& filters, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingSource> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CorrespondenceSet set = build_correspondences(pairs[i].pair, filters);
    out.push_back(prepare_source("pair_" + std::to_string(i), pairs[i].pair, std::move(set), grid, rng));
  }
  return out;
}

MatchScores score_sources(Network<float>& net, std::span<const TrainingSource> sources,
                          const GridSpec& grid, int negatives_per_positive, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MatchScores all;
  for (const TrainingSource& src : sources) {
    if (src.set.items.empty()) continue;
    std::vector<Patch> pa, pb;
    for (const Correspondence& c : src.set.items) {
      pa.push_back(extract_patch(src.padded_a, make_grid(src.pair.keypoints_a[c.idx_a], grid), src.pad));
      pb.push_back(extract_patch(src.padded_b, make_grid(src.pair.keypoints_b[c.idx_b], grid), src.pad));
    }
    DescriptorFile fa, fb;
    for (const Descriptor& d : describe(net, pa)) fa.values.insert(fa.values.end(), d.values.begin(), d.values.end());
    for (const Descriptor& d : describe(net, pb)) fb.values.insert(fb.values.end(), d.values.begin(), d.values.end());
    // rows are in correspondence order, so re-index the records
    std::vector<Correspondence> local = src.set.items;
    for (std::size_t i = 0; i < local.size(); ++i) local[i].idx_a = local[i].idx_b = i;
    MatchScores s = score_correspondences(fa, fb, local, negatives_per_positive, rng);
    all.positives.insert(all.positives.end(), s.positives.begin(), s.positives.end());
    all.negatives.insert(all.negatives.end(), s.negatives.begin(), s.negatives.end());
  }
  return all;
}

TrainerOptions trainer_options(const RunConfig& cfg) {
  TrainerOptions t;
  t.optim = cfg.optim();
  t.loss = cfg.loss();
  t.batch.batch_size = cfg.K;
  t.batch.grid = cfg.grid_spec();
  t.batch.jitter_std_deg = cfg.jitter_std_deg;
  t.batches_per_epoch = cfg.batches_per_epoch;
  t.seed = cfg.seed;
  return t;
}

std::uint64_t eval_seed(std::uint64_t seed) { return seed ^ 0x5bd1e9955bd1e995ULL; }

ExperimentResult run_experiment(const RunConfig& cfg,
                                const std::function<void(const EpochStats&)>& on_epoch,
                                Network<float>* net_out) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const GridSpec grid = cfg.grid_spec();
  SynthDatasetOptions data = synth_dataset_options(cfg);

  ExperimentResult result;
  result.kind = grid.kind;
  result.lambda = grid.lambda;
  Network<float> net = build_network<float>(cfg.seed, NetworkOptions{cfg.dropout, 0.6});
  {
    const auto pairs = make_synth_dataset(data, cfg.seed);
    const auto sources = prepare_sources(pairs, grid, cfg.filters(), cfg.seed + 1);
    for (const auto& src : sources) result.train_correspondences += src.set.items.size();
    result.epochs = train(net, sources, trainer_options(cfg), on_epoch);
  }
  data.pairs = cfg.eval_pairs;
  const auto held_out = make_synth_dataset(data, eval_seed(cfg.seed));
  const auto eval_sources = prepare_sources(held_out, grid, cfg.filters(), cfg.seed + 2);
  result.scores = score_sources(net, eval_sources, grid, cfg.negatives_per_positive, cfg.seed + 3);
  result.fpr95 = fpr95(result.scores);
  result.bins = binned_fpr95(result.scores, BinGrid{});
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (net_out != nullptr) *net_out = std::move(net);
  return result;
}

}  // namespace lpdesc
