#include "lpdesc/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "lpdesc/config.hpp"
#include "lpdesc/datagen.hpp"
#include "lpdesc/error.hpp"
#include "lpdesc/eval.hpp"
#include "lpdesc/experiment.hpp"
#include "lpdesc/gradcheck.hpp"
#include "lpdesc/network.hpp"
#include "lpdesc/training.hpp"
#include "selfcheck.hpp"

namespace fs = std::filesystem;

namespace lpdesc {

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, CommonFlags& c) {
  app->add_option("--config", c.config, "key = value configuration file");
  app->add_option("--seed", c.seed, "overrides the seed key");
  app->add_option("--out", c.out, "output directory (or file for describe)");
  app->add_option("--threads", c.threads, "worker threads (default 1)");
  app->add_option("--set", c.sets, "extra key=value override, repeatable");
}

// Precedence: defaults < config file < --set < dedicated flags.
RunConfig resolve(const CommonFlags& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : read_config(c.config);
  for (const std::string& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  if (c.threads) cfg.set("threads", std::to_string(*c.threads));
  if (!c.out.empty()) cfg.out = c.out;
  cfg.validate();
  return cfg;
}

fs::path require_out(const RunConfig& cfg) {
  if (cfg.out.empty()) throw ValidationError("config key 'out': an output path is required");
  return cfg.out;
}

fs::path prepare_out_dir(const RunConfig& cfg) {
  const fs::path dir = require_out(cfg);
  fs::create_directories(dir);
  write_config(dir / "config.resolved.txt", cfg);
  return dir;
}

std::vector<fs::path> read_index(const fs::path& index) {
  std::ifstream in(index);
  if (!in) throw ValidationError("cannot open dataset index " + index.string());
  std::vector<fs::path> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    fs::path p = line.substr(first, last - first + 1);
    out.push_back(p.is_relative() ? index.parent_path() / p : p);
  }
  if (out.empty()) throw ValidationError("dataset index " + index.string() + " lists no pairs");
  return out;
}

std::vector<TrainingSource> load_sources(const RunConfig& cfg) {
  const GridSpec grid = cfg.grid_spec();
  if (cfg.dataset.empty()) {
    const auto pairs = make_synth_dataset(synth_dataset_options(cfg), cfg.seed);
    return prepare_sources(pairs, grid, cfg.filters(), cfg.seed + 1);
  }
  std::mt19937_64 rng(cfg.seed + 1);
  std::vector<TrainingSource> out;
  for (const fs::path& manifest_path : read_index(cfg.dataset)) {
    const PairManifest m = read_manifest(manifest_path);
    ViewPair pair = load_view_pair(m);
    CorrespondenceSet set = m.correspondences ? read_correspondences(*m.correspondences)
                                              : build_correspondences(pair, cfg.filters());
    out.push_back(prepare_source(manifest_path.parent_path().filename().string(), std::move(pair),
                                 std::move(set), grid, rng));
  }
  return out;
}

// ---------------------------------------------------------------- synth

int run_synth(const RunConfig& cfg, bool eval_split, std::ostream& out) {
  const fs::path dir = prepare_out_dir(cfg);
  SynthDatasetOptions opts = synth_dataset_options(cfg);
  std::uint64_t seed = cfg.seed;
  if (eval_split) {
    opts.pairs = cfg.eval_pairs;
    seed = eval_seed(cfg.seed);
  }
  const auto pairs = make_synth_dataset(opts, seed);
  std::ofstream index(dir / "dataset.txt");
  index << "# one pair manifest per line, relative to this file\n";
  std::size_t total = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::ostringstream name;
    name << "pair_" << std::setw(3) << std::setfill('0') << i;
    const CorrespondenceSet set = build_correspondences(pairs[i].pair, cfg.filters());
    total += set.items.size();
    write_view_pair(dir / name.str(), pairs[i].pair, set);
    index << name.str() << "/manifest.txt\n";
  }
  if (!index) throw Error("failed writing dataset index");
  out << "wrote " << pairs.size() << " pairs, " << total << " correspondences to " << dir.string()
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

int run_train(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = prepare_out_dir(cfg);
  const auto sources = load_sources(cfg);
  std::size_t total = 0;
  for (const auto& s : sources) total += s.set.items.size();
  if (total < static_cast<std::size_t>(cfg.K)) {
    throw ValidationError("config key 'K': batch size " + std::to_string(cfg.K) + " exceeds the " +
                          std::to_string(total) + " available correspondences");
  }
  Network<float> net = build_network<float>(cfg.seed, NetworkOptions{cfg.dropout, 0.6});
  std::ofstream log(dir / "loss.csv");
  log << "epoch,mean_loss,batches,mean_active,seconds\n";
  train(net, sources, trainer_options(cfg), [&](const EpochStats& e) {
    std::ostringstream name;
    name << "epoch_" << std::setw(3) << std::setfill('0') << e.epoch << ".lpnet";
    save_checkpoint(net, dir / name.str());
    log << e.epoch << ',' << std::setprecision(10) << e.mean_loss << ',' << e.batches << ','
        << e.mean_active << ',' << e.seconds << '\n'
        << std::flush;
    out << "epoch " << e.epoch << " loss " << e.mean_loss << " (" << e.seconds << " s)\n";
  });
  save_checkpoint(net, dir / "model.lpnet");
  return kExitOk;
}

// ---------------------------------------------------------------- describe

bool is_image_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return fs::is_regular_file(p) && (ext == ".pgm" || ext == ".lpim");
}

int run_describe(const RunConfig& cfg, const fs::path& images, const fs::path& keypoints,
                 std::ostream& out) {
  const fs::path out_file = require_out(cfg);
  std::vector<std::pair<fs::path, fs::path>> jobs;  // image, keypoint file
  if (fs::is_directory(images)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images)) {
      if (is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (!fs::is_directory(keypoints)) {
      throw ValidationError("--keypoints must be a directory when --images is one");
    }
    for (const auto& f : files) jobs.emplace_back(f, keypoints / (f.stem().string() + ".kp"));
  } else if (fs::is_regular_file(images)) {
    jobs.emplace_back(images, fs::is_directory(keypoints)
                                  ? keypoints / (images.stem().string() + ".kp")
                                  : keypoints);
  } else {
    throw ValidationError("--images: no such file or directory: " + images.string());
  }

  const GridSpec grid = cfg.grid_spec();
  std::vector<Patch> patches;
  std::vector<Keypoint> all_kps;
  std::vector<std::string> tags;
  for (const auto& [image_path, kp_path] : jobs) {
    if (!fs::exists(kp_path)) throw ValidationError("missing keypoint file " + kp_path.string());
    const auto kps = read_keypoints(kp_path);
    if (kps.empty()) continue;
    const Image img = read_image(image_path);
    double support = 0.0;
    for (const auto& kp : kps) support = std::max(support, support_radius(kp, grid.lambda));
    const int limit = std::min(img.height(), img.width()) - 1;
    const int pad = std::clamp(static_cast<int>(std::ceil(support + 2.0)), 0, limit);
    const Image padded = mirror_pad(img, pad);
    for (const auto& kp : kps) {
      patches.push_back(extract_patch(padded, make_grid(kp, grid), pad));
      all_kps.push_back(kp);
      tags.push_back(image_path.stem().string());
    }
  }

  std::vector<Descriptor> descs;
  if (!patches.empty()) {
    const std::string ckpt = cfg.checkpoint;
    if (ckpt.empty()) throw ValidationError("config key 'checkpoint': a trained network is required");
    Network<float> net = load_checkpoint(ckpt);
    validate_architecture(net);
    descs = describe(net, patches);
  }
  if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
  write_descriptor_file(out_file, descs, grid.kind, grid.lambda, all_kps, tags);
  fs::path snapshot = out_file;
  snapshot += ".config.txt";
  write_config(snapshot, cfg);
  out << "wrote " << descs.size() << " descriptors to " << out_file.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- evaluation

struct EvalInputs {
  std::string scores;
  std::string desc_a, desc_b, correspondences;
  std::string pairs;
  std::string method = "lpdesc";
};

void add_eval_inputs(CLI::App* app, EvalInputs& in, bool allow_scores) {
  if (allow_scores) {
    app->add_option("--scores", in.scores,
                    "text file of 'pos DIST [SCALE_RATIO ORIENT_DEG]' and 'neg DIST' lines");
  }
  app->add_option("--desc-a", in.desc_a, "LPDESC1 file of view a");
  app->add_option("--desc-b", in.desc_b, "LPDESC1 file of view b");
  app->add_option("--correspondences", in.correspondences, "correspondence file");
  app->add_option("--pairs", in.pairs, "list of 'desc_a desc_b correspondences' lines");
  app->add_option("--method", in.method, "method label for the CSV");
}

MatchScores read_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scores file " + path.string());
  MatchScores s;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    double d = 0.0;
    if (!(ls >> d)) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": missing distance");
    if (tag == "pos") {
      PositiveScore p{d, 1.0, 0.0};
      ls >> p.scale_ratio >> p.orientation_residual_deg;
      s.positives.push_back(p);
    } else if (tag == "neg") {
      s.negatives.push_back(d);
    } else {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected pos or neg");
    }
  }
  return s;
}

struct DescriptorPair {
  DescriptorFile a, b;
  std::vector<Correspondence> items;
};

std::vector<DescriptorPair> load_descriptor_pairs(const EvalInputs& in) {
  std::vector<std::array<fs::path, 3>> specs;
  if (!in.pairs.empty()) {
    std::ifstream list(in.pairs);
    if (!list) throw ValidationError("cannot open pair list " + in.pairs);
    const fs::path base = fs::path(in.pairs).parent_path();
    std::string line;
    while (std::getline(list, line)) {
      std::istringstream ls(line);
      std::array<std::string, 3> f;
      if (!(ls >> f[0]) || f[0][0] == '#') continue;
      if (!(ls >> f[1] >> f[2])) throw ValidationError("pair list lines need three paths: " + line);
      std::array<fs::path, 3> p;
      for (int i = 0; i < 3; ++i) p[i] = fs::path(f[i]).is_relative() ? base / f[i] : fs::path(f[i]);
      specs.push_back(p);
    }
  } else if (!in.desc_a.empty() && !in.desc_b.empty() && !in.correspondences.empty()) {
    specs.push_back({in.desc_a, in.desc_b, in.correspondences});
  } else {
    throw ValidationError("need --desc-a, --desc-b and --correspondences, or --pairs");
  }
  std::vector<DescriptorPair> out;
  for (const auto& p : specs) {
    DescriptorPair dp{read_descriptor_file(p[0]), read_descriptor_file(p[1]),
                      read_correspondences(p[2]).items};
    if (!out.empty()) {
      const auto& first = out.front().a;
      if (first.kind != dp.a.kind || first.lambda != dp.a.lambda) {
        throw ValidationError("descriptor files mix grid kinds or lambda values");
      }
    }
    out.push_back(std::move(dp));
  }
  return out;
}

MatchScores gather_scores(const EvalInputs& in, const RunConfig& cfg, DescriptorFile* meta) {
  if (!in.scores.empty()) return read_scores(in.scores);
  std::mt19937_64 rng(cfg.seed);
  MatchScores all;
  for (const auto& dp : load_descriptor_pairs(in)) {
    const MatchScores s = score_correspondences(dp.a, dp.b, dp.items, cfg.negatives_per_positive, rng);
    all.positives.insert(all.positives.end(), s.positives.begin(), s.positives.end());
    all.negatives.insert(all.negatives.end(), s.negatives.begin(), s.negatives.end());
    if (meta != nullptr) {
      meta->kind = dp.a.kind;
      meta->lambda = dp.a.lambda;
    }
  }
  return all;
}

int run_eval_fpr95(const RunConfig& cfg, const EvalInputs& in, std::ostream& out) {
  DescriptorFile meta;
  const MatchScores scores = gather_scores(in, cfg, &meta);
  const double value = fpr95(scores);
  out << value << "\n";
  if (!cfg.out.empty()) {
    const fs::path dir = prepare_out_dir(cfg);
    MetricRow row{in.method, meta.kind.value_or(cfg.grid_spec().kind),
                  meta.lambda.value_or(cfg.resolved_lambda()), value, scores.positives.size(),
                  scores.negatives.size()};
    write_metrics_csv(dir / "metrics.csv", std::span<const MetricRow>(&row, 1));
  }
  return kExitOk;
}

int run_eval_bins(const RunConfig& cfg, const EvalInputs& in, std::ostream& out) {
  const fs::path dir = prepare_out_dir(cfg);
  const MatchScores scores = gather_scores(in, cfg, nullptr);
  const BinGrid grid = binned_fpr95(scores, BinGrid{});
  write_bins_csv(dir / "bins.csv", grid);
  int low = 0;
  for (const auto& c : grid.cells) low += c.low_confidence ? 1 : 0;
  out << grid.cells.size() << " cells (" << low << " low-confidence), " << grid.outside
      << " positives outside the grid\n";
  return kExitOk;
}

int run_eval_retrieval(const RunConfig& cfg, const EvalInputs& in, std::ostream& out) {
  const fs::path dir = prepare_out_dir(cfg);
  const RetrievalConfig rc = cfg.retrieval();
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> ranks;
  for (const auto& dp : load_descriptor_pairs(in)) {
    if (dp.b.keypoints.empty() && dp.b.count() > 0) {
      throw ValidationError("retrieval needs the sidecar keypoints of the view-b descriptors");
    }
    std::vector<Correspondence> items = dp.items;
    std::shuffle(items.begin(), items.end(), rng);
    if (items.size() > static_cast<std::size_t>(rc.matches)) items.resize(rc.matches);
    const auto d = static_cast<std::size_t>(dp.a.dim);
    std::vector<float> queries, matches, distractors;
    std::vector<Keypoint> endpoints;
    for (const auto& c : items) {
      if (c.idx_a >= dp.a.count() || c.idx_b >= dp.b.count()) {
        throw ValidationError("correspondence index beyond descriptor count");
      }
      const auto qa = dp.a.row(c.idx_a);
      const auto mb = dp.b.row(c.idx_b);
      queries.insert(queries.end(), qa.begin(), qa.end());
      matches.insert(matches.end(), mb.begin(), mb.end());
      endpoints.push_back(dp.b.keypoints[c.idx_b]);
    }
    auto pool = select_distractors(dp.b.keypoints, endpoints, rc.exclusion_px);
    std::shuffle(pool.begin(), pool.end(), rng);
    if (pool.size() > static_cast<std::size_t>(rc.distractors)) pool.resize(rc.distractors);
    for (std::size_t j : pool) {
      const auto row = dp.b.row(j);
      distractors.insert(distractors.end(), row.begin(), row.end());
    }
    const auto r = retrieval_ranks(queries, matches, distractors, static_cast<int>(d));
    ranks.insert(ranks.end(), r.begin(), r.end());
  }
  const RankSummary summary = summarize_ranks(ranks);
  write_ranks_csv(dir / "ranks.csv", summary);
  out << "queries " << summary.queries << " rank1 " << summary.rank1 << " mean_rank "
      << summary.mean_rank << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

int run_gradcheck(const RunConfig& cfg, int fault_layer, std::ostream& out) {
  GradCheckOptions opts;
  opts.seed = cfg.seed;
  opts.fault_layer = fault_layer;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_tensor = [&](int n, int c, int h, int w) {
    Tensor4<double> t(n, c, h, w);
    for (auto& v : t.values()) v = normal(rng);
    return t;
  };
  double worst = 0.0;
  std::string worst_label;
  auto note = [&](const std::string& name, const GradCheckReport& r) {
    out << std::left << std::setw(16) << name << " max relative error " << std::scientific
        << std::setprecision(3) << r.max_relative_error << std::defaultfloat << "\n";
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      worst_label = name + " " + r.worst;
    }
  };
  if (fault_layer < 0) {
    std::vector<std::pair<std::string, Layer<double>>> layers;
    layers.emplace_back("instance_norm", InstanceNorm<double>{});
    Conv2d<double> conv(2, 3, 3, 2, 1);
    for (auto& v : conv.weight.value) v = normal(rng) * 0.3;
    for (auto& v : conv.bias.value) v = normal(rng) * 0.1;
    layers.emplace_back("conv2d", std::move(conv));
    BatchNorm<double> bn(2);
    for (auto& v : bn.scale.value) v = 1.0 + 0.3 * normal(rng);
    for (auto& v : bn.shift.value) v = 0.3 * normal(rng);
    layers.emplace_back("batch_norm", std::move(bn));
    layers.emplace_back("relu", Relu<double>{});
    layers.emplace_back("dropout", Dropout<double>(0.1));
    layers.emplace_back("l2_normalize", L2Normalize<double>{});
    for (auto& [name, layer] : layers) note(name, check_layer(layer, random_tensor(3, 2, 6, 6), opts));
  }
  Network<double> net = build_network<double>(cfg.seed);
  note("network+loss",
       check_network_loss(net, random_tensor(4, 1, kPatchSize, kPatchSize),
                          random_tensor(4, 1, kPatchSize, kPatchSize), cfg.loss(), opts));
  out << "worst " << std::scientific << std::setprecision(3) << worst << std::defaultfloat << " ("
      << worst_label << ")\n";
  return worst < 1e-4 ? kExitOk : kExitRuntime;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"lpdesc: log-polar local descriptors"};
  app.require_subcommand(1);
  CommonFlags common;

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset of view pairs");
  add_common(synth, common);
  bool eval_split = false;
  synth->add_flag("--eval-split", eval_split, "write the held-out evaluation pairs instead");

  auto* train_cmd = app.add_subcommand("train", "train a descriptor network");
  add_common(train_cmd, common);
  std::string dataset;
  train_cmd->add_option("--dataset", dataset, "dataset index written by synth");

  auto* describe_cmd = app.add_subcommand("describe", "compute descriptors for keypoints");
  add_common(describe_cmd, common);
  std::string images, keypoints, checkpoint;
  describe_cmd->add_option("--images", images, "image file or directory")->required();
  describe_cmd->add_option("--keypoints", keypoints, "keypoint file or directory")->required();
  describe_cmd->add_option("--checkpoint", checkpoint, "LPNET1 network");

  EvalInputs fpr_in, bins_in, ret_in;
  auto* fpr_cmd = app.add_subcommand("eval-fpr95", "false positive rate at 95% recall");
  add_common(fpr_cmd, common);
  add_eval_inputs(fpr_cmd, fpr_in, true);
  auto* bins_cmd = app.add_subcommand("eval-bins", "FPR95 per scale / orientation bin");
  add_common(bins_cmd, common);
  add_eval_inputs(bins_cmd, bins_in, true);
  auto* ret_cmd = app.add_subcommand("eval-retrieval", "rank of the true match among distractors");
  add_common(ret_cmd, common);
  add_eval_inputs(ret_cmd, ret_in, false);

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(grad_cmd, common);
  int fault = -1;
  grad_cmd->add_option("--fault", fault, "negate the gradient leaving this network layer");

  auto* self_cmd = app.add_subcommand("selfcheck", "quick invariant suite");
  add_common(self_cmd, common);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  RunConfig cfg = resolve(common);
  if (synth->parsed()) return run_synth(cfg, eval_split, out);
  if (train_cmd->parsed()) {
    if (!dataset.empty()) cfg.dataset = dataset;
    return run_train(cfg, out);
  }
  if (describe_cmd->parsed()) {
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    return run_describe(cfg, images, keypoints, out);
  }
  if (fpr_cmd->parsed()) return run_eval_fpr95(cfg, fpr_in, out);
  if (bins_cmd->parsed()) return run_eval_bins(cfg, bins_in, out);
  if (ret_cmd->parsed()) return run_eval_retrieval(cfg, ret_in, out);
  if (grad_cmd->parsed()) return run_gradcheck(cfg, fault, out);
  if (self_cmd->parsed()) return run_selfcheck(cfg.seed, out) ? kExitOk : kExitRuntime;
  return kExitValidation;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DecodeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace lpdesc
