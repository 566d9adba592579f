#include "lpdesc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lpdesc/error.hpp"

namespace lpdesc {

GradCheckReport finite_diff_check(std::span<Probe> probes, const std::function<double()>& objective,
                                  const GradCheckOptions& options,
                                  const RegimeSignature& signature) {
  GradCheckReport report;
  const std::uint64_t base = signature ? signature() : 0;
  for (Probe& p : probes) {
    if (signature && report.probes >= options.probes) break;
    const double original = *p.value;
    *p.value = original + options.step;
    const double plus = objective();
    const bool plus_same = !signature || signature() == base;
    *p.value = original - options.step;
    const double minus = objective();
    const bool minus_same = !signature || signature() == base;
    *p.value = original;
    if (!plus_same || !minus_same) {
      ++report.skipped;
      continue;
    }
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double denom =
        std::max({std::abs(p.analytic), std::abs(numeric), options.abs_floor});
    const double err = std::abs(p.analytic - numeric) / denom;
    if (!std::isfinite(err) || err > report.max_relative_error) {
      report.max_relative_error = std::isfinite(err) ? err : INFINITY;
      report.worst = p.label;
    }
    ++report.probes;
  }
  return report;
}

namespace {

struct Candidate {
  double* value;
  const double* grad;  // analytic derivative lives here after backward
  std::string label;
};

std::vector<Candidate> choose(std::vector<Candidate> all, int count, std::mt19937_64& rng) {
  if (static_cast<int>(all.size()) <= count) return all;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(count));
  return all;
}

void add_param_candidates(std::vector<Candidate>& out, Param<double>& p, const std::string& prefix) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.push_back({&p.value[i], &p.grad[i], prefix + p.name + "[" + std::to_string(i) + "]"});
  }
}

void add_input_candidates(std::vector<Candidate>& out, Tensor4<double>& x, const Tensor4<double>& dx,
                          const std::string& prefix) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.push_back({x.data() + i, dx.data() + i, prefix + "input[" + std::to_string(i) + "]"});
  }
}

std::vector<Probe> to_probes(const std::vector<Candidate>& chosen) {
  std::vector<Probe> probes;
  probes.reserve(chosen.size());
  for (const auto& c : chosen) probes.push_back({c.value, *c.grad, c.label});
  return probes;
}

}  // namespace

GradCheckReport check_layer(Layer<double>& layer, const Tensor4<double>& input,
                            const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const ForwardContext ctx{Mode::check, nullptr};

  Tensor4<double> x = input;
  LayerCache<double> cache;
  const Tensor4<double> y0 = layer_forward(layer, x, ctx, cache);
  std::vector<double> weights(y0.size());
  for (double& w : weights) w = normal(rng);

  auto objective = [&]() {
    LayerCache<double> scratch;
    const Tensor4<double> y = layer_forward(layer, x, ctx, scratch);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += weights[i] * y[i];
    return s;
  };

  auto params = layer_params(layer);
  for (Param<double>* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  Tensor4<double> dy(y0.n(), y0.c(), y0.h(), y0.w());
  std::copy(weights.begin(), weights.end(), dy.data());
  Tensor4<double> dx = layer_backward(layer, dy, cache);
  if (options.fault_layer >= 0) {
    for (auto& v : dx.values()) v = -v;
    for (Param<double>* p : params) {
      for (auto& g : p->grad) g = -g;
    }
  }

  std::vector<Candidate> all;
  for (Param<double>* p : params) add_param_candidates(all, *p, "");
  add_input_candidates(all, x, dx, "");
  auto probes = to_probes(choose(std::move(all), options.probes, rng));
  return finite_diff_check(probes, objective, options);
}

namespace {

// Smallest distance between a hinge term and zero, or between a mined
// negative and its runner-up; both must stay clear of the perturbation.
double selection_margin(const DescriptorMatrix<double>& fa, const DescriptorMatrix<double>& fb,
                        const TripletLossConfig& loss) {
  const DistanceMatrix d = distance_matrix(fa, fb);
  const auto pos = positive_distances(fa, fb);
  const auto triplets = mine_hardest_in_batch(d);
  double margin = INFINITY;
  const int k = d.size;
  for (int i = 0; i < k; ++i) {
    const auto& t = triplets[static_cast<std::size_t>(i)];
    const double p = loss.distance_power == 2 ? pos[i] * pos[i] : pos[i];
    const double n = loss.distance_power == 2 ? t.negative_distance * t.negative_distance
                                              : t.negative_distance;
    margin = std::min(margin, std::abs(loss.margin + p - n));
    std::vector<double> cands;
    for (int j = 0; j < k; ++j) {
      if (j == i) continue;
      cands.push_back(d(i, j));
      cands.push_back(d(j, i));
    }
    std::sort(cands.begin(), cands.end());
    if (cands.size() >= 2) margin = std::min(margin, cands[1] - cands[0]);
  }
  return margin;
}

DescriptorMatrix<double> as_matrix(const Tensor4<double>& y) {
  DescriptorMatrix<double> m(y.n(), static_cast<Eigen::Index>(y.sample_size()));
  std::copy(y.data(), y.data() + y.size(), m.data());
  return m;
}

Tensor4<double> as_tensor(const DescriptorMatrix<double>& m, const Tensor4<double>& like) {
  Tensor4<double> t(like.n(), like.c(), like.h(), like.w());
  std::copy(m.data(), m.data() + m.size(), t.data());
  return t;
}

Tensor4<double> backward_with_fault(Network<double>& net, const ForwardTape<double>& tape,
                                    const Tensor4<double>& dy, int fault_layer) {
  Tensor4<double> g = dy;
  auto& layers = net.layers();
  for (std::size_t i = layers.size(); i-- > 0;) {
    g = layer_backward(layers[i], g, tape.caches[i]);
    if (static_cast<int>(i) == fault_layer) {
      for (auto& v : g.values()) v = -v;
    }
  }
  return g;
}

}  // namespace

GradCheckReport check_network_loss(Network<double>& net, Tensor4<double> patches_a,
                                   Tensor4<double> patches_b, const TripletLossConfig& loss,
                                   const GradCheckOptions& options) {
  if (!patches_a.same_shape(patches_b)) throw ValidationError("gradcheck: batch shape mismatch");
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> jitter(0.0, 0.05);

  auto descriptors = [&](const Tensor4<double>& x, ForwardTape<double>* tape) {
    return as_matrix(net.forward(x, Mode::check, tape));
  };

  // The mined selection and the hinge are piecewise; keep clear of kinks.
  const double clearance = 1e3 * options.step;
  for (int attempt = 0;; ++attempt) {
    const double m = selection_margin(descriptors(patches_a, nullptr),
                                      descriptors(patches_b, nullptr), loss);
    if (m > clearance) break;
    if (attempt == 20) throw Error("gradcheck: could not move inputs away from loss kinks");
    for (auto& v : patches_a.values()) v += jitter(rng);
  }

  // The objective also records its regime so that the signature is free.
  std::uint64_t regime = 0;
  auto objective = [&]() {
    ForwardTape<double> ta, tb;
    const auto fa = descriptors(patches_a, &ta);
    const auto fb = descriptors(patches_b, &tb);
    const auto r = triplet_loss(fa, fb, loss);
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) { h = (h ^ v) * 1099511628211ULL; };
    for (const ForwardTape<double>* t : {&ta, &tb}) {
      for (std::size_t i = 0; i < t->caches.size(); ++i) {
        if (!std::holds_alternative<Relu<double>>(net.layers()[i])) continue;
        for (double v : t->caches[i].tensor.values()) mix(v > 0.0 ? 1 : 0);
      }
    }
    for (const auto& t : r.triplets) {
      mix(static_cast<std::uint64_t>(t.anchor));
      mix(static_cast<std::uint64_t>(t.negative));
    }
    mix(static_cast<std::uint64_t>(r.active));
    regime = h;
    return r.loss;
  };
  const RegimeSignature signature = [&]() { return regime; };

  net.zero_grad();
  ForwardTape<double> tape_a;
  ForwardTape<double> tape_b;
  const Tensor4<double> ya = net.forward(patches_a, Mode::check, &tape_a);
  const Tensor4<double> yb = net.forward(patches_b, Mode::check, &tape_b);
  const auto result = triplet_loss(as_matrix(ya), as_matrix(yb), loss);
  const Tensor4<double> dxa =
      backward_with_fault(net, tape_a, as_tensor(result.grad_a, ya), options.fault_layer);
  const Tensor4<double> dxb =
      backward_with_fault(net, tape_b, as_tensor(result.grad_b, yb), options.fault_layer);

  std::vector<Candidate> all;
  int layer_index = 0;
  for (auto& layer : net.layers()) {
    for (Param<double>* p : layer_params(layer)) {
      add_param_candidates(all, *p, "layer" + std::to_string(layer_index) + ".");
    }
    ++layer_index;
  }
  add_input_candidates(all, patches_a, dxa, "a.");
  add_input_candidates(all, patches_b, dxb, "b.");
  // Spare candidates stand in for probes skipped at kinks.
  auto probes = to_probes(choose(std::move(all), 4 * options.probes, rng));
  objective();  // sets the baseline regime
  return finite_diff_check(probes, objective, options, signature);
}

}  // namespace lpdesc
