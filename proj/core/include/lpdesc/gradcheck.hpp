#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lpdesc/layers.hpp"
#include "lpdesc/network.hpp"
#include "lpdesc/triplet.hpp"

namespace lpdesc {

struct GradCheckOptions {
  double step = 1e-5;
  int probes = 240;           // parameters + inputs sampled per check
  double abs_floor = 1e-6;    // denominators below this are treated as this
  std::uint64_t seed = 7;
  /// Negates the gradient leaving one layer (index into the layer stack)
  /// during the analytic pass. -1 disables. Used to prove the harness
  /// notices a broken backward.
  int fault_layer = -1;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  int probes = 0;
  int skipped = 0;    // probes whose perturbation crossed a kink
  std::string worst;  // label of the worst probe
};

/// One scalar the harness may perturb, with its analytic derivative.
struct Probe {
  double* value = nullptr;
  double analytic = 0.0;
  std::string label;
};

/// Identifies the linear piece a piecewise-smooth objective is on (ReLU
/// masks, mined negatives, active hinge terms).
using RegimeSignature = std::function<std::uint64_t()>;

/// Central differences (f(x+h) - f(x-h)) / 2h for every probe; relative
/// error |a - n| / max(|a|, |n|, abs_floor). With a signature, probes whose
/// perturbation changes it are skipped (the difference quotient straddles a
/// kink there), and checking stops once options.probes probes were measured.
GradCheckReport finite_diff_check(std::span<Probe> probes, const std::function<double()>& objective,
                                  const GradCheckOptions& options,
                                  const RegimeSignature& signature = {});

/// Checks one layer on `input` against the objective sum(w * layer(input))
/// with fixed random weights w. Runs in Mode::check.
GradCheckReport check_layer(Layer<double>& layer, const Tensor4<double>& input,
                            const GradCheckOptions& options);

/// Checks the whole network followed by hardest-in-batch triplet loss on a
/// pair batch. Inputs are re-jittered (bounded number of retries) until no
/// hinge term or argmin sits within reach of the perturbation.
GradCheckReport check_network_loss(Network<double>& net, Tensor4<double> patches_a,
                                   Tensor4<double> patches_b, const TripletLossConfig& loss,
                                   const GradCheckOptions& options);

}  // namespace lpdesc
