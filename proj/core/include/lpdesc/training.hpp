#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lpdesc/datagen.hpp"
#include "lpdesc/network.hpp"
#include "lpdesc/optim.hpp"
#include "lpdesc/triplet.hpp"

namespace lpdesc {

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  int batches = 0;
  double mean_active = 0.0;  // average number of active hinge terms per batch
  double seconds = 0.0;
};

/// Yields the next batch of the epoch, or nullopt when the epoch is over.
using BatchStream = std::function<std::optional<PatchPairBatch>()>;

/// One optimizer step: forward both sides in train mode, mine, backpropagate
/// and update. Returns the batch loss and the number of active terms.
/// Throws DivergenceError on a non-finite loss.
std::pair<double, int> train_step(Network<float>& net, const PatchPairBatch& batch,
                                  const OptimConfig& optim, const TripletLossConfig& loss, int epoch,
                                  int batch_index = 0);

EpochStats train_epoch(Network<float>& net, const BatchStream& batches, const OptimConfig& optim,
                       const TripletLossConfig& loss, int epoch);

struct TrainerOptions {
  OptimConfig optim;
  TripletLossConfig loss;
  BatchOptions batch;
  int batches_per_epoch = 0;  // 0: total correspondences / batch size
  std::uint64_t seed = 1;     // batch sampling and augmentation stream
};

/// Runs optim.total_epochs epochs over the sources; `on_epoch` (if set) is
/// called after every epoch, e.g. to write checkpoints.
std::vector<EpochStats> train(Network<float>& net, std::span<const TrainingSource> sources,
                              const TrainerOptions& options,
                              const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace lpdesc
