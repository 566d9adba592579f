#include "lpdesc/training.hpp"

#include <chrono>
#include <cmath>

#include "lpdesc/error.hpp"

namespace lpdesc {

namespace {

DescriptorMatrix<float> as_matrix(const Tensor4<float>& y) {
  DescriptorMatrix<float> m(y.n(), static_cast<Eigen::Index>(y.sample_size()));
  std::copy(y.data(), y.data() + y.size(), m.data());
  return m;
}

Tensor4<float> as_tensor(const DescriptorMatrix<float>& m, const Tensor4<float>& like) {
  Tensor4<float> t(like.n(), like.c(), like.h(), like.w());
  std::copy(m.data(), m.data() + m.size(), t.data());
  return t;
}

}  // namespace

std::pair<double, int> train_step(Network<float>& net, const PatchPairBatch& batch,
                                  const OptimConfig& optim, const TripletLossConfig& loss, int epoch,
                                  int batch_index) {
  validate_batch(batch);
  if (batch.a.size() < 2) throw ValidationError("training batch needs at least 2 pairs");
  ForwardTape<float> tape_a;
  ForwardTape<float> tape_b;
  const Tensor4<float> ya = net.forward(patches_to_tensor<float>(batch.a), Mode::train, &tape_a);
  const Tensor4<float> yb = net.forward(patches_to_tensor<float>(batch.b), Mode::train, &tape_b);
  const auto result = triplet_loss(as_matrix(ya), as_matrix(yb), loss);
  if (!std::isfinite(result.loss)) {
    throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                          std::to_string(batch_index));
  }
  net.zero_grad();
  net.backward(tape_a, as_tensor(result.grad_a, ya));
  net.backward(tape_b, as_tensor(result.grad_b, yb));
  const auto params = net.params();
  sgd_step<float>(params, optim, epoch);
  return {result.loss, result.active};
}

EpochStats train_epoch(Network<float>& net, const BatchStream& batches, const OptimConfig& optim,
                       const TripletLossConfig& loss, int epoch) {
  const auto start = std::chrono::steady_clock::now();
  EpochStats stats;
  stats.epoch = epoch;
  double total = 0.0;
  double active = 0.0;
  while (auto batch = batches()) {
    const auto [l, a] = train_step(net, *batch, optim, loss, epoch, stats.batches);
    total += l;
    active += a;
    ++stats.batches;
  }
  if (stats.batches > 0) {
    stats.mean_loss = total / stats.batches;
    stats.mean_active = active / stats.batches;
  }
  stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

std::vector<EpochStats> train(Network<float>& net, std::span<const TrainingSource> sources,
                              const TrainerOptions& options,
                              const std::function<void(const EpochStats&)>& on_epoch) {
  validate(options.optim);
  std::size_t total = 0;
  for (const auto& s : sources) total += s.set.items.size();
  const int per_epoch =
      options.batches_per_epoch > 0
          ? options.batches_per_epoch
          : std::max(1, static_cast<int>(total / static_cast<std::size_t>(options.batch.batch_size)));
  std::mt19937_64 rng(options.seed);
  std::vector<EpochStats> history;
  for (int epoch = 0; epoch < options.optim.total_epochs; ++epoch) {
    int served = 0;
    BatchStream stream = [&]() -> std::optional<PatchPairBatch> {
      if (served == per_epoch) return std::nullopt;
      ++served;
      return assemble_batch(sources, options.batch, rng);
    };
    history.push_back(train_epoch(net, stream, options.optim, options.loss, epoch));
    if (on_epoch) on_epoch(history.back());
  }
  return history;
}

}  // namespace lpdesc
