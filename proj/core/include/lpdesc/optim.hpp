#pragma once

#include <span>

#include "lpdesc/layers.hpp"

namespace lpdesc {

struct OptimConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int total_epochs = 20;
};

void validate(const OptimConfig& config);

/// base_lr * (1 - epoch / total_epochs). Throws for epoch >= total_epochs.
double effective_learning_rate(const OptimConfig& config, int epoch);

/// Classic momentum: v <- m*v + g + wd*theta (decay skipped for
/// normalization parameters), theta <- theta - lr_eff * v.
template <typename T>
void sgd_step(Param<T>& param, const OptimConfig& config, int epoch);

template <typename T>
void sgd_step(std::span<Param<T>* const> params, const OptimConfig& config, int epoch);

}  // namespace lpdesc
