#include "lpdesc/optim.hpp"

#include <cmath>
#include <string>

#include "lpdesc/error.hpp"

namespace lpdesc {

void validate(const OptimConfig& config) {
  if (!(config.learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) {
    throw ValidationError("momentum must be in [0, 1)");
  }
  if (!(config.weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
  if (config.total_epochs <= 0) throw ValidationError("total_epochs must be positive");
}

double effective_learning_rate(const OptimConfig& config, int epoch) {
  validate(config);
  if (epoch < 0 || epoch >= config.total_epochs) {
    throw ValidationError("epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(config.total_epochs) + ")");
  }
  return config.learning_rate *
         (1.0 - static_cast<double>(epoch) / static_cast<double>(config.total_epochs));
}

template <typename T>
void sgd_step(Param<T>& param, const OptimConfig& config, int epoch) {
  const T lr = static_cast<T>(effective_learning_rate(config, epoch));
  const T momentum = static_cast<T>(config.momentum);
  const T decay = param.decay ? static_cast<T>(config.weight_decay) : T(0);
  for (std::size_t i = 0; i < param.value.size(); ++i) {
    T& v = param.velocity[i];
    v = momentum * v + param.grad[i] + decay * param.value[i];
    param.value[i] -= lr * v;
  }
}

template <typename T>
void sgd_step(std::span<Param<T>* const> params, const OptimConfig& config, int epoch) {
  for (Param<T>* p : params) sgd_step(*p, config, epoch);
}

template void sgd_step(Param<float>&, const OptimConfig&, int);
template void sgd_step(Param<double>&, const OptimConfig&, int);
template void sgd_step(std::span<Param<float>* const>, const OptimConfig&, int);
template void sgd_step(std::span<Param<double>* const>, const OptimConfig&, int);

}  // namespace lpdesc
