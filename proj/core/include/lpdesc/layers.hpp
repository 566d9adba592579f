#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "lpdesc/tensor.hpp"

namespace lpdesc {

/// train: batch statistics, dropout on, running statistics updated.
/// infer: running statistics, dropout off.
/// check: batch statistics, dropout off, no state mutation. Used by the
/// finite-difference harness so repeated evaluations see the same function.
enum class Mode { train, infer, check };

/// A learnable tensor with its gradient and momentum buffers.
template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<T> velocity;
  bool decay = true;  // false for normalization scale/shift

  Param() = default;
  Param(std::string name, std::vector<int> shape, bool decay, T fill = T(0));

  std::size_t size() const { return value.size(); }
};

/// Activations a layer keeps between forward and backward.
template <typename T>
struct LayerCache {
  Tensor4<T> tensor;        // input or output, depending on the layer
  std::vector<T> scalars;   // per-channel / per-sample statistics
  std::vector<std::uint8_t> mask;
};

struct ForwardContext {
  Mode mode = Mode::infer;
  std::mt19937_64* rng = nullptr;  // only dropout draws from it
};

/// Cross-correlation with zero padding; no kernel flip.
template <typename T>
class Conv2d {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad);

  Tensor4<T> forward(const Tensor4<T>& x, const ForwardContext& ctx,
                     LayerCache<T>& cache) const;
  /// Accumulates weight/bias gradients and returns d(input).
  Tensor4<T> backward(const Tensor4<T>& dy, const LayerCache<T>& cache);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }
  int output_extent(int input_extent) const;

  Param<T> weight;  // [out, in, k, k]
  Param<T> bias;    // [out]

 private:
  void check_input(const Tensor4<T>& x) const;

  int in_, out_, kernel_, stride_, pad_;
};

/// Per-channel normalization over (batch, H, W) with learnable scale/shift
/// and exponential-moving-average running statistics.
template <typename T>
class BatchNorm {
 public:
  explicit BatchNorm(int channels, double eps = 1e-5, double momentum = 0.1);

  Tensor4<T> forward(const Tensor4<T>& x, const ForwardContext& ctx,
                     LayerCache<T>& cache);
  Tensor4<T> backward(const Tensor4<T>& dy, const LayerCache<T>& cache);

  int channels() const { return channels_; }
  double eps() const { return eps_; }
  double momentum() const { return momentum_; }

  Param<T> scale;
  Param<T> shift;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  std::uint32_t updates = 0;  // number of train-mode forward passes seen

 private:
  int channels_;
  double eps_;
  double momentum_;
};

/// Per-(sample, channel) standardization over H, W. No learnable state:
/// scale 1, shift 0.
template <typename T>
class InstanceNorm {
 public:
  explicit InstanceNorm(double eps = 1e-10) : eps_(eps) {}

  Tensor4<T> forward(const Tensor4<T>& x, const ForwardContext& ctx,
                     LayerCache<T>& cache) const;
  Tensor4<T> backward(const Tensor4<T>& dy, const LayerCache<T>& cache) const;

  double eps() const { return eps_; }

 private:
  double eps_;
};

template <typename T>
class Relu {
 public:
  Tensor4<T> forward(const Tensor4<T>& x, const ForwardContext& ctx,
                     LayerCache<T>& cache) const;
  Tensor4<T> backward(const Tensor4<T>& dy, const LayerCache<T>& cache) const;
};

/// Inverted dropout: survivors are scaled by 1/(1-rate) in train mode, so
/// infer mode is the identity.
template <typename T>
class Dropout {
 public:
  explicit Dropout(double rate);

  Tensor4<T> forward(const Tensor4<T>& x, const ForwardContext& ctx,
                     LayerCache<T>& cache) const;
  Tensor4<T> backward(const Tensor4<T>& dy, const LayerCache<T>& cache) const;

  double rate() const { return rate_; }

 private:
  double rate_;
};

/// Scales every sample (over C*H*W) to unit Euclidean norm.
template <typename T>
class L2Normalize {
 public:
  explicit L2Normalize(double floor = 1e-8) : floor_(floor) {}

  Tensor4<T> forward(const Tensor4<T>& x, const ForwardContext& ctx,
                     LayerCache<T>& cache) const;
  Tensor4<T> backward(const Tensor4<T>& dy, const LayerCache<T>& cache) const;

  double floor() const { return floor_; }

 private:
  double floor_;
};

template <typename T>
using Layer = std::variant<InstanceNorm<T>, Conv2d<T>, BatchNorm<T>, Relu<T>,
                           Dropout<T>, L2Normalize<T>>;

/// Stable numeric tags; also used by the checkpoint format.
enum class LayerKind : std::uint32_t {
  instance_norm = 1,
  conv2d = 2,
  batch_norm = 3,
  relu = 4,
  dropout = 5,
  l2_normalize = 6,
};

template <typename T>
LayerKind layer_kind(const Layer<T>& layer) {
  return static_cast<LayerKind>(layer.index() + 1);
}

std::string_view to_string(LayerKind kind);

template <typename T>
Tensor4<T> layer_forward(Layer<T>& layer, const Tensor4<T>& x,
                         const ForwardContext& ctx, LayerCache<T>& cache) {
  return std::visit([&](auto& l) { return l.forward(x, ctx, cache); }, layer);
}

template <typename T>
Tensor4<T> layer_backward(Layer<T>& layer, const Tensor4<T>& dy,
                          const LayerCache<T>& cache) {
  return std::visit([&](auto& l) { return l.backward(dy, cache); }, layer);
}

/// Learnable parameters of a layer, in checkpoint order.
template <typename T>
std::vector<Param<T>*> layer_params(Layer<T>& layer);

}  // namespace lpdesc
