#include "lpdesc/network.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "lpdesc/error.hpp"

namespace lpdesc {

template <typename T>
Network<T>::Network(std::vector<Layer<T>> layers, std::uint64_t seed)
    : layers_(std::move(layers)), rng_(seed) {}

template <typename T>
Tensor4<T> Network<T>::forward(const Tensor4<T>& x, Mode mode, ForwardTape<T>* tape) {
  ForwardContext ctx{mode, &rng_};
  ForwardTape<T> scratch;
  ForwardTape<T>& t = tape != nullptr ? *tape : scratch;
  t.caches.assign(layers_.size(), LayerCache<T>{});
  Tensor4<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layer_forward(layers_[i], h, ctx, t.caches[i]);
  }
  return h;
}

template <typename T>
Tensor4<T> Network<T>::backward(const ForwardTape<T>& tape, const Tensor4<T>& dy) {
  if (tape.caches.size() != layers_.size()) {
    throw ValidationError("backward: tape does not belong to this network");
  }
  Tensor4<T> g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layer_backward(layers_[i], g, tape.caches[i]);
  }
  return g;
}

template <typename T>
std::vector<Param<T>*> Network<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& layer : layers_) {
    for (Param<T>* p : layer_params(layer)) out.push_back(p);
  }
  return out;
}

template <typename T>
void Network<T>::zero_grad() {
  for (Param<T>* p : params()) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <typename T>
int Network<T>::conv_count() const {
  return static_cast<int>(std::count_if(layers_.begin(), layers_.end(), [](const auto& l) {
    return std::holds_alternative<Conv2d<T>>(l);
  }));
}

template <typename T>
bool Network<T>::has_running_statistics() const {
  return std::all_of(layers_.begin(), layers_.end(), [](const auto& l) {
    const auto* bn = std::get_if<BatchNorm<T>>(&l);
    return bn == nullptr || bn->updates > 0;
  });
}

namespace {

// Orthogonal rows (or columns, whichever is shorter) scaled by `gain`.
template <typename T>
void orthogonal_init(Param<T>& weight, double gain, std::mt19937_64& rng) {
  const int rows = weight.shape[0];
  const int cols = static_cast<int>(weight.size()) / rows;
  const bool wide = rows < cols;
  const int tall = wide ? cols : rows;
  const int thin = wide ? rows : cols;
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(tall, thin);
  for (int j = 0; j < thin; ++j) {
    for (int i = 0; i < tall; ++i) a(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, thin);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(thin).template triangularView<Eigen::Upper>();
  for (int j = 0; j < thin; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double v = wide ? q(j, i) : q(i, j);
      weight.value[static_cast<std::size_t>(i) * cols + j] = static_cast<T>(gain * v);
    }
  }
}

}  // namespace

template <typename T>
Network<T> build_network(std::uint64_t seed, const NetworkOptions& options) {
  struct Block {
    int in, out, stride;
  };
  constexpr Block blocks[] = {{1, 32, 1},  {32, 32, 1},  {32, 64, 2},
                              {64, 64, 1}, {64, 128, 2}, {128, 128, 1}};
  std::vector<Layer<T>> layers;
  layers.emplace_back(InstanceNorm<T>{});
  for (const Block& b : blocks) {
    layers.emplace_back(Conv2d<T>(b.in, b.out, 3, b.stride, 1));
    layers.emplace_back(BatchNorm<T>(b.out));
    layers.emplace_back(Relu<T>{});
  }
  layers.emplace_back(Dropout<T>(options.dropout));
  layers.emplace_back(Conv2d<T>(128, kDescriptorDim, 8, 1, 0));
  layers.emplace_back(BatchNorm<T>(kDescriptorDim));
  layers.emplace_back(L2Normalize<T>{});

  // Initialization draws from its own stream so the dropout stream of the
  // network starts from a known state.
  std::mt19937_64 init_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (auto& layer : layers) {
    if (auto* conv = std::get_if<Conv2d<T>>(&layer)) {
      orthogonal_init(conv->weight, options.init_gain, init_rng);
    }
  }
  return Network<T>(std::move(layers), seed);
}

template <typename T>
void validate_architecture(const Network<T>& net) {
  if (net.conv_count() != 7) {
    throw ValidationError("network must have exactly 7 convolution layers, has " +
                          std::to_string(net.conv_count()));
  }
  const auto& layers = net.layers();
  if (layers.empty() || !std::holds_alternative<L2Normalize<T>>(layers.back())) {
    throw ValidationError("network must end with l2 normalization");
  }
  // Last convolution must not be followed by a ReLU.
  auto last_conv = std::find_if(layers.rbegin(), layers.rend(), [](const auto& l) {
    return std::holds_alternative<Conv2d<T>>(l);
  });
  const auto& conv = std::get<Conv2d<T>>(*last_conv);
  if (conv.out_channels() != kDescriptorDim) {
    throw ValidationError("final convolution must output 128 channels");
  }
  for (auto it = layers.rbegin(); it != last_conv; ++it) {
    if (std::holds_alternative<Relu<T>>(*it)) {
      throw ValidationError("final convolution must not be followed by a ReLU");
    }
  }
}

namespace {

template <typename To, typename From>
Param<To> convert_param(const Param<From>& p) {
  Param<To> out;
  out.name = p.name;
  out.shape = p.shape;
  out.decay = p.decay;
  out.value.assign(p.value.begin(), p.value.end());
  out.grad.assign(p.grad.begin(), p.grad.end());
  out.velocity.assign(p.velocity.begin(), p.velocity.end());
  return out;
}

}  // namespace

template <typename To, typename From>
Network<To> convert_network(const Network<From>& net) {
  std::vector<Layer<To>> layers;
  for (const auto& layer : net.layers()) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, InstanceNorm<From>>) {
            layers.emplace_back(InstanceNorm<To>(l.eps()));
          } else if constexpr (std::is_same_v<L, Conv2d<From>>) {
            Conv2d<To> c(l.in_channels(), l.out_channels(), l.kernel(), l.stride(), l.pad());
            c.weight = convert_param<To>(l.weight);
            c.bias = convert_param<To>(l.bias);
            layers.emplace_back(std::move(c));
          } else if constexpr (std::is_same_v<L, BatchNorm<From>>) {
            BatchNorm<To> b(l.channels(), l.eps(), l.momentum());
            b.scale = convert_param<To>(l.scale);
            b.shift = convert_param<To>(l.shift);
            b.running_mean.assign(l.running_mean.begin(), l.running_mean.end());
            b.running_var.assign(l.running_var.begin(), l.running_var.end());
            b.updates = l.updates;
            layers.emplace_back(std::move(b));
          } else if constexpr (std::is_same_v<L, Relu<From>>) {
            layers.emplace_back(Relu<To>{});
          } else if constexpr (std::is_same_v<L, Dropout<From>>) {
            layers.emplace_back(Dropout<To>(l.rate()));
          } else {
            layers.emplace_back(L2Normalize<To>(l.floor()));
          }
        },
        layer);
  }
  return Network<To>(std::move(layers), 0);
}

template <typename T>
Tensor4<T> patches_to_tensor(std::span<const Patch> patches) {
  if (patches.empty()) return Tensor4<T>(0, 1, kPatchSize, kPatchSize);
  const Patch& first = patches.front();
  Tensor4<T> x(static_cast<int>(patches.size()), 1, first.size, first.size);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Patch& p = patches[i];
    if (p.size != first.size || p.data.size() != first.data.size()) {
      throw ValidationError("patch batch mixes sizes");
    }
    if (p.kind != first.kind || p.lambda != first.lambda) {
      throw ValidationError("patch batch mixes grid kinds or lambda values (" +
                            std::string(to_string(first.kind)) + " vs " +
                            std::string(to_string(p.kind)) + ")");
    }
    std::copy(p.data.begin(), p.data.end(), x.data() + i * first.data.size());
  }
  return x;
}

std::vector<Descriptor> describe(Network<float>& net, std::span<const Patch> patches) {
  std::vector<Descriptor> out;
  if (patches.empty()) return out;
  for (const Patch& p : patches) {
    if (p.size != kPatchSize) {
      throw ValidationError("describe: patches must be 32x32, got " + std::to_string(p.size));
    }
  }
  for (const Patch& p : patches) {
    if (p.kind != patches.front().kind || p.lambda != patches.front().lambda) {
      throw ValidationError("describe: batch mixes grid kinds or lambda values");
    }
  }
  constexpr std::size_t kChunk = 256;
  out.reserve(patches.size());
  for (std::size_t start = 0; start < patches.size(); start += kChunk) {
    const auto chunk = patches.subspan(start, std::min(kChunk, patches.size() - start));
    const Tensor4<float> y = net.forward(patches_to_tensor<float>(chunk), Mode::infer);
    if (y.sample_size() != static_cast<std::size_t>(kDescriptorDim)) {
      throw ValidationError("describe: network output is not 128-dimensional");
    }
    for (int i = 0; i < y.n(); ++i) {
      Descriptor d;
      d.kind = chunk.front().kind;
      d.lambda = chunk.front().lambda;
      const float* row = y.data() + static_cast<std::size_t>(i) * kDescriptorDim;
      d.values.assign(row, row + kDescriptorDim);
      out.push_back(std::move(d));
    }
  }
  return out;
}

template class Network<float>;
template class Network<double>;
template Network<float> build_network<float>(std::uint64_t, const NetworkOptions&);
template Network<double> build_network<double>(std::uint64_t, const NetworkOptions&);
template void validate_architecture(const Network<float>&);
template void validate_architecture(const Network<double>&);
template Network<double> convert_network<double, float>(const Network<float>&);
template Network<float> convert_network<float, double>(const Network<double>&);
template Network<float> convert_network<float, float>(const Network<float>&);
template Tensor4<float> patches_to_tensor<float>(std::span<const Patch>);
template Tensor4<double> patches_to_tensor<double>(std::span<const Patch>);

}  // namespace lpdesc
