#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "lpdesc/geometry.hpp"
#include "lpdesc/image.hpp"
#include "lpdesc/layers.hpp"

namespace lpdesc {

inline constexpr int kPatchSize = 32;
inline constexpr int kDescriptorDim = 128;

/// Per-layer activations recorded by one forward pass.
template <typename T>
struct ForwardTape {
  std::vector<LayerCache<T>> caches;
};

/// Ordered layer stack. Owns the dropout random stream so that a fixed seed
/// reproduces a training run bit for bit.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(std::vector<Layer<T>> layers, std::uint64_t seed);

  /// Runs every layer; records activations in `tape` when given.
  Tensor4<T> forward(const Tensor4<T>& x, Mode mode, ForwardTape<T>* tape = nullptr);
  /// Accumulates parameter gradients and returns d(input).
  Tensor4<T> backward(const ForwardTape<T>& tape, const Tensor4<T>& dy);

  std::vector<Param<T>*> params();
  void zero_grad();

  std::vector<Layer<T>>& layers() { return layers_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::mt19937_64& rng() { return rng_; }

  int conv_count() const;
  /// True once every batch-norm layer has running statistics.
  bool has_running_statistics() const;

 private:
  std::vector<Layer<T>> layers_;
  std::mt19937_64 rng_;
};

struct NetworkOptions {
  double dropout = 0.1;
  double init_gain = 0.6;
};

/// Instance-normalized input, six 3x3 conv + batch-norm + ReLU blocks with
/// widths 32,32,64,64,128,128 and strides 1,1,2,1,2,1, dropout, an 8x8
/// conv to 128 channels, batch-norm and L2 normalization. Convolution
/// weights are orthogonally initialized from `seed`.
template <typename T>
Network<T> build_network(std::uint64_t seed, const NetworkOptions& options = {});

/// Checks the fixed layer plan (7 convolutions, 128-d normalized output).
template <typename T>
void validate_architecture(const Network<T>& net);

/// Copies parameters and state into a network of another precision.
template <typename To, typename From>
Network<To> convert_network(const Network<From>& net);

/// Stacks equal-kind patches into an N x 1 x L x L tensor.
template <typename T>
Tensor4<T> patches_to_tensor(std::span<const Patch> patches);

struct Descriptor {
  std::vector<float> values;
  GridKind kind = GridKind::logpolar;
  double lambda = 0.0;
};

/// Inference-mode descriptors, one per patch, order preserved. Every patch
/// must be 32x32 and all patches must share grid kind and lambda.
std::vector<Descriptor> describe(Network<float>& net, std::span<const Patch> patches);

// Checkpoint format "LPNET1"; parameters stored as little-endian float32.
void save_checkpoint(const Network<float>& net, std::ostream& os);
Network<float> load_checkpoint(std::istream& is);
void save_checkpoint(const Network<float>& net, const std::filesystem::path& path);
Network<float> load_checkpoint(const std::filesystem::path& path);

/// Contents of an LPDESC1 file plus its optional text sidecar.
struct DescriptorFile {
  int dim = kDescriptorDim;
  std::vector<float> values;  // count * dim, row-major
  std::optional<GridKind> kind;
  std::optional<double> lambda;
  std::vector<Keypoint> keypoints;      // empty without sidecar
  std::vector<std::string> sources;     // per-keypoint source tag, if any

  std::size_t count() const { return dim == 0 ? 0 : values.size() / static_cast<std::size_t>(dim); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values).subspan(i * static_cast<std::size_t>(dim),
                                                  static_cast<std::size_t>(dim));
  }
};

void write_descriptor_stream(std::ostream& os, std::span<const Descriptor> descriptors);
DescriptorFile read_descriptor_stream(std::istream& is);

std::filesystem::path descriptor_sidecar_path(const std::filesystem::path& path);

/// Writes the binary file and a sidecar recording grid kind, lambda and the
/// source keypoint of every row (when `keypoints` is non-empty it must be
/// line-aligned with `descriptors`).
void write_descriptor_file(const std::filesystem::path& path,
                           std::span<const Descriptor> descriptors, GridKind kind,
                           double lambda, std::span<const Keypoint> keypoints = {},
                           std::span<const std::string> sources = {});
DescriptorFile read_descriptor_file(const std::filesystem::path& path);

}  // namespace lpdesc
