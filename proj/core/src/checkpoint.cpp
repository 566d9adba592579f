#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lpdesc/binary_io.hpp"
#include "lpdesc/error.hpp"
#include "lpdesc/network.hpp"

// LPNET1 layout (little-endian):
//   "LPNET1" u32 layer_count
//   per layer: u32 kind, u32 rank, rank x u32 dims,
//              kind-specific hyperparameters (u32 / f64),
//              f32 parameter payloads, then f32 momentum buffers.
//
// LPDESC1 layout: "LPDESC1" u32 count u32 dim, count*dim f32.

namespace lpdesc {

namespace {

constexpr std::string_view kNetMagic = "LPNET1";
constexpr std::string_view kDescMagic = "LPDESC1";

void write_floats(std::ostream& os, const std::vector<float>& v) {
  for (float f : v) binio::write_f32(os, f);
}

void read_floats(binio::Reader& in, std::vector<float>& v, const char* what) {
  for (float& f : v) {
    f = in.f32(what);
    if (!std::isfinite(f)) throw DecodeError(std::string("non-finite ") + what, in.offset() - 4);
  }
}

void write_dims(std::ostream& os, const std::vector<int>& dims) {
  binio::write_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (int d : dims) binio::write_u32(os, static_cast<std::uint32_t>(d));
}

std::vector<int> read_dims(binio::Reader& in) {
  const std::uint32_t rank = in.u32("shape rank");
  if (rank > 4) throw DecodeError("shape rank too large", in.offset() - 4);
  std::vector<int> dims(rank);
  for (auto& d : dims) {
    d = static_cast<int>(in.u32("shape dim"));
    if (d <= 0 || d > 65536) throw DecodeError("invalid shape dim", in.offset() - 4);
  }
  return dims;
}

void expect_rank(const std::vector<int>& dims, std::size_t rank, std::size_t offset) {
  if (dims.size() != rank) {
    throw DecodeError("unexpected shape rank " + std::to_string(dims.size()), offset);
  }
}

}  // namespace

void save_checkpoint(const Network<float>& net, std::ostream& os) {
  binio::write_magic(os, kNetMagic);
  binio::write_u32(os, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& layer : net.layers()) {
    binio::write_u32(os, static_cast<std::uint32_t>(layer_kind(layer)));
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, InstanceNorm<float>>) {
            write_dims(os, {});
            binio::write_f64(os, l.eps());
          } else if constexpr (std::is_same_v<L, Conv2d<float>>) {
            write_dims(os, l.weight.shape);
            binio::write_u32(os, static_cast<std::uint32_t>(l.stride()));
            binio::write_u32(os, static_cast<std::uint32_t>(l.pad()));
            write_floats(os, l.weight.value);
            write_floats(os, l.bias.value);
            write_floats(os, l.weight.velocity);
            write_floats(os, l.bias.velocity);
          } else if constexpr (std::is_same_v<L, BatchNorm<float>>) {
            write_dims(os, {l.channels()});
            binio::write_f64(os, l.eps());
            binio::write_f64(os, l.momentum());
            binio::write_u32(os, l.updates);
            write_floats(os, l.scale.value);
            write_floats(os, l.shift.value);
            write_floats(os, l.running_mean);
            write_floats(os, l.running_var);
            write_floats(os, l.scale.velocity);
            write_floats(os, l.shift.velocity);
          } else if constexpr (std::is_same_v<L, Relu<float>>) {
            write_dims(os, {});
          } else if constexpr (std::is_same_v<L, Dropout<float>>) {
            write_dims(os, {});
            binio::write_f64(os, l.rate());
          } else {
            write_dims(os, {});
            binio::write_f64(os, l.floor());
          }
        },
        layer);
  }
  if (!os) throw Error("failed writing checkpoint");
}

Network<float> load_checkpoint(std::istream& is) {
  binio::Reader in(is);
  in.expect_magic(kNetMagic);
  const std::uint32_t count = in.u32("layer count");
  if (count == 0 || count > 1024) throw DecodeError("implausible layer count", in.offset() - 4);
  std::vector<Layer<float>> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t tag_offset = in.offset();
    const auto kind = static_cast<LayerKind>(in.u32("layer kind"));
    const std::size_t dims_offset = in.offset();
    const std::vector<int> dims = read_dims(in);
    switch (kind) {
      case LayerKind::instance_norm: {
        expect_rank(dims, 0, dims_offset);
        layers.emplace_back(InstanceNorm<float>(in.f64("instance norm eps")));
        break;
      }
      case LayerKind::conv2d: {
        expect_rank(dims, 4, dims_offset);
        if (dims[2] != dims[3]) throw DecodeError("non-square kernel", dims_offset);
        const auto stride = static_cast<int>(in.u32("stride"));
        const auto pad = static_cast<int>(in.u32("pad"));
        Conv2d<float> conv(dims[1], dims[0], dims[2], stride, pad);
        read_floats(in, conv.weight.value, "conv weight");
        read_floats(in, conv.bias.value, "conv bias");
        read_floats(in, conv.weight.velocity, "conv weight momentum");
        read_floats(in, conv.bias.velocity, "conv bias momentum");
        layers.emplace_back(std::move(conv));
        break;
      }
      case LayerKind::batch_norm: {
        expect_rank(dims, 1, dims_offset);
        const double eps = in.f64("batch norm eps");
        const double momentum = in.f64("batch norm momentum");
        BatchNorm<float> bn(dims[0], eps, momentum);
        bn.updates = in.u32("batch norm updates");
        read_floats(in, bn.scale.value, "batch norm scale");
        read_floats(in, bn.shift.value, "batch norm shift");
        read_floats(in, bn.running_mean, "running mean");
        read_floats(in, bn.running_var, "running variance");
        for (float v : bn.running_var) {
          if (v < 0.0f) throw DecodeError("negative running variance", in.offset());
        }
        read_floats(in, bn.scale.velocity, "batch norm scale momentum");
        read_floats(in, bn.shift.velocity, "batch norm shift momentum");
        layers.emplace_back(std::move(bn));
        break;
      }
      case LayerKind::relu:
        expect_rank(dims, 0, dims_offset);
        layers.emplace_back(Relu<float>{});
        break;
      case LayerKind::dropout:
        expect_rank(dims, 0, dims_offset);
        layers.emplace_back(Dropout<float>(in.f64("dropout rate")));
        break;
      case LayerKind::l2_normalize:
        expect_rank(dims, 0, dims_offset);
        layers.emplace_back(L2Normalize<float>(in.f64("l2 floor")));
        break;
      default:
        throw DecodeError("unknown layer kind tag", tag_offset);
    }
  }
  if (!in.at_end()) throw DecodeError("trailing bytes after checkpoint", in.offset());
  return Network<float>(std::move(layers), 0);
}

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  save_checkpoint(net, out);
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  try {
    return load_checkpoint(in);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_descriptor_stream(std::ostream& os, std::span<const Descriptor> descriptors) {
  binio::write_magic(os, kDescMagic);
  binio::write_u32(os, static_cast<std::uint32_t>(descriptors.size()));
  binio::write_u32(os, kDescriptorDim);
  for (const Descriptor& d : descriptors) {
    if (d.values.size() != static_cast<std::size_t>(kDescriptorDim)) {
      throw ValidationError("descriptor must have 128 values");
    }
    write_floats(os, d.values);
  }
  if (!os) throw Error("failed writing descriptors");
}

DescriptorFile read_descriptor_stream(std::istream& is) {
  binio::Reader in(is);
  in.expect_magic(kDescMagic);
  DescriptorFile file;
  const std::uint32_t count = in.u32("descriptor count");
  file.dim = static_cast<int>(in.u32("descriptor dim"));
  if (file.dim <= 0 || file.dim > 65536) throw DecodeError("invalid descriptor dim", 11);
  file.values.resize(static_cast<std::size_t>(count) * file.dim);
  read_floats(in, file.values, "descriptor value");
  if (!in.at_end()) throw DecodeError("trailing bytes after descriptors", in.offset());
  return file;
}

std::filesystem::path descriptor_sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".kp";
  return p;
}

void write_descriptor_file(const std::filesystem::path& path,
                           std::span<const Descriptor> descriptors, GridKind kind,
                           double lambda, std::span<const Keypoint> keypoints,
                           std::span<const std::string> sources) {
  if (!keypoints.empty() && keypoints.size() != descriptors.size()) {
    throw ValidationError("sidecar keypoints are not line-aligned with descriptors");
  }
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write descriptor file " + path.string());
    write_descriptor_stream(out, descriptors);
  }
  std::ofstream side(descriptor_sidecar_path(path));
  if (!side) throw Error("cannot write descriptor sidecar for " + path.string());
  side << "# lpdesc descriptor sidecar\n";
  side << "# grid_kind " << to_string(kind) << "\n";
  side << "# lambda " << std::setprecision(17) << lambda << "\n";
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    const Keypoint& kp = keypoints[i];
    side << kp.x << ' ' << kp.y << ' ' << kp.sigma << ' ' << kp.theta;
    if (i < sources.size()) side << ' ' << sources[i];
    side << '\n';
  }
}

DescriptorFile read_descriptor_file(const std::filesystem::path& path) {
  DescriptorFile file;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open descriptor file " + path.string());
    try {
      file = read_descriptor_stream(in);
    } catch (const DecodeError& e) {
      throw DecodeError(path.string() + ": " + e.what(), e.offset());
    }
  }
  std::ifstream side(descriptor_sidecar_path(path));
  if (!side) return file;
  std::string line;
  while (std::getline(side, line)) {
    std::istringstream ls(line);
    if (line.rfind("# grid_kind ", 0) == 0) {
      file.kind = parse_grid_kind(line.substr(12));
    } else if (line.rfind("# lambda ", 0) == 0) {
      file.lambda = std::stod(line.substr(9));
    } else if (!line.empty() && line[0] != '#') {
      double x, y, sigma, theta;
      if (!(ls >> x >> y >> sigma >> theta)) {
        throw ValidationError("malformed sidecar line in " + path.string());
      }
      file.keypoints.push_back(make_keypoint(x, y, sigma, theta));
      std::string source;
      ls >> source;
      file.sources.push_back(source);
    }
  }
  if (!file.keypoints.empty() && file.keypoints.size() != file.count()) {
    throw ValidationError("sidecar of " + path.string() +
                          " is not line-aligned with its descriptors");
  }
  return file;
}

}  // namespace lpdesc
