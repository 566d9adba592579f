#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "lpdesc/error.hpp"
#include "lpdesc/network.hpp"

using namespace lpdesc;
namespace fs = std::filesystem;

namespace {

std::vector<Patch> random_patches(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<Patch> out(static_cast<std::size_t>(count));
  for (auto& p : out) {
    p.size = kPatchSize;
    p.lambda = 96.0;
    p.data.resize(kPatchSize * kPatchSize);
    for (auto& v : p.data) v = u(rng);
  }
  return out;
}

// Gives batch norms running statistics so the network can run in infer mode.
Network<float> warmed_network(std::uint64_t seed) {
  Network<float> net = build_network<float>(seed);
  const auto patches = random_patches(16, seed + 1);
  net.forward(patches_to_tensor<float>(patches), Mode::train);
  return net;
}

std::string bytes_of(const Network<float>& net) {
  std::stringstream ss;
  save_checkpoint(net, ss);
  return ss.str();
}

}  // namespace

TEST_CASE("network construction is seeded") {
  CHECK(bytes_of(build_network<float>(5)) == bytes_of(build_network<float>(5)));
  CHECK(bytes_of(build_network<float>(5)) != bytes_of(build_network<float>(6)));
  const auto net = build_network<float>(1);
  CHECK(net.conv_count() == 7);
  CHECK_NOTHROW(validate_architecture(net));
}

TEST_CASE("orthogonal initialization") {
  auto net = build_network<double>(3);
  const auto& conv = std::get<Conv2d<double>>(net.layers()[4]);  // 32 -> 32, 3x3
  const int rows = 32, cols = 288;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < rows; ++j) {
      double dot = 0.0;
      for (int k = 0; k < cols; ++k) dot += conv.weight.value[i * cols + k] * conv.weight.value[j * cols + k];
      CHECK(dot == doctest::Approx(i == j ? 0.36 : 0.0).epsilon(1e-9).scale(1.0));
    }
  }
}

TEST_CASE("spatial dimensions shrink as designed") {
  Network<float> net = build_network<float>(2);
  ForwardTape<float> tape;
  Tensor4<float> x(2, 1, 32, 32);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>((i * 37) % 11) / 11.0f;
  net.forward(x, Mode::check, &tape);
  std::vector<int> extents;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (std::holds_alternative<Conv2d<float>>(net.layers()[i])) {
      extents.push_back(tape.caches[i].tensor.h());  // conv input
    }
  }
  // inputs of the seven convolutions
  CHECK(extents == std::vector<int>{32, 32, 32, 16, 16, 8, 8});
  const auto y = net.forward(x, Mode::check);
  CHECK(y.dims() == std::array<int, 4>{2, 128, 1, 1});
}

TEST_CASE("architecture validation rejects a ReLU after the last convolution") {
  auto net = build_network<float>(1);
  auto layers = net.layers();
  layers.insert(layers.end() - 1, Relu<float>{});
  CHECK_THROWS_AS(validate_architecture(Network<float>(layers, 1)), ValidationError);
  layers = net.layers();
  layers.erase(layers.begin() + 1);
  CHECK_THROWS_AS(validate_architecture(Network<float>(layers, 1)), ValidationError);
}

TEST_CASE("descriptor contracts") {
  Network<float> net = warmed_network(4);
  auto patches = random_patches(6, 40);
  patches.push_back(patches[2]);
  Patch affine = patches[3];
  for (auto& v : affine.data) v = 0.5f * v + 0.2f;
  patches.push_back(affine);

  const auto d = describe(net, patches);
  REQUIRE(d.size() == patches.size());
  for (const auto& desc : d) {
    double s = 0.0;
    for (float v : desc.values) s += static_cast<double>(v) * v;
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-5);
    CHECK(desc.lambda == 96.0);
  }
  CHECK(d[6].values == d[2].values);
  for (int i = 0; i < kDescriptorDim; ++i) CHECK(std::abs(d[7].values[i] - d[3].values[i]) < 1e-5);

  CHECK(describe(net, std::span<const Patch>{}).empty());
  // Inference does not depend on the rest of the batch (up to summation order).
  const auto again = describe(net, std::span<const Patch>(patches).subspan(2, 1));
  for (int i = 0; i < kDescriptorDim; ++i) CHECK(std::abs(again[0].values[i] - d[2].values[i]) < 1e-6);
  CHECK(describe(net, patches)[5].values == d[5].values);

  auto mixed = random_patches(2, 41);
  mixed[1].kind = GridKind::cartesian;
  CHECK_THROWS_AS(describe(net, mixed), ValidationError);
  Network<float> cold = build_network<float>(4);
  CHECK_THROWS_AS(describe(cold, random_patches(1, 42)), ValidationError);
}

TEST_CASE("checkpoint round trip") {
  Network<float> net = warmed_network(7);
  const std::string a = bytes_of(net);
  std::stringstream in(a);
  Network<float> back = load_checkpoint(in);
  CHECK(bytes_of(back) == a);
  const auto patches = random_patches(3, 70);
  const auto d1 = describe(net, patches);
  const auto d2 = describe(back, patches);
  for (int i = 0; i < 3; ++i) CHECK(d1[i].values == d2[i].values);

  std::stringstream truncated(a.substr(0, a.size() - 3));
  CHECK_THROWS_AS(load_checkpoint(truncated), DecodeError);
  std::string bad = a;
  bad[0] = 'X';
  std::stringstream wrong(bad);
  CHECK_THROWS_AS(load_checkpoint(wrong), DecodeError);
  std::stringstream trailing(a + "z");
  CHECK_THROWS_AS(load_checkpoint(trailing), DecodeError);
}

TEST_CASE("descriptor files") {
  const fs::path dir = fs::temp_directory_path() / "lpdesc_unit_desc";
  fs::create_directories(dir);
  std::vector<Descriptor> descs(2);
  for (int i = 0; i < 2; ++i) {
    descs[i].values.assign(kDescriptorDim, 0.0f);
    descs[i].values[i] = 1.0f;
  }
  const std::vector<Keypoint> kps = {make_keypoint(1, 2, 1.5, 0.1), make_keypoint(3, 4, 2.5, 0.2)};
  const std::vector<std::string> tags = {"img", "img"};
  write_descriptor_file(dir / "d.desc", descs, GridKind::cartesian, 16.0, kps, tags);
  const DescriptorFile f = read_descriptor_file(dir / "d.desc");
  CHECK(f.count() == 2);
  CHECK(f.kind == GridKind::cartesian);
  CHECK(f.lambda == 16.0);
  CHECK(f.keypoints.size() == 2);
  CHECK(f.sources[1] == "img");
  CHECK(f.row(1)[1] == 1.0f);

  write_descriptor_file(dir / "empty.desc", {}, GridKind::logpolar, 96.0);
  CHECK(read_descriptor_file(dir / "empty.desc").count() == 0);
  CHECK(fs::file_size(dir / "empty.desc") == 15);

  CHECK_THROWS_AS(write_descriptor_file(dir / "x.desc", descs, GridKind::logpolar, 96.0,
                                        std::span<const Keypoint>(kps).first(1)),
                  ValidationError);
  fs::remove_all(dir);
}
