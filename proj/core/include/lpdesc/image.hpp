#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace lpdesc {

/// Sampling pattern a patch was produced with. Descriptors are only
/// comparable between patches of the same kind and lambda.
enum class GridKind { cartesian, logpolar };

std::string_view to_string(GridKind kind);
GridKind parse_grid_kind(std::string_view text);

/// Row-major grayscale image. Pixel centers sit at integer coordinates,
/// origin top-left, x to the right, y downwards.
template <typename T>
class BasicImage {
 public:
  BasicImage() = default;
  BasicImage(int height, int width, T fill = T(0));
  BasicImage(int height, int width, std::vector<T> data);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return data_.empty(); }

  T operator()(int y, int x) const { return data_[index(y, x)]; }
  T& operator()(int y, int x) { return data_[index(y, x)]; }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }

  bool operator==(const BasicImage&) const = default;

 private:
  std::size_t index(int y, int x) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using Image = BasicImage<float>;
using Image64 = BasicImage<double>;

/// L x L samples taken around one keypoint.
struct Patch {
  int size = 0;
  GridKind kind = GridKind::logpolar;
  double lambda = 0.0;
  std::vector<float> data;

  float operator()(int y, int x) const {
    return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(size) +
                static_cast<std::size_t>(x)];
  }
};

enum class ImageFormat { pgm8, rawf32 };

/// Decodes binary PGM (P5, maxval 255) or the rawf32 "LPIM" format.
/// Throws DecodeError with the offending byte offset.
Image decode_image(std::span<const std::uint8_t> bytes, ImageFormat format);

/// Picks the format from the leading magic bytes.
Image decode_image(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_image(const Image& img, ImageFormat format);

Image read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& img,
                 ImageFormat format);

/// Reflect-101 padding: the sample at -1 equals the sample at 1. Requires
/// pad < min(H, W).
template <typename T>
BasicImage<T> mirror_pad(const BasicImage<T>& img, int pad);

/// Bilinear interpolation with clamp-to-edge for neighbours that fall
/// outside the image. Throws ValidationError for non-finite coordinates.
template <typename T>
T bilinear_sample(const BasicImage<T>& img, double x, double y);

struct SamplingGrid;

/// Looks up every source coordinate of the grid. Coordinates are shifted by
/// `offset` pixels, which lets callers sample a mirror-padded copy of the
/// image with keypoints expressed in the unpadded frame.
Patch extract_patch(const Image& img, const SamplingGrid& grid,
                    double offset = 0.0);

}  // namespace lpdesc
