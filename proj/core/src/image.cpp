#include "lpdesc/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "lpdesc/error.hpp"
#include "lpdesc/geometry.hpp"

namespace lpdesc {

std::string_view to_string(GridKind kind) {
  return kind == GridKind::cartesian ? "cartesian" : "logpolar";
}

GridKind parse_grid_kind(std::string_view text) {
  if (text == "cartesian" || text == "cart") return GridKind::cartesian;
  if (text == "logpolar" || text == "logpol") return GridKind::logpolar;
  throw ValidationError("unknown grid kind '" + std::string(text) + "'");
}

template <typename T>
BasicImage<T>::BasicImage(int height, int width, T fill)
    : height_(height), width_(width) {
  if (height < 0 || width < 0) throw ValidationError("negative image size");
  data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width),
               fill);
}

template <typename T>
BasicImage<T>::BasicImage(int height, int width, std::vector<T> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (height < 0 || width < 0) throw ValidationError("negative image size");
  if (data_.size() !=
      static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw ValidationError("image data length does not match H*W");
  }
}

template class BasicImage<float>;
template class BasicImage<double>;

namespace {

constexpr std::string_view kRawMagic = "LPIM";

std::uint32_t load_u32le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Header tokens of a netpbm file: whitespace separated, '#' comments to EOL.
class PgmHeader {
 public:
  explicit PgmHeader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }

  unsigned long next_number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    unsigned long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > (1ul << 30)) throw DecodeError(std::string("oversized ") + what, start);
      ++pos_;
    }
    if (pos_ == start) {
      throw DecodeError(std::string("expected ") + what + " in PGM header", start);
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void single_whitespace() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw DecodeError("expected whitespace after PGM maxval", pos_);
    }
    ++pos_;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

Image decode_pgm8(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw DecodeError("not a binary PGM (missing P5 magic)", 0);
  }
  PgmHeader header(bytes.subspan(2));
  const auto width = header.next_number("width");
  const auto height = header.next_number("height");
  const std::size_t maxval_offset = header.pos() + 2;
  const auto maxval = header.next_number("maxval");
  if (maxval != 255) throw DecodeError("only maxval 255 is supported", maxval_offset);
  header.single_whitespace();
  const std::size_t raster = header.pos() + 2;
  const std::size_t count = width * height;
  if (bytes.size() - raster < count) {
    throw DecodeError("truncated PGM raster: expected " + std::to_string(count) +
                          " bytes, found " + std::to_string(bytes.size() - raster),
                      bytes.size());
  }
  if (bytes.size() - raster > count) {
    throw DecodeError("trailing bytes after PGM raster", raster + count);
  }
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = static_cast<float>(bytes[raster + i]) / 255.0f;
  }
  return Image(static_cast<int>(height), static_cast<int>(width), std::move(data));
}

Image decode_rawf32(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw DecodeError("truncated rawf32 header", bytes.size());
  if (std::memcmp(bytes.data(), kRawMagic.data(), 4) != 0) {
    throw DecodeError("bad rawf32 magic, expected LPIM", 0);
  }
  const std::uint32_t height = load_u32le(bytes.data() + 4);
  const std::uint32_t width = load_u32le(bytes.data() + 8);
  // Bytes 12..15 are reserved.
  if (height > (1u << 16) || width > (1u << 16)) {
    throw DecodeError("implausible rawf32 dimensions", 4);
  }
  const std::size_t count = static_cast<std::size_t>(height) * width;
  if (bytes.size() - 16 != count * 4) {
    throw DecodeError("rawf32 payload size mismatch: expected " +
                          std::to_string(count * 4) + " bytes, found " +
                          std::to_string(bytes.size() - 16),
                      std::min(bytes.size(), 16 + count * 4));
  }
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = load_u32le(bytes.data() + 16 + 4 * i);
    std::memcpy(&data[i], &bits, 4);
    if (!std::isfinite(data[i])) throw DecodeError("non-finite pixel value", 16 + 4 * i);
  }
  return Image(static_cast<int>(height), static_cast<int>(width), std::move(data));
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes, ImageFormat format) {
  return format == ImageFormat::pgm8 ? decode_pgm8(bytes) : decode_rawf32(bytes);
}

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kRawMagic.data(), 4) == 0) {
    return decode_rawf32(bytes);
  }
  return decode_pgm8(bytes);
}

std::vector<std::uint8_t> encode_image(const Image& img, ImageFormat format) {
  std::vector<std::uint8_t> out;
  if (format == ImageFormat::pgm8) {
    const std::string header = "P5\n" + std::to_string(img.width()) + " " +
                               std::to_string(img.height()) + "\n255\n";
    out.assign(header.begin(), header.end());
    for (float v : img.data()) {
      const float q = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f);
      out.push_back(static_cast<std::uint8_t>(q));
    }
  } else {
    out.assign(kRawMagic.begin(), kRawMagic.end());
    store_u32le(out, static_cast<std::uint32_t>(img.height()));
    store_u32le(out, static_cast<std::uint32_t>(img.width()));
    store_u32le(out, 0);
    for (float v : img.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      store_u32le(out, bits);
    }
  }
  return out;
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_image(const std::filesystem::path& path, const Image& img,
                 ImageFormat format) {
  const auto bytes = encode_image(img, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

namespace {

int reflect101(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

template <typename T>
BasicImage<T> mirror_pad(const BasicImage<T>& img, int pad) {
  if (pad < 0) throw ValidationError("mirror_pad: negative pad");
  if (pad == 0) return img;
  if (pad >= std::min(img.height(), img.width())) {
    throw ValidationError("mirror_pad: pad " + std::to_string(pad) +
                          " must be smaller than the image side");
  }
  BasicImage<T> out(img.height() + 2 * pad, img.width() + 2 * pad);
  for (int y = 0; y < out.height(); ++y) {
    const int sy = reflect101(y - pad, img.height());
    for (int x = 0; x < out.width(); ++x) {
      out(y, x) = img(sy, reflect101(x - pad, img.width()));
    }
  }
  return out;
}

template <typename T>
T bilinear_sample(const BasicImage<T>& img, double x, double y) {
  if (!std::isfinite(x) || !std::isfinite(y)) {
    throw ValidationError("bilinear_sample: non-finite coordinate");
  }
  if (img.empty()) throw ValidationError("bilinear_sample: empty image");
  const double fx0 = std::floor(x);
  const double fy0 = std::floor(y);
  const double ax = x - fx0;
  const double ay = y - fy0;
  const double max_x = img.width() - 1;
  const double max_y = img.height() - 1;
  const int x0 = static_cast<int>(std::clamp(fx0, 0.0, max_x));
  const int x1 = static_cast<int>(std::clamp(fx0 + 1.0, 0.0, max_x));
  const int y0 = static_cast<int>(std::clamp(fy0, 0.0, max_y));
  const int y1 = static_cast<int>(std::clamp(fy0 + 1.0, 0.0, max_y));
  const double top = (1.0 - ax) * img(y0, x0) + ax * img(y0, x1);
  const double bottom = (1.0 - ax) * img(y1, x0) + ax * img(y1, x1);
  return static_cast<T>((1.0 - ay) * top + ay * bottom);
}

template BasicImage<float> mirror_pad(const BasicImage<float>&, int);
template BasicImage<double> mirror_pad(const BasicImage<double>&, int);
template float bilinear_sample(const BasicImage<float>&, double, double);
template double bilinear_sample(const BasicImage<double>&, double, double);

Patch extract_patch(const Image& img, const SamplingGrid& grid, double offset) {
  Patch patch;
  patch.size = grid.size;
  patch.kind = grid.kind;
  patch.lambda = grid.lambda;
  patch.data.resize(grid.src_x.size());
  for (std::size_t i = 0; i < patch.data.size(); ++i) {
    patch.data[i] = bilinear_sample(img, grid.src_x[i] + offset, grid.src_y[i] + offset);
  }
  return patch;
}

}  // namespace lpdesc
