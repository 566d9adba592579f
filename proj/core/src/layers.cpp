#include "lpdesc/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

#include "lpdesc/error.hpp"

namespace lpdesc {

std::string format_dims(const std::array<int, 4>& dims) {
  return std::to_string(dims[0]) + "x" + std::to_string(dims[1]) + "x" +
         std::to_string(dims[2]) + "x" + std::to_string(dims[3]);
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::instance_norm: return "instance_norm";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::dropout: return "dropout";
    case LayerKind::l2_normalize: return "l2_normalize";
  }
  return "unknown";
}

template <typename T>
Param<T>::Param(std::string name_, std::vector<int> shape_, bool decay_, T fill)
    : name(std::move(name_)), shape(std::move(shape_)), decay(decay_) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  value.assign(n, fill);
  grad.assign(n, T(0));
  velocity.assign(n, T(0));
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Target number of im2col columns per GEMM; bounds scratch memory.
constexpr std::size_t kChunkColumns = 4096;

// Double-precision reductions over eight interleaved lanes: vectorizable,
// and the fixed association order keeps results reproducible.
constexpr std::size_t kLanes = 8;

template <typename T>
double lane_sum(const T* a, std::size_t n) {
  double acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += static_cast<double>(a[i + l]);
  }
  double s = 0.0;
  for (double v : acc) s += v;
  for (; i < n; ++i) s += static_cast<double>(a[i]);
  return s;
}

template <typename T>
double lane_sq_dev(const T* a, std::size_t n, double mean) {
  double acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) {
      const double d = static_cast<double>(a[i + l]) - mean;
      acc[l] += d * d;
    }
  }
  double s = 0.0;
  for (double v : acc) s += v;
  for (; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - mean;
    s += d * d;
  }
  return s;
}

template <typename T>
double lane_dot(const T* a, const T* b, std::size_t n) {
  double acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) {
      acc[l] += static_cast<double>(a[i + l]) * static_cast<double>(b[i + l]);
    }
  }
  double s = 0.0;
  for (double v : acc) s += v;
  for (; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : weight("weight", {out_channels, in_channels, kernel, kernel}, true),
      bias("bias", {out_channels}, true),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0) {
    throw ValidationError("conv2d: channel counts and kernel must be positive");
  }
  if (stride < 1) throw ValidationError("conv2d: stride must be at least 1");
  if (pad < 0) throw ValidationError("conv2d: negative padding");
}

template <typename T>
int Conv2d<T>::output_extent(int input_extent) const {
  return (input_extent + 2 * pad_ - kernel_) / stride_ + 1;
}

template <typename T>
void Conv2d<T>::check_input(const Tensor4<T>& x) const {
  if (x.c() != in_ || x.h() + 2 * pad_ < kernel_ || x.w() + 2 * pad_ < kernel_) {
    throw ValidationError("conv2d: input " + format_dims(x.dims()) + " incompatible with " +
                          std::to_string(in_) + " channels, kernel " +
                          std::to_string(kernel_) + ", pad " + std::to_string(pad_));
  }
}

namespace {

struct ConvGeometry {
  int channels, height, width, kernel, stride, pad, out_h, out_w;
  int patch() const { return out_h * out_w; }
  int rows() const { return channels * kernel * kernel; }
};

// Output columns [lo, hi) whose input column ox * stride - pad + k is in range.
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

inline void valid_span(const ConvGeometry& g, int k, int& lo, int& hi) {
  lo = std::max(0, -floor_div(k - g.pad, g.stride));
  hi = std::min(g.out_w, floor_div(g.width - 1 + g.pad - k, g.stride) + 1);
  if (hi < lo) hi = lo;
}

template <typename T>
void im2col(const Tensor4<T>& x, int n0, int count, const ConvGeometry& g, T* cols) {
  const std::size_t p = static_cast<std::size_t>(g.patch());
  const std::size_t ld = static_cast<std::size_t>(count) * p;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * ld;
        int lo, hi;
        valid_span(g, kx, lo, hi);
        for (int j = 0; j < count; ++j) {
          const T* plane = x.data() + (static_cast<std::size_t>(n0 + j) * g.channels + c) *
                                          g.height * g.width;
          T* dst = row + static_cast<std::size_t>(j) * p;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            T* line = dst + oy * g.out_w;
            if (iy < 0 || iy >= g.height) {
              std::fill(line, line + g.out_w, T(0));
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * g.width + (kx - g.pad);
            std::fill(line, line + lo, T(0));
            if (g.stride == 1) {
              std::copy(src + lo, src + hi, line + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox) line[ox] = src[ox * g.stride];
            }
            std::fill(line + hi, line + g.out_w, T(0));
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int n0, int count, const ConvGeometry& g, Tensor4<T>& dx) {
  const std::size_t p = static_cast<std::size_t>(g.patch());
  const std::size_t ld = static_cast<std::size_t>(count) * p;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * ld;
        int lo, hi;
        valid_span(g, kx, lo, hi);
        for (int j = 0; j < count; ++j) {
          T* plane = dx.data() + (static_cast<std::size_t>(n0 + j) * g.channels + c) *
                                     g.height * g.width;
          const T* src = row + static_cast<std::size_t>(j) * p;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.height) continue;
            T* dst = plane + static_cast<std::size_t>(iy) * g.width + (kx - g.pad);
            const T* line = src + oy * g.out_w;
            if (g.stride == 1) {
              for (int ox = lo; ox < hi; ++ox) dst[ox] += line[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += line[ox];
            }
          }
        }
      }
    }
  }
}

// Grow-only scratch so that large im2col buffers are not returned to the
// system (and page-faulted back in) on every call.
template <typename T>
T* scratch(int slot, std::size_t n) {
  thread_local std::vector<T> buffers[3];
  auto& b = buffers[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

}  // namespace

template <typename T>
Tensor4<T> Conv2d<T>::forward(const Tensor4<T>& x, const ForwardContext&,
                              LayerCache<T>& cache) const {
  check_input(x);
  const ConvGeometry g{in_, x.h(), x.w(), kernel_, stride_, pad_,
                       output_extent(x.h()), output_extent(x.w())};
  const int p = g.patch();
  Tensor4<T> y(x.n(), out_, g.out_h, g.out_w);
  cache.tensor = x;

  const Eigen::Map<const RowMat<T>> w(weight.value.data(), out_, g.rows());
  const int chunk = static_cast<int>(std::max<std::size_t>(1, kChunkColumns / p));
  for (int n0 = 0; n0 < x.n(); n0 += chunk) {
    const int count = std::min(chunk, x.n() - n0);
    const Eigen::Index ncols = static_cast<Eigen::Index>(count) * p;
    Eigen::Map<RowMat<T>> cols(scratch<T>(0, static_cast<std::size_t>(g.rows()) * ncols), g.rows(), ncols);
    Eigen::Map<RowMat<T>> block(scratch<T>(1, static_cast<std::size_t>(out_) * ncols), out_, ncols);
    im2col(x, n0, count, g, cols.data());
    block.noalias() = w * cols;
    for (int j = 0; j < count; ++j) {
      for (int o = 0; o < out_; ++o) {
        const T* src = block.row(o).data() + static_cast<std::size_t>(j) * p;
        T* dst = y.data() + (static_cast<std::size_t>(n0 + j) * out_ + o) * p;
        const T b = bias.value[static_cast<std::size_t>(o)];
        for (int i = 0; i < p; ++i) dst[i] = src[i] + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor4<T> Conv2d<T>::backward(const Tensor4<T>& dy, const LayerCache<T>& cache) {
  const Tensor4<T>& x = cache.tensor;
  const ConvGeometry g{in_, x.h(), x.w(), kernel_, stride_, pad_,
                       output_extent(x.h()), output_extent(x.w())};
  const int p = g.patch();
  if (dy.n() != x.n() || dy.c() != out_ || dy.h() != g.out_h || dy.w() != g.out_w) {
    throw ValidationError("conv2d backward: gradient " + format_dims(dy.dims()) +
                          " does not match output " +
                          format_dims({x.n(), out_, g.out_h, g.out_w}));
  }
  Tensor4<T> dx(x.n(), x.c(), x.h(), x.w());

  const Eigen::Map<const RowMat<T>> w(weight.value.data(), out_, g.rows());
  Eigen::Map<RowMat<T>> dw(weight.grad.data(), out_, g.rows());
  const int chunk = static_cast<int>(std::max<std::size_t>(1, kChunkColumns / p));
  for (int n0 = 0; n0 < x.n(); n0 += chunk) {
    const int count = std::min(chunk, x.n() - n0);
    const Eigen::Index ncols = static_cast<Eigen::Index>(count) * p;
    Eigen::Map<RowMat<T>> cols(scratch<T>(0, static_cast<std::size_t>(g.rows()) * ncols), g.rows(), ncols);
    Eigen::Map<RowMat<T>> dblock(scratch<T>(1, static_cast<std::size_t>(out_) * ncols), out_, ncols);
    Eigen::Map<RowMat<T>> dcols(scratch<T>(2, static_cast<std::size_t>(g.rows()) * ncols), g.rows(), ncols);
    for (int j = 0; j < count; ++j) {
      for (int o = 0; o < out_; ++o) {
        const T* src = dy.data() + (static_cast<std::size_t>(n0 + j) * out_ + o) * p;
        std::copy(src, src + p, dblock.row(o).data() + static_cast<std::size_t>(j) * p);
      }
    }
    im2col(x, n0, count, g, cols.data());
    dw.noalias() += dblock * cols.transpose();
    for (int o = 0; o < out_; ++o) {
      bias.grad[static_cast<std::size_t>(o)] += dblock.row(o).sum();
    }
    dcols.noalias() = w.transpose() * dblock;
    col2im_add(dcols.data(), n0, count, g, dx);
  }
  return dx;
}

// ------------------------------------------------------------- BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(int channels, double eps, double momentum)
    : scale("scale", {channels}, false, T(1)),
      shift("shift", {channels}, false, T(0)),
      running_mean(static_cast<std::size_t>(channels), T(0)),
      running_var(static_cast<std::size_t>(channels), T(1)),
      channels_(channels),
      eps_(eps),
      momentum_(momentum) {
  if (channels <= 0) throw ValidationError("batch_norm: channels must be positive");
  if (!(eps > 0.0)) throw ValidationError("batch_norm: epsilon must be positive");
}

template <typename T>
Tensor4<T> BatchNorm<T>::forward(const Tensor4<T>& x, const ForwardContext& ctx,
                                 LayerCache<T>& cache) {
  if (x.c() != channels_) {
    throw ValidationError("batch_norm: input " + format_dims(x.dims()) + " expected " +
                          std::to_string(channels_) + " channels");
  }
  const int n = x.n();
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  const std::size_t count = plane * static_cast<std::size_t>(n);
  const bool batch_stats = ctx.mode != Mode::infer;
  if (!batch_stats && updates == 0) {
    throw ValidationError("batch_norm: inference before any training update "
                          "(running statistics undefined)");
  }
  if (batch_stats && count < 2) {
    throw ValidationError("batch_norm: batch statistics need at least two values per channel");
  }

  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  cache.tensor = Tensor4<T>(x.n(), x.c(), x.h(), x.w());
  cache.scalars.assign(static_cast<std::size_t>(channels_), T(0));
  cache.mask.assign(1, batch_stats ? 1 : 0);

  for (int c = 0; c < channels_; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    double mean, var;
    if (batch_stats) {
      double sum = 0.0;
      for (int s = 0; s < n; ++s) {
        sum += lane_sum(x.data() + (static_cast<std::size_t>(s) * channels_ + c) * plane, plane);
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int s = 0; s < n; ++s) {
        sq += lane_sq_dev(x.data() + (static_cast<std::size_t>(s) * channels_ + c) * plane, plane, mean);
      }
      var = sq / static_cast<double>(count);
      if (ctx.mode == Mode::train) {
        const double unbiased = sq / static_cast<double>(count - 1);
        running_mean[ci] = static_cast<T>((1.0 - momentum_) * running_mean[ci] + momentum_ * mean);
        running_var[ci] = static_cast<T>((1.0 - momentum_) * running_var[ci] + momentum_ * unbiased);
      }
    } else {
      mean = running_mean[ci];
      var = running_var[ci];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps_);
    cache.scalars[ci] = static_cast<T>(inv_std);
    const T gamma = scale.value[ci];
    const T beta = shift.value[ci];
    const T mean_t = static_cast<T>(mean);
    const T inv_t = static_cast<T>(inv_std);
    for (int s = 0; s < n; ++s) {
      const std::size_t off = (static_cast<std::size_t>(s) * channels_ + c) * plane;
      const T* src = x.data() + off;
      T* xhat = cache.tensor.data() + off;
      T* dst = y.data() + off;
      for (std::size_t i = 0; i < plane; ++i) {
        xhat[i] = (src[i] - mean_t) * inv_t;
        dst[i] = gamma * xhat[i] + beta;
      }
    }
  }
  if (ctx.mode == Mode::train) ++updates;
  return y;
}

template <typename T>
Tensor4<T> BatchNorm<T>::backward(const Tensor4<T>& dy, const LayerCache<T>& cache) {
  const Tensor4<T>& xhat = cache.tensor;
  if (!dy.same_shape(xhat)) {
    throw ValidationError("batch_norm backward: gradient " + format_dims(dy.dims()) +
                          " does not match " + format_dims(xhat.dims()));
  }
  const bool batch_stats = !cache.mask.empty() && cache.mask[0] != 0;
  const int n = dy.n();
  const std::size_t plane = static_cast<std::size_t>(dy.h()) * dy.w();
  const double m = static_cast<double>(plane) * n;
  Tensor4<T> dx(dy.n(), dy.c(), dy.h(), dy.w());
  for (int c = 0; c < channels_; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int s = 0; s < n; ++s) {
      const std::size_t off = (static_cast<std::size_t>(s) * channels_ + c) * plane;
      sum_dy += lane_sum(dy.data() + off, plane);
      sum_dy_xhat += lane_dot(dy.data() + off, xhat.data() + off, plane);
    }
    shift.grad[ci] += static_cast<T>(sum_dy);
    scale.grad[ci] += static_cast<T>(sum_dy_xhat);
    const double g = static_cast<double>(scale.value[ci]) * cache.scalars[ci];
    // dx = g/m * (m*dy - sum_dy - xhat*sum_dy_xhat), folded into a*dy + b + c*xhat
    const T a = static_cast<T>(g);
    const T b = batch_stats ? static_cast<T>(-g * sum_dy / m) : T(0);
    const T k = batch_stats ? static_cast<T>(-g * sum_dy_xhat / m) : T(0);
    for (int s = 0; s < n; ++s) {
      const std::size_t off = (static_cast<std::size_t>(s) * channels_ + c) * plane;
      const T* d = dy.data() + off;
      const T* xh = xhat.data() + off;
      T* out = dx.data() + off;
      for (std::size_t i = 0; i < plane; ++i) out[i] = a * d[i] + b + k * xh[i];
    }
  }
  return dx;
}

// ---------------------------------------------------------- InstanceNorm

template <typename T>
Tensor4<T> InstanceNorm<T>::forward(const Tensor4<T>& x, const ForwardContext&,
                                    LayerCache<T>& cache) const {
  const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
  const std::size_t groups = static_cast<std::size_t>(x.n()) * x.c();
  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  cache.scalars.assign(groups, T(0));
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    const T* src = x.data() + gidx * plane;
    T* dst = y.data() + gidx * plane;
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum += src[i];
    const double mean = sum / static_cast<double>(plane);
    double sq = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = src[i] - mean;
      sq += d * d;
    }
    const double inv_std = 1.0 / std::sqrt(sq / static_cast<double>(plane) + eps_);
    cache.scalars[gidx] = static_cast<T>(inv_std);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>((src[i] - mean) * inv_std);
  }
  cache.tensor = y;
  return y;
}

template <typename T>
Tensor4<T> InstanceNorm<T>::backward(const Tensor4<T>& dy, const LayerCache<T>& cache) const {
  const Tensor4<T>& xhat = cache.tensor;
  if (!dy.same_shape(xhat)) {
    throw ValidationError("instance_norm backward: gradient " + format_dims(dy.dims()) +
                          " does not match " + format_dims(xhat.dims()));
  }
  const std::size_t plane = static_cast<std::size_t>(dy.h()) * dy.w();
  const std::size_t groups = static_cast<std::size_t>(dy.n()) * dy.c();
  const double m = static_cast<double>(plane);
  Tensor4<T> dx(dy.n(), dy.c(), dy.h(), dy.w());
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    const T* d = dy.data() + gidx * plane;
    const T* xh = xhat.data() + gidx * plane;
    double sum_d = 0.0;
    double sum_dx = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      sum_d += d[i];
      sum_dx += static_cast<double>(d[i]) * xh[i];
    }
    const double inv_std = cache.scalars[gidx];
    T* out = dx.data() + gidx * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      out[i] = static_cast<T>(inv_std / m * (m * d[i] - sum_d - xh[i] * sum_dx));
    }
  }
  return dx;
}

// ------------------------------------------------------------------ Relu

template <typename T>
Tensor4<T> Relu<T>::forward(const Tensor4<T>& x, const ForwardContext&,
                            LayerCache<T>& cache) const {
  Tensor4<T> y = x;
  for (auto& v : y.values()) v = v < T(0) ? T(0) : v;  // NaN passes through
  cache.tensor = y;
  return y;
}

template <typename T>
Tensor4<T> Relu<T>::backward(const Tensor4<T>& dy, const LayerCache<T>& cache) const {
  Tensor4<T> dx = dy;
  const auto y = cache.tensor.values();
  auto out = dx.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(y[i] > T(0))) out[i] = T(0);
  }
  return dx;
}

// --------------------------------------------------------------- Dropout

template <typename T>
Dropout<T>::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must be in [0, 1)");
}

template <typename T>
Tensor4<T> Dropout<T>::forward(const Tensor4<T>& x, const ForwardContext& ctx,
                               LayerCache<T>& cache) const {
  cache.mask.clear();
  if (ctx.mode != Mode::train || rate_ == 0.0) return x;
  if (ctx.rng == nullptr) throw ValidationError("dropout: train mode needs an rng stream");
  Tensor4<T> y = x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
  cache.mask.resize(x.size());
  auto out = y.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    // 53-bit uniform in [0, 1), independent of the standard library's
    // distribution implementations.
    const double u = static_cast<double>((*ctx.rng)() >> 11) * 0x1.0p-53;
    const bool keep = u >= rate_;
    cache.mask[i] = keep ? 1 : 0;
    out[i] = keep ? out[i] * keep_scale : T(0);
  }
  return y;
}

template <typename T>
Tensor4<T> Dropout<T>::backward(const Tensor4<T>& dy, const LayerCache<T>& cache) const {
  if (cache.mask.empty()) return dy;
  Tensor4<T> dx = dy;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
  auto out = dx.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = cache.mask[i] ? out[i] * keep_scale : T(0);
  }
  return dx;
}

// ----------------------------------------------------------- L2Normalize

template <typename T>
Tensor4<T> L2Normalize<T>::forward(const Tensor4<T>& x, const ForwardContext&,
                                   LayerCache<T>& cache) const {
  const std::size_t dim = x.sample_size();
  Tensor4<T> y(x.n(), x.c(), x.h(), x.w());
  cache.scalars.assign(static_cast<std::size_t>(x.n()), T(0));
  for (int s = 0; s < x.n(); ++s) {
    const T* src = x.data() + static_cast<std::size_t>(s) * dim;
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) sq += static_cast<double>(src[i]) * src[i];
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
      throw DivergenceError("l2_normalize: non-finite activations in sample " + std::to_string(s));
    }
    if (!(norm > floor_)) {
      throw ValidationError("l2_normalize: norm " + std::to_string(norm) +
                            " below floor (degenerate descriptor) in sample " +
                            std::to_string(s));
    }
    cache.scalars[static_cast<std::size_t>(s)] = static_cast<T>(norm);
    T* dst = y.data() + static_cast<std::size_t>(s) * dim;
    for (std::size_t i = 0; i < dim; ++i) dst[i] = static_cast<T>(src[i] / norm);
  }
  cache.tensor = y;
  return y;
}

template <typename T>
Tensor4<T> L2Normalize<T>::backward(const Tensor4<T>& dy, const LayerCache<T>& cache) const {
  const Tensor4<T>& y = cache.tensor;
  if (!dy.same_shape(y)) {
    throw ValidationError("l2_normalize backward: gradient " + format_dims(dy.dims()) +
                          " does not match " + format_dims(y.dims()));
  }
  const std::size_t dim = y.sample_size();
  Tensor4<T> dx(dy.n(), dy.c(), dy.h(), dy.w());
  for (int s = 0; s < dy.n(); ++s) {
    const std::size_t off = static_cast<std::size_t>(s) * dim;
    double dot = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      dot += static_cast<double>(y.data()[off + i]) * dy.data()[off + i];
    }
    const double inv_norm = 1.0 / static_cast<double>(cache.scalars[static_cast<std::size_t>(s)]);
    for (std::size_t i = 0; i < dim; ++i) {
      dx.data()[off + i] =
          static_cast<T>((dy.data()[off + i] - y.data()[off + i] * dot) * inv_norm);
    }
  }
  return dx;
}

template <typename T>
std::vector<Param<T>*> layer_params(Layer<T>& layer) {
  if (auto* conv = std::get_if<Conv2d<T>>(&layer)) return {&conv->weight, &conv->bias};
  if (auto* bn = std::get_if<BatchNorm<T>>(&layer)) return {&bn->scale, &bn->shift};
  return {};
}

#define LPDESC_INSTANTIATE_LAYERS(T)                               \
  template struct Param<T>;                                        \
  template class Conv2d<T>;                                        \
  template class BatchNorm<T>;                                     \
  template class InstanceNorm<T>;                                  \
  template class Relu<T>;                                          \
  template class Dropout<T>;                                       \
  template class L2Normalize<T>;                                   \
  template std::vector<Param<T>*> layer_params(Layer<T>&);

LPDESC_INSTANTIATE_LAYERS(float)
LPDESC_INSTANTIATE_LAYERS(double)

#undef LPDESC_INSTANTIATE_LAYERS

}  // namespace lpdesc
