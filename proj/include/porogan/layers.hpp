#pragma once

// Volumetric layers with exact reverse-mode gradients. Each layer caches what
// its backward pass needs during forward; Sequential chains them.

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "porogan/error.hpp"
#include "porogan/tensor.hpp"

namespace porogan {

enum class Mode { train, eval };

enum class LayerKind { conv3d, conv_transpose3d, batchnorm3d, relu, leaky_relu, tanh, sigmoid, affine };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::conv_transpose3d: return "conv_transpose3d";
    case LayerKind::batchnorm3d: return "batchnorm3d";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::affine: return "affine";
  }
  return "?";
}

using Triple = std::array<std::size_t, 3>;

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_channels = 1, out_channels = 1;
  Triple kernel{1, 1, 1}, stride{1, 1, 1}, padding{0, 0, 0};
  bool bias = false;
  double slope = 0.2;                 // leaky_relu
  double scale = 1.0, shift = 0.0;    // affine: y = scale * x + shift
  double eps = 1e-5, momentum = 0.1;  // batchnorm3d

  void validate() const {
    require(in_channels >= 1 && out_channels >= 1, Errc::config, "channel counts must be >= 1");
    for (int a = 0; a < 3; ++a) {
      require(kernel[a] >= 1, Errc::config, "kernel must be >= 1");
      require(stride[a] >= 1, Errc::config, "stride must be >= 1");
    }
  }
};

inline LayerSpec conv_spec(LayerKind kind, std::size_t in, std::size_t out, std::size_t k, std::size_t s,
                           std::size_t p, bool bias = false) {
  LayerSpec spec;
  spec.kind = kind;
  spec.in_channels = in;
  spec.out_channels = out;
  spec.kernel = {k, k, k};
  spec.stride = {s, s, s};
  spec.padding = {p, p, p};
  spec.bias = bias;
  return spec;
}

/// Output extent of a convolution along one axis, or 0 if it does not fit.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (in + 2 * p < k) return 0;
  return (in + 2 * p - k) / s + 1;
}

/// Output extent of a transposed convolution, or 0 if non-positive.
inline std::size_t conv_transpose_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (in == 0) return 0;
  const std::size_t full = (in - 1) * s + k;
  return full > 2 * p ? full - 2 * p : 0;
}

/// Shape bookkeeping for a cross-correlation from `in_channels` x `in` to
/// `out_channels` x `out`. Transposed convolutions reuse it with the roles of
/// input and output exchanged.
struct ConvGeometry {
  std::size_t in_channels = 0, out_channels = 0;
  Triple in{}, out{}, kernel{}, stride{}, pad{};

  std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  std::size_t col_rows() const { return in_channels * kernel_volume(); }
  std::size_t out_spatial() const { return out[0] * out[1] * out[2]; }
  std::size_t in_spatial() const { return in[0] * in[1] * in[2]; }
};

namespace detail {

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t P = g.out_spatial();
  std::size_t row = 0;
  for (std::size_t ic = 0; ic < g.in_channels; ++ic)
    for (std::size_t a = 0; a < g.kernel[0]; ++a)
      for (std::size_t b = 0; b < g.kernel[1]; ++b)
        for (std::size_t c = 0; c < g.kernel[2]; ++c, ++row) {
          T* dst = cols + row * P;
          const T* xc = x + ic * g.in_spatial();
          for (std::size_t od = 0; od < g.out[0]; ++od) {
            const long long id = static_cast<long long>(od * g.stride[0] + a) - static_cast<long long>(g.pad[0]);
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              T* d = dst + (od * g.out[1] + oh) * g.out[2];
              const long long ih = static_cast<long long>(oh * g.stride[1] + b) - static_cast<long long>(g.pad[1]);
              if (id < 0 || ih < 0 || id >= static_cast<long long>(g.in[0]) || ih >= static_cast<long long>(g.in[1])) {
                std::fill(d, d + g.out[2], T{});
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(id) * g.in[1] + static_cast<std::size_t>(ih)) * g.in[2];
              for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                const long long iw =
                    static_cast<long long>(ow * g.stride[2] + c) - static_cast<long long>(g.pad[2]);
                d[ow] = (iw >= 0 && iw < static_cast<long long>(g.in[2])) ? src[iw] : T{};
              }
            }
          }
        }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
  const std::size_t P = g.out_spatial();
  std::size_t row = 0;
  for (std::size_t ic = 0; ic < g.in_channels; ++ic)
    for (std::size_t a = 0; a < g.kernel[0]; ++a)
      for (std::size_t b = 0; b < g.kernel[1]; ++b)
        for (std::size_t c = 0; c < g.kernel[2]; ++c, ++row) {
          const T* srcrow = cols + row * P;
          T* xc = x + ic * g.in_spatial();
          for (std::size_t od = 0; od < g.out[0]; ++od) {
            const long long id = static_cast<long long>(od * g.stride[0] + a) - static_cast<long long>(g.pad[0]);
            if (id < 0 || id >= static_cast<long long>(g.in[0])) continue;
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              const long long ih = static_cast<long long>(oh * g.stride[1] + b) - static_cast<long long>(g.pad[1]);
              if (ih < 0 || ih >= static_cast<long long>(g.in[1])) continue;
              const T* s = srcrow + (od * g.out[1] + oh) * g.out[2];
              T* dst = xc + (static_cast<std::size_t>(id) * g.in[1] + static_cast<std::size_t>(ih)) * g.in[2];
              for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                const long long iw =
                    static_cast<long long>(ow * g.stride[2] + c) - static_cast<long long>(g.pad[2]);
                if (iw >= 0 && iw < static_cast<long long>(g.in[2])) dst[iw] += s[ow];
              }
            }
          }
        }
}

}  // namespace detail

/// Cross-correlation with zero padding: y[n] = W * im2col(x[n]) (+ bias).
/// W has shape (out_channels, in_channels, kd, kh, kw).
template <typename T>
void conv_forward(const T* x, const T* W, const T* bias, const ConvGeometry& g, std::size_t batch, T* y) {
  const std::size_t K = g.col_rows(), P = g.out_spatial();
  std::vector<T> cols(K * P);
  for (std::size_t n = 0; n < batch; ++n) {
    detail::im2col(x + n * g.in_channels * g.in_spatial(), g, cols.data());
    T* yn = y + n * g.out_channels * P;
    blas::gemm(blas::Trans::no, blas::Trans::no, g.out_channels, P, K, T(1), W, K, cols.data(), P, T(0), yn, P);
    if (bias)
      for (std::size_t oc = 0; oc < g.out_channels; ++oc)
        for (std::size_t p = 0; p < P; ++p) yn[oc * P + p] += bias[oc];
  }
}

/// Adjoint of conv_forward with respect to x: scatters dy back onto the input grid.
template <typename T>
void conv_backward_data(const T* dy, const T* W, const ConvGeometry& g, std::size_t batch, T* dx) {
  const std::size_t K = g.col_rows(), P = g.out_spatial();
  std::vector<T> cols(K * P);
  for (std::size_t n = 0; n < batch; ++n) {
    blas::gemm(blas::Trans::yes, blas::Trans::no, K, P, g.out_channels, T(1), W, K, dy + n * g.out_channels * P, P,
               T(0), cols.data(), P);
    T* dxn = dx + n * g.in_channels * g.in_spatial();
    std::fill(dxn, dxn + g.in_channels * g.in_spatial(), T{});
    detail::col2im(cols.data(), g, dxn);
  }
}

/// Accumulates dW += sum_n dy[n] * im2col(x[n])^T.
template <typename T>
void conv_backward_weight(const T* x, const T* dy, const ConvGeometry& g, std::size_t batch, T* dW) {
  const std::size_t K = g.col_rows(), P = g.out_spatial();
  std::vector<T> cols(K * P);
  for (std::size_t n = 0; n < batch; ++n) {
    detail::im2col(x + n * g.in_channels * g.in_spatial(), g, cols.data());
    blas::gemm(blas::Trans::no, blas::Trans::yes, g.out_channels, K, P, T(1), dy + n * g.out_channels * P, P,
               cols.data(), P, T(1), dW, K);
  }
}

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor5<T> forward(const Tensor5<T>& x, Mode mode) = 0;
  /// Returns dL/dx and accumulates parameter gradients.
  virtual Tensor5<T> backward(const Tensor5<T>& grad_out) = 0;
  virtual std::vector<std::pair<std::string, Parameter<T>*>> parameters() { return {}; }
  virtual std::vector<std::pair<std::string, Tensor5<T>*>> buffers() { return {}; }
  virtual const LayerSpec& spec() const = 0;
  /// Output shape for a given input shape (throws on mismatch).
  virtual Shape5 output_shape(const Shape5& in) const = 0;
};

namespace detail {
[[noreturn]] inline void no_forward(const char* what) {
  fail(Errc::graph, std::string(what) + ": backward called before forward");
}
}  // namespace detail

/// 3-D convolution (cross-correlation, no kernel flip).
template <typename T>
class Conv3d final : public Layer<T> {
 public:
  explicit Conv3d(LayerSpec spec) : spec_(std::move(spec)) {
    spec_.kind = LayerKind::conv3d;
    spec_.validate();
    weight_ = Parameter<T>({spec_.out_channels, spec_.in_channels, spec_.kernel[0], spec_.kernel[1], spec_.kernel[2]});
    if (spec_.bias) bias_ = Parameter<T>({1, spec_.out_channels, 1, 1, 1});
  }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

  ConvGeometry geometry(const Shape5& in) const {
    require(in[1] == spec_.in_channels, Errc::shape,
            "conv3d expects " + std::to_string(spec_.in_channels) + " input channels, got " + shape_string(in));
    ConvGeometry g;
    g.in_channels = spec_.in_channels;
    g.out_channels = spec_.out_channels;
    g.kernel = spec_.kernel;
    g.stride = spec_.stride;
    g.pad = spec_.padding;
    for (int a = 0; a < 3; ++a) {
      g.in[a] = in[2 + a];
      g.out[a] = conv_out_extent(in[2 + a], spec_.kernel[a], spec_.stride[a], spec_.padding[a]);
      require(g.out[a] >= 1, Errc::shape, "conv3d output would be empty for input " + shape_string(in));
    }
    return g;
  }

  Shape5 output_shape(const Shape5& in) const override {
    auto g = geometry(in);
    return {in[0], spec_.out_channels, g.out[0], g.out[1], g.out[2]};
  }

  Tensor5<T> forward(const Tensor5<T>& x, Mode) override {
    const auto g = geometry(x.shape());
    Tensor5<T> y(output_shape(x.shape()));
    conv_forward(x.data(), weight_.value.data(), spec_.bias ? bias_.value.data() : nullptr, g, x.extent(0), y.data());
    input_ = x;
    recorded_ = true;
    return y;
  }

  Tensor5<T> backward(const Tensor5<T>& dy) override {
    if (!recorded_) detail::no_forward("conv3d");
    const auto g = geometry(input_.shape());
    require(dy.shape() == output_shape(input_.shape()), Errc::shape, "conv3d gradient shape mismatch");
    Tensor5<T> dx(input_.shape());
    conv_backward_data(dy.data(), weight_.value.data(), g, dy.extent(0), dx.data());
    conv_backward_weight(input_.data(), dy.data(), g, dy.extent(0), weight_.grad.data());
    if (spec_.bias) accumulate_bias(dy);
    recorded_ = false;
    return dx;
  }

  std::vector<std::pair<std::string, Parameter<T>*>> parameters() override {
    std::vector<std::pair<std::string, Parameter<T>*>> p{{"weight", &weight_}};
    if (spec_.bias) p.emplace_back("bias", &bias_);
    return p;
  }
  const LayerSpec& spec() const override { return spec_; }

 private:
  void accumulate_bias(const Tensor5<T>& dy) {
    const std::size_t S = dy.spatial_size();
    for (std::size_t c = 0; c < spec_.out_channels; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < dy.extent(0); ++n) {
        const T* p = dy.data() + (n * spec_.out_channels + c) * S;
        for (std::size_t i = 0; i < S; ++i) acc += static_cast<double>(p[i]);
      }
      bias_.grad[c] += static_cast<T>(acc);
    }
  }

  LayerSpec spec_;
  Parameter<T> weight_, bias_;
  Tensor5<T> input_;
  bool recorded_ = false;
};

/// Transposed convolution (the data-gradient of Conv3d). Weight shape is
/// (in_channels, out_channels, kd, kh, kw).
template <typename T>
class ConvTranspose3d final : public Layer<T> {
 public:
  explicit ConvTranspose3d(LayerSpec spec) : spec_(std::move(spec)) {
    spec_.kind = LayerKind::conv_transpose3d;
    spec_.validate();
    weight_ = Parameter<T>({spec_.in_channels, spec_.out_channels, spec_.kernel[0], spec_.kernel[1], spec_.kernel[2]});
    if (spec_.bias) bias_ = Parameter<T>({1, spec_.out_channels, 1, 1, 1});
  }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

  /// Geometry of the equivalent forward convolution (output -> input).
  ConvGeometry geometry(const Shape5& in) const {
    require(in[1] == spec_.in_channels, Errc::shape,
            "conv_transpose3d expects " + std::to_string(spec_.in_channels) + " input channels, got " +
                shape_string(in));
    ConvGeometry g;
    g.in_channels = spec_.out_channels;
    g.out_channels = spec_.in_channels;
    g.kernel = spec_.kernel;
    g.stride = spec_.stride;
    g.pad = spec_.padding;
    for (int a = 0; a < 3; ++a) {
      g.out[a] = in[2 + a];
      g.in[a] = conv_transpose_out_extent(in[2 + a], spec_.kernel[a], spec_.stride[a], spec_.padding[a]);
      require(g.in[a] >= 1, Errc::shape, "conv_transpose3d output would be empty for input " + shape_string(in));
    }
    return g;
  }

  Shape5 output_shape(const Shape5& in) const override {
    auto g = geometry(in);
    return {in[0], spec_.out_channels, g.in[0], g.in[1], g.in[2]};
  }

  Tensor5<T> forward(const Tensor5<T>& x, Mode) override {
    const auto g = geometry(x.shape());
    Tensor5<T> y(output_shape(x.shape()));
    conv_backward_data(x.data(), weight_.value.data(), g, x.extent(0), y.data());
    if (spec_.bias) {
      const std::size_t S = y.spatial_size();
      for (std::size_t n = 0; n < y.extent(0); ++n)
        for (std::size_t c = 0; c < spec_.out_channels; ++c) {
          T* p = y.data() + (n * spec_.out_channels + c) * S;
          for (std::size_t i = 0; i < S; ++i) p[i] += bias_.value[c];
        }
    }
    input_ = x;
    recorded_ = true;
    return y;
  }

  Tensor5<T> backward(const Tensor5<T>& dy) override {
    if (!recorded_) detail::no_forward("conv_transpose3d");
    const auto g = geometry(input_.shape());
    require(dy.shape() == output_shape(input_.shape()), Errc::shape, "conv_transpose3d gradient shape mismatch");
    Tensor5<T> dx(input_.shape());
    conv_forward(dy.data(), weight_.value.data(), static_cast<const T*>(nullptr), g, dy.extent(0), dx.data());
    // dW[ic_T, oc_T, k] = sum x[ic_T] * im2col(dy)[oc_T, k]
    conv_backward_weight(dy.data(), input_.data(), g, dy.extent(0), weight_.grad.data());
    if (spec_.bias) {
      const std::size_t S = dy.spatial_size();
      for (std::size_t c = 0; c < spec_.out_channels; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < dy.extent(0); ++n) {
          const T* p = dy.data() + (n * spec_.out_channels + c) * S;
          for (std::size_t i = 0; i < S; ++i) acc += static_cast<double>(p[i]);
        }
        bias_.grad[c] += static_cast<T>(acc);
      }
    }
    recorded_ = false;
    return dx;
  }

  std::vector<std::pair<std::string, Parameter<T>*>> parameters() override {
    std::vector<std::pair<std::string, Parameter<T>*>> p{{"weight", &weight_}};
    if (spec_.bias) p.emplace_back("bias", &bias_);
    return p;
  }
  const LayerSpec& spec() const override { return spec_; }

 private:
  LayerSpec spec_;
  Parameter<T> weight_, bias_;
  Tensor5<T> input_;
  bool recorded_ = false;
};

/// Per-channel batch normalisation over (batch, depth, height, width).
/// Statistics accumulate in double. Running variance uses the unbiased estimate.
template <typename T>
class BatchNorm3d final : public Layer<T> {
 public:
  explicit BatchNorm3d(LayerSpec spec) : spec_(std::move(spec)) {
    spec_.kind = LayerKind::batchnorm3d;
    spec_.out_channels = spec_.in_channels;
    spec_.validate();
    const std::size_t C = spec_.in_channels;
    gamma_ = Parameter<T>({1, C, 1, 1, 1}, T(1));
    beta_ = Parameter<T>({1, C, 1, 1, 1}, T(0));
    running_mean_ = Tensor5<T>({1, C, 1, 1, 1}, T(0));
    running_var_ = Tensor5<T>({1, C, 1, 1, 1}, T(1));
  }

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  Tensor5<T>& running_mean() { return running_mean_; }
  Tensor5<T>& running_var() { return running_var_; }

  Shape5 output_shape(const Shape5& in) const override {
    require(in[1] == spec_.in_channels, Errc::shape, "batchnorm3d channel mismatch for " + shape_string(in));
    return in;
  }

  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) override {
    output_shape(x.shape());
    const std::size_t N = x.extent(0), C = x.extent(1), S = x.spatial_size();
    const std::size_t count = N * S;
    xhat_ = Tensor5<T>(x.shape());
    inv_std_.assign(C, 0.0);
    Tensor5<T> y(x.shape());
    mode_ = mode;
    if (mode == Mode::train)
      require(count >= 2, Errc::degenerate_batch, "batch norm in train mode needs >= 2 values per channel");
    for (std::size_t c = 0; c < C; ++c) {
      double mean, var;
      if (mode == Mode::train) {
        double s = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = x.data() + (n * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) s += static_cast<double>(p[i]);
        }
        mean = s / static_cast<double>(count);
        double ss = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = x.data() + (n * C + c) * S;
          for (std::size_t i = 0; i < S; ++i) {
            const double d = static_cast<double>(p[i]) - mean;
            ss += d * d;
          }
        }
        var = ss / static_cast<double>(count);
        const double m = spec_.momentum;
        running_mean_[c] = static_cast<T>((1.0 - m) * static_cast<double>(running_mean_[c]) + m * mean);
        running_var_[c] = static_cast<T>((1.0 - m) * static_cast<double>(running_var_[c]) +
                                         m * ss / static_cast<double>(count - 1));
      } else {
        mean = static_cast<double>(running_mean_[c]);
        var = static_cast<double>(running_var_[c]);
      }
      const double inv = 1.0 / std::sqrt(var + spec_.eps);
      inv_std_[c] = inv;
      const double g = static_cast<double>(gamma_.value[c]), b = static_cast<double>(beta_.value[c]);
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          const double xh = (static_cast<double>(x[off + i]) - mean) * inv;
          xhat_[off + i] = static_cast<T>(xh);
          y[off + i] = static_cast<T>(g * xh + b);
        }
      }
    }
    recorded_ = true;
    return y;
  }

  Tensor5<T> backward(const Tensor5<T>& dy) override {
    if (!recorded_) detail::no_forward("batchnorm3d");
    require(dy.same_shape(xhat_), Errc::shape, "batchnorm3d gradient shape mismatch");
    const std::size_t N = dy.extent(0), C = dy.extent(1), S = dy.spatial_size();
    const double count = static_cast<double>(N * S);
    Tensor5<T> dx(dy.shape());
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          sum_dy += static_cast<double>(dy[off + i]);
          sum_dy_xh += static_cast<double>(dy[off + i]) * static_cast<double>(xhat_[off + i]);
        }
      }
      gamma_.grad[c] += static_cast<T>(sum_dy_xh);
      beta_.grad[c] += static_cast<T>(sum_dy);
      const double k = static_cast<double>(gamma_.value[c]) * inv_std_[c];
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * S;
        for (std::size_t i = 0; i < S; ++i) {
          const double g = static_cast<double>(dy[off + i]);
          if (mode_ == Mode::train)
            dx[off + i] = static_cast<T>(
                k * (g - sum_dy / count - static_cast<double>(xhat_[off + i]) * sum_dy_xh / count));
          else
            dx[off + i] = static_cast<T>(k * g);
        }
      }
    }
    recorded_ = false;
    return dx;
  }

  std::vector<std::pair<std::string, Parameter<T>*>> parameters() override {
    return {{"gamma", &gamma_}, {"beta", &beta_}};
  }
  std::vector<std::pair<std::string, Tensor5<T>*>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }
  const LayerSpec& spec() const override { return spec_; }

 private:
  LayerSpec spec_;
  Parameter<T> gamma_, beta_;
  Tensor5<T> running_mean_, running_var_;
  Tensor5<T> xhat_;
  std::vector<double> inv_std_;
  Mode mode_ = Mode::train;
  bool recorded_ = false;
};

/// Elementwise activations (relu, leaky_relu, tanh, sigmoid, affine).
template <typename T>
class Activation final : public Layer<T> {
 public:
  explicit Activation(LayerSpec spec) : spec_(std::move(spec)) {
    require(spec_.kind == LayerKind::relu || spec_.kind == LayerKind::leaky_relu || spec_.kind == LayerKind::tanh ||
                spec_.kind == LayerKind::sigmoid || spec_.kind == LayerKind::affine,
            Errc::config, "not an elementwise activation");
  }

  static T apply(const LayerSpec& s, T v) {
    switch (s.kind) {
      case LayerKind::relu: return v > T(0) ? v : T(0);
      case LayerKind::leaky_relu: return v > T(0) ? v : static_cast<T>(s.slope) * v;
      case LayerKind::tanh: return std::tanh(v);
      case LayerKind::sigmoid: return T(1) / (T(1) + std::exp(-v));
      case LayerKind::affine: return static_cast<T>(s.scale) * v + static_cast<T>(s.shift);
      default: return v;
    }
  }

  Shape5 output_shape(const Shape5& in) const override { return in; }

  Tensor5<T> forward(const Tensor5<T>& x, Mode) override {
    Tensor5<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = apply(spec_, x[i]);
    // relu-family derivatives need the input sign, tanh/sigmoid the output.
    cache_ = (spec_.kind == LayerKind::tanh || spec_.kind == LayerKind::sigmoid) ? y : x;
    recorded_ = true;
    return y;
  }

  Tensor5<T> backward(const Tensor5<T>& dy) override {
    if (!recorded_) detail::no_forward(layer_kind_name(spec_.kind));
    require(dy.same_shape(cache_), Errc::shape, "activation gradient shape mismatch");
    Tensor5<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const T c = cache_[i];
      T d;
      switch (spec_.kind) {
        case LayerKind::relu: d = c > T(0) ? T(1) : T(0); break;
        case LayerKind::leaky_relu: d = c > T(0) ? T(1) : static_cast<T>(spec_.slope); break;
        case LayerKind::tanh: d = T(1) - c * c; break;
        case LayerKind::sigmoid: d = c * (T(1) - c); break;
        case LayerKind::affine: d = static_cast<T>(spec_.scale); break;
        default: d = T(1);
      }
      dx[i] = dy[i] * d;
    }
    recorded_ = false;
    return dx;
  }

  const LayerSpec& spec() const override { return spec_; }

 private:
  LayerSpec spec_;
  Tensor5<T> cache_;
  bool recorded_ = false;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::conv3d: return std::make_unique<Conv3d<T>>(spec);
    case LayerKind::conv_transpose3d: return std::make_unique<ConvTranspose3d<T>>(spec);
    case LayerKind::batchnorm3d: return std::make_unique<BatchNorm3d<T>>(spec);
    default: return std::make_unique<Activation<T>>(spec);
  }
}

/// Ordered layer stack. backward() replays the most recent forward in reverse.
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(const std::vector<LayerSpec>& specs) {
    for (const auto& s : specs) add(s);
  }

  void add(const LayerSpec& spec) { layers_.push_back(make_layer<T>(spec)); }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& operator[](std::size_t i) { return *layers_[i]; }
  const Layer<T>& operator[](std::size_t i) const { return *layers_[i]; }

  Tensor5<T> forward(const Tensor5<T>& x, Mode mode) {
    Tensor5<T> h = x;
    for (auto& l : layers_) h = l->forward(h, mode);
    recorded_ = true;
    return h;
  }

  Tensor5<T> backward(const Tensor5<T>& dy) {
    require(recorded_, Errc::graph, "backward called before forward");
    Tensor5<T> g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    recorded_ = false;
    return g;
  }

  Shape5 output_shape(Shape5 in) const {
    for (const auto& l : layers_) in = l->output_shape(in);
    return in;
  }

  /// Parameters named "<layer>.<name>" in layer order.
  std::vector<std::pair<std::string, Parameter<T>*>> parameters() {
    std::vector<std::pair<std::string, Parameter<T>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto& [name, p] : layers_[i]->parameters()) out.emplace_back(std::to_string(i) + "." + name, p);
    return out;
  }

  std::vector<std::pair<std::string, Tensor5<T>*>> buffers() {
    std::vector<std::pair<std::string, Tensor5<T>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto& [name, b] : layers_[i]->buffers()) out.emplace_back(std::to_string(i) + "." + name, b);
    return out;
  }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(l->spec());
    return out;
  }

  void zero_grad() {
    for (auto& [name, p] : parameters()) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  bool recorded_ = false;
};

}  // namespace porogan
