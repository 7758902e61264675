#include "dfd/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dfd/autograd.hpp"
#include "dfd/ops.hpp"

namespace dfd {

using autograd::grad_of;
using autograd::Impl;
using autograd::make_result;

template <typename T>
void Conv2dParams<T>::validate() const {
  if (kernels.rank() != 4) throw ShapeError("conv2d: kernels must be rank 4");
  if (kernels.dim(2) < 1 || kernels.dim(3) < 1) throw ShapeError("conv2d: empty kernel");
  if (depthwise && kernels.dim(1) != 1) throw ShapeError("conv2d: depthwise kernels are [C,1,kh,kw]");
  if (bias && (bias->rank() != 1 || bias->dim(0) != kernels.dim(0)))
    throw ShapeError("conv2d: bias length must equal output channels");
  if (stride < 1) throw ShapeError("conv2d: stride must be positive");
  if (padding == Padding::same && (kernels.dim(2) % 2 == 0 || kernels.dim(3) % 2 == 0))
    throw ShapeError("conv2d: same padding needs odd kernel extents");
}

template <typename T>
void AttentionParams<T>::validate() const {
  const std::size_t c = embed_dim();
  if (heads == 0 || c % heads != 0)
    throw ShapeError("msa: embedding dim " + std::to_string(c) + " not divisible by " +
                     std::to_string(heads) + " heads");
  for (const auto* d : {&query, &key, &value, &output})
    if (d->in_features() != c || d->out_features() != c)
      throw ShapeError("msa: projections must be C x C");
}

// --- factories -------------------------------------------------------------

namespace {

template <typename T>
BasicTensor<T> init_weight(Shape shape, std::size_t fan_in, std::size_t fan_out, Init init,
                           Rng& rng) {
  const double bound = init == Init::he_uniform
                           ? std::sqrt(6.0 / static_cast<double>(fan_in))
                           : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  auto t = BasicTensor<T>::uniform(std::move(shape), rng, T(-bound), T(bound));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
BasicTensor<T> param(Shape shape, T value) {
  auto t = BasicTensor<T>::full(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

template <typename T>
Conv2dParams<T> make_conv2d(std::size_t in, std::size_t out, std::size_t kernel,
                            std::size_t stride, Padding padding, bool with_bias, Rng& rng,
                            Init init) {
  Conv2dParams<T> p;
  p.kernels = init_weight<T>({out, in, kernel, kernel}, in * kernel * kernel,
                             out * kernel * kernel, init, rng);
  if (with_bias) p.bias = param<T>({out}, T(0));
  p.stride = stride;
  p.padding = padding;
  p.validate();
  return p;
}

template <typename T>
Conv2dParams<T> make_depthwise(std::size_t channels, std::size_t kernel, std::size_t stride,
                               bool with_bias, Rng& rng) {
  Conv2dParams<T> p;
  p.kernels = init_weight<T>({channels, 1, kernel, kernel}, kernel * kernel, kernel * kernel,
                             Init::he_uniform, rng);
  if (with_bias) p.bias = param<T>({channels}, T(0));
  p.stride = stride;
  p.padding = Padding::same;
  p.depthwise = true;
  p.validate();
  return p;
}

template <typename T>
DenseParams<T> make_dense(std::size_t in, std::size_t out, Rng& rng, Init init) {
  return {init_weight<T>({in, out}, in, out, init, rng), param<T>({out}, T(0))};
}

template <typename T>
LayerNormParams<T> make_layer_norm(std::size_t channels) {
  return {param<T>({channels}, T(1)), param<T>({channels}, T(0)), 1e-5};
}

template <typename T>
BatchNormParams<T> make_batch_norm(std::size_t channels) {
  return {param<T>({channels}, T(1)), param<T>({channels}, T(0)),
          BasicTensor<T>::zeros({channels}), BasicTensor<T>::ones({channels}), 0.9, 1e-5};
}

template <typename T>
AttentionParams<T> make_attention(std::size_t embed_dim, std::size_t heads, Rng& rng) {
  AttentionParams<T> p;
  p.query = make_dense<T>(embed_dim, embed_dim, rng, Init::xavier_uniform);
  p.key = make_dense<T>(embed_dim, embed_dim, rng, Init::xavier_uniform);
  p.value = make_dense<T>(embed_dim, embed_dim, rng, Init::xavier_uniform);
  p.output = make_dense<T>(embed_dim, embed_dim, rng, Init::xavier_uniform);
  p.heads = heads;
  p.validate();
  return p;
}

template <typename T>
FfnParams<T> make_ffn(std::size_t embed_dim, std::size_t expansion, Rng& rng) {
  if (expansion < 1) throw ShapeError("ffn: expansion rate must be >= 1");
  return {make_dense<T>(embed_dim, embed_dim * expansion, rng, Init::xavier_uniform),
          make_dense<T>(embed_dim * expansion, embed_dim, rng, Init::xavier_uniform)};
}

// --- convolution -------------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width;
  std::size_t out_ch, kh, kw, stride, pad_h, pad_w;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_ch * kh * kw; }
  std::size_t pixels() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad_h == 0 && pad_w == 0; }
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const Conv2dParams<T>& p) {
  p.validate();
  if (input.rank() != 4) throw ShapeError("conv2d: input must be [B,C,H,W], got " + to_string(input.shape()));
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_ch = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  if (g.in_ch != p.in_channels())
    throw ShapeError("conv2d: input has " + std::to_string(g.in_ch) + " channels, kernels expect " +
                     std::to_string(p.in_channels()));
  g.out_ch = p.out_channels();
  g.kh = p.kernels.dim(2);
  g.kw = p.kernels.dim(3);
  g.stride = p.stride;
  g.pad_h = p.padding == Padding::same ? (g.kh - 1) / 2 : 0;
  g.pad_w = p.padding == Padding::same ? (g.kw - 1) / 2 : 0;
  if (g.height + 2 * g.pad_h < g.kh || g.width + 2 * g.pad_w < g.kw)
    throw ShapeError("conv2d: kernel larger than padded input " + to_string(input.shape()));
  g.out_h = (g.height + 2 * g.pad_h - g.kh) / g.stride + 1;
  g.out_w = (g.width + 2 * g.pad_w - g.kw) / g.stride + 1;
  return g;
}

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* col) {
  const std::size_t hw = g.pixels();
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix < static_cast<std::ptrdiff_t>(g.width);
            row[oy * g.out_w + ox] =
                inside ? image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                               static_cast<std::size_t>(ix)]
                       : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* image) {
  const std::size_t hw = g.pixels();
  for (std::size_t c = 0; c < g.in_ch; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * hw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                  static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
          }
        }
      }
}

template <typename T>
BasicTensor<T> conv2d_dense(const BasicTensor<T>& input, const Conv2dParams<T>& p,
                            const ConvGeometry& g) {
  const std::size_t k = g.patch(), hw = g.pixels();
  const std::size_t in_plane = g.in_ch * g.height * g.width;
  std::vector<T> out(g.batch * g.out_ch * hw);
  std::vector<T> col(g.pointwise() ? 0 : k * hw);
  const T* weights = p.kernels.data().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* image = input.data().data() + b * in_plane;
    const T* cols = image;
    if (!g.pointwise()) {
      im2col(g, image, col.data());
      cols = col.data();
    }
    T* dst = out.data() + b * g.out_ch * hw;
    gemm(false, false, g.out_ch, hw, k, weights, cols, dst, false);
    if (p.bias)
      for (std::size_t o = 0; o < g.out_ch; ++o) {
        const T bo = p.bias->data()[o];
        for (std::size_t i = 0; i < hw; ++i) dst[o * hw + i] += bo;
      }
  }
  auto xi = input.impl(), wi = p.kernels.impl();
  auto bi = p.bias ? p.bias->impl() : nullptr;
  std::vector<autograd::ImplPtr<T>> inputs{xi, wi};
  if (bi) inputs.push_back(bi);
  return make_result<T>(
      {g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [xi, wi, bi, g](Impl<T>& o) {
        const std::size_t k = g.patch(), hw = g.pixels();
        const std::size_t in_plane = g.in_ch * g.height * g.width;
        std::vector<T> col(g.pointwise() ? 0 : k * hw);
        std::vector<T> dcol(k * hw);
        for (std::size_t b = 0; b < g.batch; ++b) {
          const T* dout = o.grad.data() + b * g.out_ch * hw;
          if (wi->requires_grad) {
            const T* cols = xi->data.data() + b * in_plane;
            if (!g.pointwise()) {
              im2col(g, cols, col.data());
              cols = col.data();
            }
            gemm(false, true, g.out_ch, k, hw, dout, cols, grad_of(*wi).data(), true);
          }
          if (bi && bi->requires_grad) {
            auto& gb = grad_of(*bi);
            for (std::size_t c = 0; c < g.out_ch; ++c)
              for (std::size_t i = 0; i < hw; ++i) gb[c] += dout[c * hw + i];
          }
          if (xi->requires_grad) {
            T* dimg = grad_of(*xi).data() + b * in_plane;
            if (g.pointwise()) {
              gemm(true, false, k, hw, g.out_ch, wi->data.data(), dout, dimg, true);
            } else {
              gemm(true, false, k, hw, g.out_ch, wi->data.data(), dout, dcol.data(), false);
              col2im_add(g, dcol.data(), dimg);
            }
          }
        }
      },
      "conv2d");
}

template <typename T>
BasicTensor<T> conv2d_depthwise(const BasicTensor<T>& input, const Conv2dParams<T>& p,
                                const ConvGeometry& g) {
  const std::size_t hw = g.pixels();
  std::vector<T> out(g.batch * g.out_ch * hw);
  const auto& x = input.values();
  const auto& w = p.kernels.values();
  // Visits every (output, tap) pair whose input position lies inside.
  auto for_each_tap = [g](auto&& fn) {
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t c = 0; c < g.in_ch; ++c)
        for (std::size_t oy = 0; oy < g.out_h; ++oy)
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::size_t o = ((b * g.in_ch + c) * g.out_h + oy) * g.out_w + ox;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                              static_cast<std::ptrdiff_t>(g.pad_h);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                static_cast<std::ptrdiff_t>(g.pad_w);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                const std::size_t i = ((b * g.in_ch + c) * g.height + static_cast<std::size_t>(iy)) *
                                          g.width +
                                      static_cast<std::size_t>(ix);
                fn(o, i, (c * g.kh + ky) * g.kw + kx, c);
              }
            }
          }
  };
  for_each_tap([&](std::size_t o, std::size_t i, std::size_t wk, std::size_t) {
    out[o] += x[i] * w[wk];
  });
  if (p.bias)
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t c = 0; c < g.in_ch; ++c)
        for (std::size_t i = 0; i < hw; ++i) out[(b * g.in_ch + c) * hw + i] += p.bias->data()[c];
  auto xi = input.impl(), wi = p.kernels.impl();
  auto bi = p.bias ? p.bias->impl() : nullptr;
  std::vector<autograd::ImplPtr<T>> inputs{xi, wi};
  if (bi) inputs.push_back(bi);
  return make_result<T>(
      {g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [xi, wi, bi, g, for_each_tap](Impl<T>& r) {
        const std::size_t hw = g.pixels();
        T* dx = xi->requires_grad ? grad_of(*xi).data() : nullptr;
        T* dw = wi->requires_grad ? grad_of(*wi).data() : nullptr;
        for_each_tap([&](std::size_t o, std::size_t i, std::size_t wk, std::size_t) {
          if (dx) dx[i] += r.grad[o] * wi->data[wk];
          if (dw) dw[wk] += r.grad[o] * xi->data[i];
        });
        if (bi && bi->requires_grad) {
          auto& gb = grad_of(*bi);
          for (std::size_t b = 0; b < g.batch; ++b)
            for (std::size_t c = 0; c < g.in_ch; ++c)
              for (std::size_t i = 0; i < hw; ++i) gb[c] += r.grad[(b * g.in_ch + c) * hw + i];
        }
      },
      "depthwise_conv2d");
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const Conv2dParams<T>& p) {
  const auto g = conv_geometry(input, p);
  return p.depthwise ? conv2d_depthwise(input, p, g) : conv2d_dense(input, p, g);
}

// --- pooling -------------------------------------------------------------------

template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, std::size_t window, std::size_t stride,
                         std::size_t padding) {
  if (input.rank() != 4) throw ShapeError("maxpool2d: input must be [B,C,H,W]");
  if (window == 0 || stride == 0) throw ShapeError("maxpool2d: window and stride must be positive");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  if (window > h + 2 * padding || window > w + 2 * padding)
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " exceeds input " +
                     to_string(input.shape()));
  if (padding >= window) throw ShapeError("maxpool2d: padding must be smaller than the window");
  const std::size_t oh = (h + 2 * padding - window) / stride + 1;
  const std::size_t ow = (w + 2 * padding - window) / stride + 1;
  std::vector<T> out(planes * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto& x = input.values();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = 0;
        bool found = false;
        for (std::size_t ky = 0; ky < window; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < window; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t i = (pl * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
            if (!found || x[i] > best) {
              best = x[i];
              best_i = i;
              found = true;
            }
          }
        }
        const std::size_t o = (pl * oh + oy) * ow + ox;
        out[o] = best;
        (*argmax)[o] = best_i;
      }
  auto xi = input.impl();
  return make_result<T>(
      {input.dim(0), input.dim(1), oh, ow}, std::move(out), {xi},
      [xi, argmax](Impl<T>& o) {
        auto& g = grad_of(*xi);
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*argmax)[i]] += o.grad[i];
      },
      "maxpool2d");
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
  if (input.rank() != 4) throw ShapeError("global_avg_pool: input must be [B,C,H,W]");
  const std::size_t b = input.dim(0), c = input.dim(1);
  return mean(reshape(input, {b, c, input.dim(2) * input.dim(3)}), 2);
}

// --- dense / reshaping -------------------------------------------------------------

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const DenseParams<T>& p) {
  if (input.rank() < 1 || input.shape().back() != p.in_features())
    throw ShapeError("dense: input " + to_string(input.shape()) + " does not end in " +
                     std::to_string(p.in_features()));
  if (p.bias.rank() != 1 || p.bias.dim(0) != p.out_features())
    throw ShapeError("dense: bias length must equal output features");
  const std::size_t rows = input.numel() / p.in_features();
  auto flat = input.rank() == 2 ? input : reshape(input, {rows, p.in_features()});
  auto out = add_trailing(matmul(flat, p.weight), p.bias);
  if (input.rank() == 2) return out;
  Shape shape = input.shape();
  shape.back() = p.out_features();
  return reshape(out, std::move(shape));
}

template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& input) {
  if (input.rank() < 2) throw ShapeError("flatten: rank >= 2 required");
  if (input.rank() == 2) return input;
  return reshape(input, {input.dim(0), input.numel() / std::max<std::size_t>(1, input.dim(0))});
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& input, double rate, bool training,
                       std::uint64_t seed) {
  if (!(rate >= 0.0) || rate >= 1.0)
    throw DomainError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return input;
  Rng rng(seed);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(input.numel());
  std::vector<T> out(input.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? T(0) : scale;
    out[i] = input.data()[i] * (*mask)[i];
  }
  auto xi = input.impl();
  return make_result<T>(
      input.shape(), std::move(out), {xi},
      [xi, mask](Impl<T>& o) {
        auto& g = grad_of(*xi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*mask)[i];
      },
      "dropout");
}

// --- activations -------------------------------------------------------------------

namespace {

// Elementwise op defined by value f(z) and derivative df(z, f(z)).
template <typename T, typename F, typename DF>
BasicTensor<T> pointwise(const BasicTensor<T>& z, F f, DF df, std::string_view name) {
  std::vector<T> out(z.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(z.data()[i]);
  auto zi = z.impl();
  return make_result<T>(
      z.shape(), std::move(out), {zi},
      [zi, df](Impl<T>& o) {
        auto& g = grad_of(*zi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(zi->data[i], o.data[i]);
      },
      name);
}

template <typename T>
T stable_sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
BasicTensor<T> activation(const Activation& act, const BasicTensor<T>& z) {
  switch (act.kind) {
    case ActivationKind::relu:
      return pointwise(
          z, [](T v) { return v > T(0) ? v : T(0); },
          [](T v, T) { return v > T(0) ? T(1) : T(0); }, "relu");
    case ActivationKind::leaky_relu: {
      const T a = static_cast<T>(act.alpha);
      return pointwise(
          z, [a](T v) { return v > T(0) ? v : a * v; },
          [a](T v, T) { return v > T(0) ? T(1) : a; }, "leaky_relu");
    }
    case ActivationKind::sigmoid:
      return pointwise(
          z, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); },
          "sigmoid");
    case ActivationKind::tanh:
      return pointwise(
          z, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; }, "tanh");
    case ActivationKind::gelu:
      // exact form: z * Phi(z)
      return pointwise(
          z,
          [](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); },
          [](T v, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
            const T pdf = std::exp(T(-0.5) * v * v) * std::numbers::inv_sqrtpi_v<T> /
                          std::numbers::sqrt2_v<T>;
            return cdf + v * pdf;
          },
          "gelu");
    case ActivationKind::hard_swish:
      return pointwise(
          z,
          [](T v) { return v * std::clamp(v + T(3), T(0), T(6)) / T(6); },
          [](T v, T) {
            if (v <= T(-3)) return T(0);
            if (v >= T(3)) return T(1);
            return (T(2) * v + T(3)) / T(6);
          },
          "hard_swish");
  }
  throw Error("activation: unknown kind");
}

template <typename T>
BasicTensor<T> probability(const BasicTensor<T>& logits, double margin) {
  const T lo = static_cast<T>(margin), hi = T(1) - static_cast<T>(margin);
  return pointwise(
      logits, [lo, hi](T v) { return std::clamp(stable_sigmoid(v), lo, hi); },
      [](T, T y) { return y * (T(1) - y); }, "probability");
}

// --- normalization -------------------------------------------------------------------

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& input, const LayerNormParams<T>& p) {
  if (input.rank() < 1) throw ShapeError("layer_norm: empty shape");
  const std::size_t c = input.shape().back();
  if (p.gain.numel() != c || p.offset.numel() != c)
    throw ShapeError("layer_norm: parameters do not match last axis " + std::to_string(c));
  if (!(p.epsilon > 0.0)) throw DomainError("layer_norm: epsilon must be positive");
  const std::size_t rows = input.numel() / c;
  auto xhat = std::make_shared<std::vector<T>>(input.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(input.numel());
  const auto& x = input.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * c;
    T mu = 0;
    for (std::size_t i = 0; i < c; ++i) mu += row[i];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::size_t i = 0; i < c; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(p.epsilon));
    (*rstd)[r] = rs;
    for (std::size_t i = 0; i < c; ++i) {
      const T h = (row[i] - mu) * rs;
      (*xhat)[r * c + i] = h;
      out[r * c + i] = p.gain.data()[i] * h + p.offset.data()[i];
    }
  }
  auto xi = input.impl(), gi = p.gain.impl(), oi = p.offset.impl();
  return make_result<T>(
      input.shape(), std::move(out), {xi, gi, oi},
      [xi, gi, oi, xhat, rstd, c, rows](Impl<T>& o) {
        if (gi->requires_grad || oi->requires_grad) {
          auto* dg = gi->requires_grad ? grad_of(*gi).data() : nullptr;
          auto* dbeta = oi->requires_grad ? grad_of(*oi).data() : nullptr;
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < c; ++i) {
              if (dg) dg[i] += o.grad[r * c + i] * (*xhat)[r * c + i];
              if (dbeta) dbeta[i] += o.grad[r * c + i];
            }
        }
        if (!xi->requires_grad) return;
        auto& dx = grad_of(*xi);
        std::vector<T> dh(c);
        for (std::size_t r = 0; r < rows; ++r) {
          T sum_dh = 0, sum_dh_h = 0;
          for (std::size_t i = 0; i < c; ++i) {
            dh[i] = o.grad[r * c + i] * gi->data[i];
            sum_dh += dh[i];
            sum_dh_h += dh[i] * (*xhat)[r * c + i];
          }
          const T scale = (*rstd)[r] / static_cast<T>(c);
          for (std::size_t i = 0; i < c; ++i)
            dx[r * c + i] += scale * (static_cast<T>(c) * dh[i] - sum_dh -
                                      (*xhat)[r * c + i] * sum_dh_h);
        }
      },
      "layer_norm");
}

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& input, const BatchNormParams<T>& p,
                          bool training) {
  if (input.rank() != 4) throw ShapeError("batch_norm: input must be [B,C,H,W]");
  const std::size_t b = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (p.gamma.numel() != c || p.beta.numel() != c || p.running_mean.numel() != c ||
      p.running_var.numel() != c)
    throw ShapeError("batch_norm: parameters do not match channel count");
  const std::size_t count = b * hw;
  const auto& x = input.values();
  std::vector<T> mu(c, T(0)), rstd(c);
  if (training) {
    if (count == 0) throw ShapeError("batch_norm: empty batch");
    std::vector<T> var(c, T(0));
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) mu[ch] += x[(n * c + ch) * hw + i];
    for (auto& m : mu) m /= static_cast<T>(count);
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) {
          const T d = x[(n * c + ch) * hw + i] - mu[ch];
          var[ch] += d * d;
        }
    auto rm = BasicTensor<T>(p.running_mean.impl()).mutable_data();
    auto rv = BasicTensor<T>(p.running_var.impl()).mutable_data();
    const T mom = static_cast<T>(p.momentum);
    for (std::size_t ch = 0; ch < c; ++ch) {
      var[ch] /= static_cast<T>(count);
      rstd[ch] = T(1) / std::sqrt(var[ch] + static_cast<T>(p.epsilon));
      rm[ch] = mom * rm[ch] + (T(1) - mom) * mu[ch];
      rv[ch] = mom * rv[ch] + (T(1) - mom) * var[ch];
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = p.running_mean.data()[ch];
      rstd[ch] = T(1) / std::sqrt(p.running_var.data()[ch] + static_cast<T>(p.epsilon));
    }
  }
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> out(x.size());
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (n * c + ch) * hw + i;
        (*xhat)[idx] = (x[idx] - mu[ch]) * rstd[ch];
        out[idx] = p.gamma.data()[ch] * (*xhat)[idx] + p.beta.data()[ch];
      }
  auto xi = input.impl(), gi = p.gamma.impl(), bi = p.beta.impl();
  return make_result<T>(
      input.shape(), std::move(out), {xi, gi, bi},
      [xi, gi, bi, xhat, rstd, b, c, hw, count, training](Impl<T>& o) {
        std::vector<T> sum_dy(c, T(0)), sum_dy_h(c, T(0));
        for (std::size_t n = 0; n < b; ++n)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t idx = (n * c + ch) * hw + i;
              sum_dy[ch] += o.grad[idx];
              sum_dy_h[ch] += o.grad[idx] * (*xhat)[idx];
            }
        if (gi->requires_grad) {
          auto& g = grad_of(*gi);
          for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_dy_h[ch];
        }
        if (bi->requires_grad) {
          auto& g = grad_of(*bi);
          for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_dy[ch];
        }
        if (!xi->requires_grad) return;
        auto& dx = grad_of(*xi);
        const T n_total = static_cast<T>(count);
        for (std::size_t n = 0; n < b; ++n)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T gam = gi->data[ch];
            for (std::size_t i = 0; i < hw; ++i) {
              const std::size_t idx = (n * c + ch) * hw + i;
              if (training)
                dx[idx] += gam * rstd[ch] / n_total *
                           (n_total * o.grad[idx] - sum_dy[ch] - (*xhat)[idx] * sum_dy_h[ch]);
              else
                dx[idx] += gam * rstd[ch] * o.grad[idx];
            }
          }
      },
      "batch_norm");
}

// --- transformer pieces -----------------------------------------------------------

template <typename T>
AttentionOutput<T> msa_with_weights(const BasicTensor<T>& tokens, const AttentionParams<T>& p) {
  p.validate();
  if (tokens.rank() != 3 || tokens.dim(2) != p.embed_dim())
    throw ShapeError("msa: tokens " + to_string(tokens.shape()) + " do not match embedding dim " +
                     std::to_string(p.embed_dim()));
  const std::size_t b = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);
  const std::size_t h = p.heads, d = c / h;
  auto split_heads = [&](const BasicTensor<T>& x) {
    return reshape(permute(reshape(x, {b, n, h, d}), {0, 2, 1, 3}), {b * h, n, d});
  };
  auto q = split_heads(dense(tokens, p.query));
  auto k = split_heads(dense(tokens, p.key));
  auto v = split_heads(dense(tokens, p.value));
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  auto weights = softmax(mul_scalar(bmm(q, k, true), scale), 2);
  auto context = reshape(permute(reshape(bmm(weights, v), {b, h, n, d}), {0, 2, 1, 3}), {b, n, c});
  return {dense(context, p.output), weights};
}

template <typename T>
BasicTensor<T> ffn(const BasicTensor<T>& tokens, const FfnParams<T>& p) {
  if (tokens.rank() < 1 || tokens.shape().back() != p.expand.in_features() ||
      p.project.out_features() != p.expand.in_features() ||
      p.project.in_features() != p.expand.out_features())
    throw ShapeError("ffn: dimension mismatch for tokens " + to_string(tokens.shape()));
  return dense(activation<T>({ActivationKind::gelu}, dense(tokens, p.expand)), p.project);
}

template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& images, std::size_t patch) {
  if (images.rank() != 4) throw ShapeError("patchify: images must be [B,C,H,W]");
  const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (patch == 0 || h % patch != 0 || w % patch != 0)
    throw ShapeError("patchify: " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by patch " + std::to_string(patch));
  const std::size_t gh = h / patch, gw = w / patch;
  auto grid = reshape(images, {b, c, gh, patch, gw, patch});
  return reshape(permute(grid, {0, 2, 4, 1, 3, 5}), {b, gh * gw, c * patch * patch});
}

template <typename T>
BasicTensor<T> prepend_token(const BasicTensor<T>& token, const BasicTensor<T>& tokens) {
  if (tokens.rank() != 3) throw ShapeError("prepend_token: tokens must be [B,N,C]");
  const std::size_t b = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);
  if (token.numel() != c) throw ShapeError("prepend_token: token width mismatch");
  std::vector<T> out(b * (n + 1) * c);
  for (std::size_t s = 0; s < b; ++s) {
    std::copy_n(token.data().begin(), c, out.begin() + static_cast<std::ptrdiff_t>(s * (n + 1) * c));
    std::copy_n(tokens.data().begin() + static_cast<std::ptrdiff_t>(s * n * c), n * c,
                out.begin() + static_cast<std::ptrdiff_t>((s * (n + 1) + 1) * c));
  }
  auto ti = token.impl(), xi = tokens.impl();
  return make_result<T>(
      {b, n + 1, c}, std::move(out), {ti, xi},
      [ti, xi, b, n, c](Impl<T>& o) {
        for (std::size_t s = 0; s < b; ++s) {
          const T* g = o.grad.data() + s * (n + 1) * c;
          if (ti->requires_grad) {
            auto& gt = grad_of(*ti);
            for (std::size_t i = 0; i < c; ++i) gt[i] += g[i];
          }
          if (xi->requires_grad) {
            auto& gx = grad_of(*xi);
            for (std::size_t i = 0; i < n * c; ++i) gx[s * n * c + i] += g[c + i];
          }
        }
      },
      "prepend_token");
}

template <typename T>
BasicTensor<T> select_token(const BasicTensor<T>& tokens, std::size_t index) {
  if (tokens.rank() != 3 || index >= tokens.dim(1))
    throw ShapeError("select_token: index out of range for " + to_string(tokens.shape()));
  const std::size_t b = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);
  std::vector<T> out(b * c);
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < c; ++i) out[s * c + i] = tokens.data()[(s * n + index) * c + i];
  auto xi = tokens.impl();
  return make_result<T>(
      {b, c}, std::move(out), {xi},
      [xi, b, n, c, index](Impl<T>& o) {
        auto& g = grad_of(*xi);
        for (std::size_t s = 0; s < b; ++s)
          for (std::size_t i = 0; i < c; ++i) g[(s * n + index) * c + i] += o.grad[s * c + i];
      },
      "select_token");
}

template <typename T>
BasicTensor<T> scale_channels(const BasicTensor<T>& x, const BasicTensor<T>& gate) {
  if (x.rank() != 4 || gate.rank() != 2 || gate.dim(0) != x.dim(0) || gate.dim(1) != x.dim(1))
    throw ShapeError("scale_channels: gate " + to_string(gate.shape()) + " does not match " +
                     to_string(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  std::vector<T> out(x.numel());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = x.data()[p * hw + i] * gate.data()[p];
  auto xi = x.impl(), gi = gate.impl();
  return make_result<T>(
      x.shape(), std::move(out), {xi, gi},
      [xi, gi, planes, hw](Impl<T>& o) {
        for (std::size_t p = 0; p < planes; ++p) {
          T acc = 0;
          for (std::size_t i = 0; i < hw; ++i) {
            if (xi->requires_grad) grad_of(*xi)[p * hw + i] += o.grad[p * hw + i] * gi->data[p];
            acc += o.grad[p * hw + i] * xi->data[p * hw + i];
          }
          if (gi->requires_grad) grad_of(*gi)[p] += acc;
        }
      },
      "scale_channels");
}

#define DFD_INSTANTIATE_LAYERS(T)                                                                  \
  template struct Conv2dParams<T>;                                                                 \
  template struct AttentionParams<T>;                                                              \
  template Conv2dParams<T> make_conv2d<T>(std::size_t, std::size_t, std::size_t, std::size_t,      \
                                          Padding, bool, Rng&, Init);                              \
  template Conv2dParams<T> make_depthwise<T>(std::size_t, std::size_t, std::size_t, bool, Rng&);   \
  template DenseParams<T> make_dense<T>(std::size_t, std::size_t, Rng&, Init);                     \
  template LayerNormParams<T> make_layer_norm<T>(std::size_t);                                     \
  template BatchNormParams<T> make_batch_norm<T>(std::size_t);                                     \
  template AttentionParams<T> make_attention<T>(std::size_t, std::size_t, Rng&);                   \
  template FfnParams<T> make_ffn<T>(std::size_t, std::size_t, Rng&);                               \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const Conv2dParams<T>&);                   \
  template BasicTensor<T> maxpool2d(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t); \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                  \
  template BasicTensor<T> dense(const BasicTensor<T>&, const DenseParams<T>&);                     \
  template BasicTensor<T> flatten(const BasicTensor<T>&);                                          \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, bool, std::uint64_t);             \
  template BasicTensor<T> activation(const Activation&, const BasicTensor<T>&);                    \
  template BasicTensor<T> probability(const BasicTensor<T>&, double);                              \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const LayerNormParams<T>&);            \
  template BasicTensor<T> batch_norm(const BasicTensor<T>&, const BatchNormParams<T>&, bool);      \
  template AttentionOutput<T> msa_with_weights(const BasicTensor<T>&, const AttentionParams<T>&);  \
  template BasicTensor<T> ffn(const BasicTensor<T>&, const FfnParams<T>&);                         \
  template BasicTensor<T> patchify(const BasicTensor<T>&, std::size_t);                            \
  template BasicTensor<T> prepend_token(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> select_token(const BasicTensor<T>&, std::size_t);                        \
  template BasicTensor<T> scale_channels(const BasicTensor<T>&, const BasicTensor<T>&);

DFD_INSTANTIATE_LAYERS(float)
DFD_INSTANTIATE_LAYERS(double)

}  // namespace dfd
