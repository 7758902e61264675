#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

#include "dfd/tensor.hpp"

namespace dfd {

enum class Padding { valid, same };

/// Convolution weights. `kernels` is [out, in, kh, kw], or [channels, 1, kh,
/// kw] for a depthwise convolution. Same-padding pads (k - 1) / 2 on each side
/// and needs odd kernel extents.
template <typename T>
struct Conv2dParams {
  BasicTensor<T> kernels;
  std::optional<BasicTensor<T>> bias;
  std::size_t stride = 1;
  Padding padding = Padding::valid;
  bool depthwise = false;

  std::size_t out_channels() const { return kernels.dim(0); }
  std::size_t in_channels() const { return depthwise ? kernels.dim(0) : kernels.dim(1); }
  void validate() const;
};

template <typename T>
struct DenseParams {
  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;    // [out]

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

template <typename T>
struct LayerNormParams {
  BasicTensor<T> gain;
  BasicTensor<T> offset;
  double epsilon = 1e-5;
};

/// Running statistics are plain tensors updated in place by training-mode
/// forwards: running = momentum * running + (1 - momentum) * batch.
template <typename T>
struct BatchNormParams {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;
};

/// Heads occupy contiguous column blocks of the query/key/value projections.
template <typename T>
struct AttentionParams {
  DenseParams<T> query;
  DenseParams<T> key;
  DenseParams<T> value;
  DenseParams<T> output;
  std::size_t heads = 1;

  std::size_t embed_dim() const { return query.in_features(); }
  void validate() const;
};

/// dense(C -> r*C) -> GELU -> dense(r*C -> C)
template <typename T>
struct FfnParams {
  DenseParams<T> expand;
  DenseParams<T> project;
};

enum class ActivationKind { relu, leaky_relu, sigmoid, tanh, gelu, hard_swish };

struct Activation {
  ActivationKind kind = ActivationKind::relu;
  double alpha = 0.01;  // leaky_relu slope for z <= 0
};

// --- parameter factories -------------------------------------------------

enum class Init {
  he_uniform,      // U(+-sqrt(6 / fan_in))
  xavier_uniform,  // U(+-sqrt(6 / (fan_in + fan_out)))
};

template <typename T>
Conv2dParams<T> make_conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                            Padding padding, bool with_bias, Rng& rng, Init init = Init::he_uniform);
template <typename T>
Conv2dParams<T> make_depthwise(std::size_t channels, std::size_t kernel, std::size_t stride,
                               bool with_bias, Rng& rng);
template <typename T>
DenseParams<T> make_dense(std::size_t in, std::size_t out, Rng& rng,
                          Init init = Init::he_uniform);
template <typename T>
LayerNormParams<T> make_layer_norm(std::size_t channels);
template <typename T>
BatchNormParams<T> make_batch_norm(std::size_t channels);
template <typename T>
AttentionParams<T> make_attention(std::size_t embed_dim, std::size_t heads, Rng& rng);
template <typename T>
FfnParams<T> make_ffn(std::size_t embed_dim, std::size_t expansion, Rng& rng);

// --- layers ------------------------------------------------------------------

/// Cross-correlation over [B, Cin, H, W]; output extent
/// floor((H + 2 * pad - kh) / stride) + 1.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const Conv2dParams<T>& p);

/// Max over window x window cells; positions outside the (optionally padded)
/// input never win. The gradient goes to the first row-major maximum.
template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, std::size_t window, std::size_t stride,
                         std::size_t padding = 0);

/// [B, C, H, W] -> [B, C]
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input);

/// input [..., N1] -> [..., N2]: input * W + b.
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const DenseParams<T>& p);

/// [B, ...] -> [B, prod(...)] in row-major order.
template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& input);

/// Inverted dropout. Inference mode and rate 0 return the input unchanged.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& input, double rate, bool training,
                       std::uint64_t seed);

template <typename T>
BasicTensor<T> activation(const Activation& act, const BasicTensor<T>& z);
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& z) {
  return activation<T>({ActivationKind::relu}, z);
}
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& z) {
  return activation<T>({ActivationKind::sigmoid}, z);
}

/// Sigmoid whose output is clamped to [margin, 1 - margin] so a classifier
/// never reports exactly 0 or 1. The backward rule uses p * (1 - p) of the
/// clamped value, so saturated samples still receive gradient.
template <typename T>
BasicTensor<T> probability(const BasicTensor<T>& logits, double margin = 1e-7);

/// Normalizes the last axis, then gain * x + offset.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& input, const LayerNormParams<T>& p);

/// Per-channel normalization of [B, C, H, W]. Training mode uses batch
/// statistics (biased variance) and updates the running buffers.
template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& input, const BatchNormParams<T>& p,
                          bool training);

template <typename T>
struct AttentionOutput {
  BasicTensor<T> output;   // [B, N, C]
  BasicTensor<T> weights;  // [B * heads, N, N], rows sum to 1
};

/// Multi-head scaled dot-product self-attention over [B, N, C].
template <typename T>
AttentionOutput<T> msa_with_weights(const BasicTensor<T>& tokens, const AttentionParams<T>& p);
template <typename T>
BasicTensor<T> msa(const BasicTensor<T>& tokens, const AttentionParams<T>& p) {
  return msa_with_weights(tokens, p).output;
}

template <typename T>
BasicTensor<T> ffn(const BasicTensor<T>& tokens, const FfnParams<T>& p);

/// [B, C, H, W] -> [B, (H/P)(W/P), C*P*P]; patches in row-major grid order,
/// each flattened as (channel, row, column).
template <typename T>
BasicTensor<T> patchify(const BasicTensor<T>& images, std::size_t patch);

/// token [1, C] placed before every sequence of [B, N, C] -> [B, N+1, C].
template <typename T>
BasicTensor<T> prepend_token(const BasicTensor<T>& token, const BasicTensor<T>& tokens);

/// [B, N, C] -> [B, C] at sequence position `index`.
template <typename T>
BasicTensor<T> select_token(const BasicTensor<T>& tokens, std::size_t index);

/// x [B, C, H, W] scaled per (b, c) by gate [B, C].
template <typename T>
BasicTensor<T> scale_channels(const BasicTensor<T>& x, const BasicTensor<T>& gate);

}  // namespace dfd
