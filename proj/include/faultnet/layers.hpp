#pragma once

#include <vector>

#include "faultnet/tensor.hpp"

namespace faultnet {

enum class ActivationKind { StandardRelu, Relu6 };
enum class BnMode { Train, Eval };

struct ConvLayer {
  Tensor weight;             // (out_channels, in_channels, kh, kw)
  std::vector<float> bias;   // per out channel; empty when the layer has none
  int stride = 1;
  int padding = 0;

  int out_channels() const { return weight.n; }
  int in_channels() const { return weight.c; }
  int kernel_h() const { return weight.h; }
  int kernel_w() const { return weight.w; }
  bool has_bias() const { return !bias.empty(); }
  /// Length of one output element's accumulation sequence.
  int mac_steps() const { return in_channels() * kernel_h() * kernel_w(); }
};

struct ConvOutShape { int h = 0, w = 0; };

/// floor((extent + 2*padding - kernel) / stride) + 1 for both spatial dims.
/// Throws when either output extent would be < 1.
ConvOutShape conv_output_shape(int h, int w, const ConvLayer& layer);

/// Direct convolution over the zero-padded input. Every output element
/// accumulates its kernel products in a fixed order (in-channel major, then
/// kernel row, then kernel column, padding terms included) with the bias, if
/// any, added after the last product.
Tensor conv2d_forward(const Tensor& input, const ConvLayer& layer);

struct ConvGrads {
  Tensor input;
  Tensor weight;
  std::vector<float> bias;
};
ConvGrads conv2d_backward(const Tensor& input, const ConvLayer& layer, const Tensor& grad_out);

struct BatchNormLayer {
  std::vector<float> gamma, beta;
  std::vector<float> running_mean, running_var;
  float epsilon = 1e-5f;
  float momentum = 0.1f;

  BatchNormLayer() = default;
  explicit BatchNormLayer(int channels)
      : gamma(channels, 1.0f),
        beta(channels, 0.0f),
        running_mean(channels, 0.0f),
        running_var(channels, 1.0f) {}

  int channels() const { return static_cast<int>(gamma.size()); }
};

/// Batch statistics captured by a Train-mode forward, needed by backward.
struct BnCache {
  std::vector<float> mean, invstd;
};

/// Train: per-channel batch mean and population variance over N*H*W, output
/// (x-mean)*invstd*gamma + beta, running stats updated with rate `momentum`.
/// Eval: fixed affine map from the running statistics.
Tensor batchnorm_forward(const Tensor& input, BatchNormLayer& layer, BnMode mode,
                         BnCache* cache = nullptr);

struct BnGrads {
  Tensor input;
  std::vector<float> gamma, beta;
};
/// Train-mode backward; gradients flow through the batch mean and variance.
BnGrads batchnorm_backward(const Tensor& input, const BatchNormLayer& layer, const BnCache& cache,
                           const Tensor& grad_out);

/// StandardRelu: max(0,x). Relu6: min(max(0,x),6). NaN maps to 0 under both.
Tensor activation_forward(const Tensor& input, ActivationKind kind);
Tensor activation_backward(const Tensor& input, ActivationKind kind, const Tensor& grad_out);

inline float apply_activation(float v, ActivationKind kind) {
  if (kind == ActivationKind::Relu6 && v > 6.0f) return 6.0f;
  if (v > 0.0f) return v;
  return 0.0f;  // negatives and NaN
}

struct LinearLayer {
  int in_features = 0, out_features = 0;
  std::vector<float> weight;  // row-major (out_features, in_features)
  std::vector<float> bias;    // per out feature

  float& w(int out, int in) { return weight[static_cast<std::size_t>(out) * in_features + in]; }
  float w(int out, int in) const { return weight[static_cast<std::size_t>(out) * in_features + in]; }
};

/// Input (N,C,H,W) is read as (N, C*H*W); output is (N, out_features, 1, 1).
Tensor linear_forward(const Tensor& input, const LinearLayer& layer);

struct LinearGrads {
  Tensor input;
  std::vector<float> weight, bias;
};
LinearGrads linear_backward(const Tensor& input, const LinearLayer& layer, const Tensor& grad_out);

/// Per-channel mean over H*W in fixed row-major summation order; (N,C,1,1).
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(int h, int w, const Tensor& grad_out);

}  // namespace faultnet
