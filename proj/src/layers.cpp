#include "faultnet/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace faultnet {

ConvOutShape conv_output_shape(int h, int w, const ConvLayer& layer) {
  if (layer.kernel_h() < 1 || layer.kernel_w() < 1) {
    throw std::invalid_argument("conv kernel extents must be >= 1");
  }
  if (layer.stride < 1) throw std::invalid_argument("conv stride must be >= 1");
  if (layer.padding < 0) throw std::invalid_argument("conv padding must be >= 0");
  ConvOutShape out;
  out.h = (h + 2 * layer.padding - layer.kernel_h()) / layer.stride + 1;
  out.w = (w + 2 * layer.padding - layer.kernel_w()) / layer.stride + 1;
  if (out.h < 1 || out.w < 1) {
    throw std::invalid_argument("conv output extent below 1 for input " + std::to_string(h) + "x" +
                                std::to_string(w) + " kernel " + std::to_string(layer.kernel_h()) +
                                "x" + std::to_string(layer.kernel_w()) + " stride " +
                                std::to_string(layer.stride) + " padding " +
                                std::to_string(layer.padding));
  }
  return out;
}

static void check_conv_input(const Tensor& input, const ConvLayer& layer) {
  if (input.c != layer.in_channels()) {
    throw std::invalid_argument("conv input channel mismatch: input " + input.shape_str() +
                                " vs weight " + layer.weight.shape_str());
  }
  if (layer.has_bias() && static_cast<int>(layer.bias.size()) != layer.out_channels()) {
    throw std::invalid_argument("conv bias length does not match out channels");
  }
}

Tensor conv2d_forward(const Tensor& input, const ConvLayer& layer) {
  check_conv_input(input, layer);
  const ConvOutShape os = conv_output_shape(input.h, input.w, layer);
  const int kh = layer.kernel_h(), kw = layer.kernel_w(), stride = layer.stride;
  const Tensor padded = zero_pad(input, layer.padding);
  Tensor out(input.n, layer.out_channels(), os.h, os.w);

  for (int in = 0; in < input.n; ++in) {
    for (int co = 0; co < layer.out_channels(); ++co) {
      // Weight-stationary loops keep each output element's accumulation in
      // (ci, ky, kx) order while the inner wo loop stays vectorizable.
      for (int ci = 0; ci < input.c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const float wv = layer.weight.at(co, ci, ky, kx);
            for (int ho = 0; ho < os.h; ++ho) {
              const float* xrow = padded.row(in, ci, ho * stride + ky) + kx;
              float* orow = out.row(in, co, ho);
              if (stride == 1) {
                for (int wo = 0; wo < os.w; ++wo) orow[wo] += wv * xrow[wo];
              } else {
                for (int wo = 0; wo < os.w; ++wo) orow[wo] += wv * xrow[wo * stride];
              }
            }
          }
        }
      }
      if (layer.has_bias()) {
        const float b = layer.bias[co];
        float* plane = out.plane(in, co);
        const int area = os.h * os.w;
        for (int i = 0; i < area; ++i) plane[i] += b;
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvLayer& layer, const Tensor& grad_out) {
  check_conv_input(input, layer);
  const ConvOutShape os = conv_output_shape(input.h, input.w, layer);
  if (grad_out.n != input.n || grad_out.c != layer.out_channels() || grad_out.h != os.h ||
      grad_out.w != os.w) {
    throw std::invalid_argument("conv grad_out shape mismatch: " + grad_out.shape_str());
  }
  const int kh = layer.kernel_h(), kw = layer.kernel_w(), stride = layer.stride;
  const int pad = layer.padding;
  const Tensor padded = zero_pad(input, pad);

  ConvGrads grads;
  grads.weight = Tensor(layer.weight.n, layer.weight.c, layer.weight.h, layer.weight.w);
  if (layer.has_bias()) grads.bias.assign(layer.bias.size(), 0.0f);
  Tensor dpadded(padded.n, padded.c, padded.h, padded.w);

  const int cols = layer.mac_steps();  // one im2col row per output position
  std::vector<float> colrows(static_cast<std::size_t>(os.h) * os.w * cols);

  for (int in = 0; in < input.n; ++in) {
    // dInput: transposed form of the forward loops, scatter into the padded grid.
    for (int co = 0; co < layer.out_channels(); ++co) {
      for (int ci = 0; ci < input.c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const float wv = layer.weight.at(co, ci, ky, kx);
            for (int ho = 0; ho < os.h; ++ho) {
              const float* grow = grad_out.row(in, co, ho);
              float* xrow = dpadded.row(in, ci, ho * stride + ky) + kx;
              if (stride == 1) {
                for (int wo = 0; wo < os.w; ++wo) xrow[wo] += wv * grow[wo];
              } else {
                for (int wo = 0; wo < os.w; ++wo) xrow[wo * stride] += wv * grow[wo];
              }
            }
          }
        }
      }
    }

    // dWeight: gather receptive-field rows once, then accumulate whole weight
    // rows per output position so the inner loop runs over contiguous memory.
    float* cr = colrows.data();
    for (int ho = 0; ho < os.h; ++ho) {
      for (int wo = 0; wo < os.w; ++wo) {
        for (int ci = 0; ci < input.c; ++ci) {
          for (int ky = 0; ky < kh; ++ky) {
            const float* xrow = padded.row(in, ci, ho * stride + ky) + wo * stride;
            for (int kx = 0; kx < kw; ++kx) *cr++ = xrow[kx];
          }
        }
      }
    }
    for (int co = 0; co < layer.out_channels(); ++co) {
      float* wgrad = grads.weight.plane(co, 0);
      const float* gplane = grad_out.plane(in, co);
      const int positions = os.h * os.w;
      for (int p = 0; p < positions; ++p) {
        const float g = gplane[p];
        if (g == 0.0f) continue;
        const float* xr = colrows.data() + static_cast<std::size_t>(p) * cols;
        for (int j = 0; j < cols; ++j) wgrad[j] += g * xr[j];
      }
      if (layer.has_bias()) {
        float acc = 0.0f;
        for (int p = 0; p < positions; ++p) acc += gplane[p];
        grads.bias[co] += acc;
      }
    }
  }

  // Crop the padding border back off.
  if (pad == 0) {
    grads.input = std::move(dpadded);
  } else {
    grads.input = Tensor(input.n, input.c, input.h, input.w);
    for (int in = 0; in < input.n; ++in) {
      for (int ci = 0; ci < input.c; ++ci) {
        for (int iy = 0; iy < input.h; ++iy) {
          const float* src = dpadded.row(in, ci, iy + pad) + pad;
          float* dst = grads.input.row(in, ci, iy);
          for (int ix = 0; ix < input.w; ++ix) dst[ix] = src[ix];
        }
      }
    }
  }
  return grads;
}

static void check_bn_input(const Tensor& input, const BatchNormLayer& layer) {
  if (input.c != layer.channels()) {
    throw std::invalid_argument("batchnorm channel mismatch: input " + input.shape_str() + " vs " +
                                std::to_string(layer.channels()) + " channels");
  }
  if (!(layer.epsilon > 0.0f)) throw std::invalid_argument("batchnorm epsilon must be > 0");
}

Tensor batchnorm_forward(const Tensor& input, BatchNormLayer& layer, BnMode mode, BnCache* cache) {
  check_bn_input(input, layer);
  const int channels = input.c;
  const std::size_t per_channel = static_cast<std::size_t>(input.n) * input.h * input.w;
  std::vector<float> mean(channels), invstd(channels);

  if (mode == BnMode::Train) {
    const double inv_count = per_channel > 0 ? 1.0 / static_cast<double>(per_channel) : 0.0;
    for (int ic = 0; ic < channels; ++ic) {
      double sum = 0.0;
      for (int in = 0; in < input.n; ++in) {
        const float* plane = input.plane(in, ic);
        const int area = input.h * input.w;
        for (int i = 0; i < area; ++i) sum += plane[i];
      }
      const double mu = sum * inv_count;
      double sq = 0.0;
      for (int in = 0; in < input.n; ++in) {
        const float* plane = input.plane(in, ic);
        const int area = input.h * input.w;
        for (int i = 0; i < area; ++i) {
          const double d = plane[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq * inv_count;  // population variance
      mean[ic] = static_cast<float>(mu);
      invstd[ic] = static_cast<float>(1.0 / std::sqrt(var + layer.epsilon));
      layer.running_mean[ic] = (1.0f - layer.momentum) * layer.running_mean[ic] +
                               layer.momentum * static_cast<float>(mu);
      layer.running_var[ic] = (1.0f - layer.momentum) * layer.running_var[ic] +
                              layer.momentum * static_cast<float>(var);
    }
  } else {
    for (int ic = 0; ic < channels; ++ic) {
      mean[ic] = layer.running_mean[ic];
      invstd[ic] = static_cast<float>(
          1.0 / std::sqrt(static_cast<double>(layer.running_var[ic]) + layer.epsilon));
    }
  }

  Tensor out(input.n, input.c, input.h, input.w);
  for (int in = 0; in < input.n; ++in) {
    for (int ic = 0; ic < channels; ++ic) {
      const float mu = mean[ic], is = invstd[ic];
      const float g = layer.gamma[ic], b = layer.beta[ic];
      const float* src = input.plane(in, ic);
      float* dst = out.plane(in, ic);
      const int area = input.h * input.w;
      for (int i = 0; i < area; ++i) dst[i] = (src[i] - mu) * is * g + b;
    }
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->invstd = std::move(invstd);
  }
  return out;
}

BnGrads batchnorm_backward(const Tensor& input, const BatchNormLayer& layer, const BnCache& cache,
                           const Tensor& grad_out) {
  check_bn_input(input, layer);
  if (!grad_out.same_shape(input)) {
    throw std::invalid_argument("batchnorm grad_out shape mismatch");
  }
  const int channels = input.c;
  const double count = static_cast<double>(input.n) * input.h * input.w;

  BnGrads grads;
  grads.gamma.assign(channels, 0.0f);
  grads.beta.assign(channels, 0.0f);
  grads.input = Tensor(input.n, input.c, input.h, input.w);

  for (int ic = 0; ic < channels; ++ic) {
    const double mu = cache.mean[ic];
    const double is = cache.invstd[ic];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int in = 0; in < input.n; ++in) {
      const float* x = input.plane(in, ic);
      const float* dy = grad_out.plane(in, ic);
      const int area = input.h * input.w;
      for (int i = 0; i < area; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * ((x[i] - mu) * is);
      }
    }
    grads.beta[ic] = static_cast<float>(sum_dy);
    grads.gamma[ic] = static_cast<float>(sum_dy_xhat);

    // dx = gamma*invstd/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
    const double scale = static_cast<double>(layer.gamma[ic]) * is / count;
    for (int in = 0; in < input.n; ++in) {
      const float* x = input.plane(in, ic);
      const float* dy = grad_out.plane(in, ic);
      float* dx = grads.input.plane(in, ic);
      const int area = input.h * input.w;
      for (int i = 0; i < area; ++i) {
        const double xhat = (x[i] - mu) * is;
        dx[i] = static_cast<float>(scale * (count * dy[i] - sum_dy - xhat * sum_dy_xhat));
      }
    }
  }
  return grads;
}

Tensor activation_forward(const Tensor& input, ActivationKind kind) {
  Tensor out(input.n, input.c, input.h, input.w);
  const float* src = input.data.data();
  float* dst = out.data.data();
  const std::size_t count = input.size();
  if (kind == ActivationKind::Relu6) {
    for (std::size_t i = 0; i < count; ++i) {
      const float v = src[i];
      dst[i] = v > 6.0f ? 6.0f : (v > 0.0f ? v : 0.0f);
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const float v = src[i];
      dst[i] = v > 0.0f ? v : 0.0f;
    }
  }
  return out;
}

Tensor activation_backward(const Tensor& input, ActivationKind kind, const Tensor& grad_out) {
  if (!grad_out.same_shape(input)) {
    throw std::invalid_argument("activation grad_out shape mismatch");
  }
  Tensor out(input.n, input.c, input.h, input.w);
  const float* x = input.data.data();
  const float* dy = grad_out.data.data();
  float* dx = out.data.data();
  const std::size_t count = input.size();
  if (kind == ActivationKind::Relu6) {
    for (std::size_t i = 0; i < count; ++i) dx[i] = (x[i] > 0.0f && x[i] < 6.0f) ? dy[i] : 0.0f;
  } else {
    for (std::size_t i = 0; i < count; ++i) dx[i] = x[i] > 0.0f ? dy[i] : 0.0f;
  }
  return out;
}

Tensor linear_forward(const Tensor& input, const LinearLayer& layer) {
  const int features = input.c * input.h * input.w;
  if (features != layer.in_features) {
    throw std::invalid_argument("linear input features " + std::to_string(features) +
                                " do not match layer in_features " +
                                std::to_string(layer.in_features));
  }
  Tensor out(input.n, layer.out_features, 1, 1);
  for (int in = 0; in < input.n; ++in) {
    const float* x = input.data.data() + static_cast<std::size_t>(in) * features;
    for (int o = 0; o < layer.out_features; ++o) {
      const float* wrow = layer.weight.data() + static_cast<std::size_t>(o) * features;
      float acc = 0.0f;
      for (int f = 0; f < features; ++f) acc += wrow[f] * x[f];
      out.at(in, o, 0, 0) = acc + (layer.bias.empty() ? 0.0f : layer.bias[o]);
    }
  }
  return out;
}

LinearGrads linear_backward(const Tensor& input, const LinearLayer& layer,
                            const Tensor& grad_out) {
  const int features = input.c * input.h * input.w;
  if (features != layer.in_features) throw std::invalid_argument("linear feature mismatch");
  if (grad_out.n != input.n || grad_out.c != layer.out_features) {
    throw std::invalid_argument("linear grad_out shape mismatch");
  }
  LinearGrads grads;
  grads.weight.assign(layer.weight.size(), 0.0f);
  grads.bias.assign(layer.bias.size(), 0.0f);
  grads.input = Tensor(input.n, input.c, input.h, input.w);

  for (int in = 0; in < input.n; ++in) {
    const float* x = input.data.data() + static_cast<std::size_t>(in) * features;
    float* dx = grads.input.data.data() + static_cast<std::size_t>(in) * features;
    for (int o = 0; o < layer.out_features; ++o) {
      const float g = grad_out.at(in, o, 0, 0);
      const float* wrow = layer.weight.data() + static_cast<std::size_t>(o) * features;
      float* dwrow = grads.weight.data() + static_cast<std::size_t>(o) * features;
      for (int f = 0; f < features; ++f) {
        dwrow[f] += g * x[f];
        dx[f] += g * wrow[f];
      }
      if (!grads.bias.empty()) grads.bias[o] += g;
    }
  }
  return grads;
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.h < 1 || input.w < 1) {
    throw std::invalid_argument("global_avg_pool needs spatial extents >= 1");
  }
  Tensor out(input.n, input.c, 1, 1);
  const int area = input.h * input.w;
  for (int in = 0; in < input.n; ++in) {
    for (int ic = 0; ic < input.c; ++ic) {
      const float* plane = input.plane(in, ic);
      float acc = 0.0f;
      for (int i = 0; i < area; ++i) acc += plane[i];
      out.at(in, ic, 0, 0) = acc / static_cast<float>(area);
    }
  }
  return out;
}

Tensor global_avg_pool_backward(int h, int w, const Tensor& grad_out) {
  Tensor out(grad_out.n, grad_out.c, h, w);
  const float inv_area = 1.0f / static_cast<float>(h * w);
  for (int in = 0; in < grad_out.n; ++in) {
    for (int ic = 0; ic < grad_out.c; ++ic) {
      const float g = grad_out.at(in, ic, 0, 0) * inv_area;
      float* plane = out.plane(in, ic);
      const int area = h * w;
      for (int i = 0; i < area; ++i) plane[i] = g;
    }
  }
  return out;
}

}  // namespace faultnet
