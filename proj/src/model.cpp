#include "faultnet/model.hpp"

#include <cmath>
#include <stdexcept>

#include "faultnet/rng.hpp"

namespace faultnet {

void BnInputProbe::observe(const Tensor& t) {
  for (float v : t.data) {
    if (!any) {
      min_seen = max_seen = v;
      any = true;
    } else {
      if (v < min_seen) min_seen = v;
      if (v > max_seen) max_seen = v;
    }
  }
}

namespace {

ConvLayer make_conv(int in_ch, int out_ch, int kernel, int stride, int padding, bool bias) {
  ConvLayer conv;
  conv.weight = Tensor(out_ch, in_ch, kernel, kernel);
  if (bias) conv.bias.assign(out_ch, 0.0f);
  conv.stride = stride;
  conv.padding = padding;
  return conv;
}

void init_kaiming_uniform(Tensor& weight, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (float& v : weight.data) {
    v = static_cast<float>((2.0 * rng.uniform01() - 1.0) * bound);
  }
}

/// Parameter-free shortcut for stage transitions: stride-2 spatial subsample
/// with channels zero-padded evenly on both sides.
Tensor downsample_shortcut(const Tensor& input, int out_channels) {
  const int oh = (input.h + 1) / 2, ow = (input.w + 1) / 2;
  const int pad_lo = (out_channels - input.c) / 2;
  Tensor out(input.n, out_channels, oh, ow);
  for (int in = 0; in < input.n; ++in) {
    for (int ic = 0; ic < input.c; ++ic) {
      for (int iy = 0; iy < oh; ++iy) {
        const float* src = input.row(in, ic, 2 * iy);
        float* dst = out.row(in, ic + pad_lo, iy);
        for (int ix = 0; ix < ow; ++ix) dst[ix] = src[2 * ix];
      }
    }
  }
  return out;
}

Tensor downsample_shortcut_backward(const Tensor& grad_out, int in_channels, int h, int w) {
  const int pad_lo = (grad_out.c - in_channels) / 2;
  Tensor out(grad_out.n, in_channels, h, w);
  for (int in = 0; in < grad_out.n; ++in) {
    for (int ic = 0; ic < in_channels; ++ic) {
      for (int iy = 0; iy < grad_out.h; ++iy) {
        const float* src = grad_out.row(in, ic + pad_lo, iy);
        float* dst = out.row(in, ic, 2 * iy);
        for (int ix = 0; ix < grad_out.w; ++ix) dst[2 * ix] = src[ix];
      }
    }
  }
  return out;
}

}  // namespace

Tensor Network::forward(const Tensor& input, const ForwardHook* hook, ForwardTrace* trace,
                        BnInputProbe* probe) {
  if (input.c != config.input_shape[0] || input.h != config.input_shape[1] ||
      input.w != config.input_shape[2]) {
    throw std::invalid_argument("network input " + input.shape_str() +
                                " does not match configured shape");
  }
  if (hook) {
    if (hook->site < 0 || hook->site >= site_count()) {
      throw std::invalid_argument("hook site " + std::to_string(hook->site) + " out of range");
    }
    if (hook->replace_conv && hook->site >= conv_site_count()) {
      throw std::invalid_argument("replace_conv hook requires a convolution site");
    }
  }
  if (trace) {
    *trace = ForwardTrace{};
    trace->blocks.resize(blocks.size());
  }

  const ActivationKind act = config.activation;
  const bool inverted = config.layer_order == LayerOrder::ConvActNorm;

  // apply_act is false for the second unit of a ConvNormAct block, whose
  // activation runs after the residual add instead.
  auto unit_forward = [&](ConvUnit& unit, const Tensor& x, bool apply_act,
                          UnitTrace* ut) -> Tensor {
    Tensor y = (hook && hook->site == unit.site && hook->replace_conv)
                   ? hook->replace_conv(x, unit.conv)
                   : conv2d_forward(x, unit.conv);
    if (hook && hook->site == unit.site && hook->corrupt_output) hook->corrupt_output(y);
    if (ut) {
      ut->conv_in = x;
      ut->conv_out = y;
    }
    if (inverted) {
      Tensor mid = activation_forward(y, act);
      if (probe) probe->observe(mid);
      Tensor out = batchnorm_forward(mid, unit.bn, mode, ut ? &ut->bn : nullptr);
      if (ut) ut->mid = std::move(mid);
      return out;
    }
    if (probe) probe->observe(y);
    Tensor mid = batchnorm_forward(y, unit.bn, mode, ut ? &ut->bn : nullptr);
    if (!apply_act) {
      if (ut) ut->mid = Tensor();
      return mid;
    }
    Tensor out = activation_forward(mid, act);
    if (ut) ut->mid = std::move(mid);
    return out;
  };

  Tensor a = unit_forward(stem, input, true, trace ? &trace->stem : nullptr);

  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    BasicBlock& block = blocks[bi];
    BlockTrace* bt = trace ? &trace->blocks[bi] : nullptr;
    Tensor shortcut =
        block.downsample ? downsample_shortcut(a, block.out_channels) : a;
    Tensor mid = unit_forward(block.unit1, a, true, bt ? &bt->unit1 : nullptr);
    Tensor main = unit_forward(block.unit2, mid, false, bt ? &bt->unit2 : nullptr);
    add_inplace(main, shortcut);
    if (!inverted) {
      Tensor out = activation_forward(main, act);
      if (bt) bt->sum = std::move(main);
      a = std::move(out);
    } else {
      a = std::move(main);
    }
  }

  Tensor pooled = global_avg_pool(a);
  Tensor logits = linear_forward(pooled, head);
  if (hook && hook->site == site_count() - 1 && hook->corrupt_output) {
    hook->corrupt_output(logits);
  }
  if (trace) {
    trace->features = std::move(a);
    trace->pooled = std::move(pooled);
    trace->valid = true;
  }
  return logits;
}

Gradients Network::backward(const ForwardTrace& trace, const Tensor& logit_grad) {
  if (mode != BnMode::Train) {
    throw std::logic_error("backward requires Train mode");
  }
  if (!trace.valid) throw std::logic_error("backward requires a trace from forward");

  const ActivationKind act = config.activation;
  const bool inverted = config.layer_order == LayerOrder::ConvActNorm;
  Gradients grads = make_gradients();

  auto fill = [&grads](int slot, const std::vector<float>& values) {
    grads.slots[slot] = values;
  };
  auto fill_tensor = [&grads](int slot, const Tensor& t) { grads.slots[slot] = t.data; };

  LinearGrads head_grads = linear_backward(trace.pooled, head, logit_grad);
  fill(head_weight_slot, head_grads.weight);
  fill(head_weight_slot + 1, head_grads.bias);
  Tensor d = global_avg_pool_backward(trace.features.h, trace.features.w, head_grads.input);

  // Returns the gradient at the unit's conv input, filling parameter slots.
  auto unit_backward = [&](ConvUnit& unit, const UnitTrace& ut, bool had_act,
                           const Tensor& grad) -> Tensor {
    Tensor dconv_out;
    if (inverted) {
      BnGrads bn = batchnorm_backward(ut.mid, unit.bn, ut.bn, grad);
      dconv_out = activation_backward(ut.conv_out, act, bn.input);
      const int base = unit.weight_slot + (unit.conv.has_bias() ? 2 : 1);
      fill(base, bn.gamma);
      fill(base + 1, bn.beta);
    } else {
      Tensor dmid = had_act ? activation_backward(ut.mid, act, grad) : grad;
      BnGrads bn = batchnorm_backward(ut.conv_out, unit.bn, ut.bn, dmid);
      dconv_out = std::move(bn.input);
      const int base = unit.weight_slot + (unit.conv.has_bias() ? 2 : 1);
      fill(base, bn.gamma);
      fill(base + 1, bn.beta);
    }
    ConvGrads conv = conv2d_backward(ut.conv_in, unit.conv, dconv_out);
    fill_tensor(unit.weight_slot, conv.weight);
    if (unit.conv.has_bias()) fill(unit.weight_slot + 1, conv.bias);
    return std::move(conv.input);
  };

  for (int bi = static_cast<int>(blocks.size()) - 1; bi >= 0; --bi) {
    BasicBlock& block = blocks[bi];
    const BlockTrace& bt = trace.blocks[bi];

    Tensor dsum = inverted ? d : activation_backward(bt.sum, act, d);
    Tensor dmid = unit_backward(block.unit2, bt.unit2, false, dsum);
    Tensor dprev = unit_backward(block.unit1, bt.unit1, true, dmid);
    if (block.downsample) {
      Tensor dshort = downsample_shortcut_backward(dsum, block.in_channels, dprev.h, dprev.w);
      add_inplace(dprev, dshort);
    } else {
      add_inplace(dprev, dsum);
    }
    d = std::move(dprev);
  }

  unit_backward(stem, trace.stem, true, d);
  return grads;
}

std::vector<ParamRef> Network::param_refs() {
  std::vector<ParamRef> refs;
  auto add_unit = [&refs](ConvUnit& unit) {
    refs.push_back({unit.conv.weight.data.data(), unit.conv.weight.size(), true});
    if (unit.conv.has_bias()) refs.push_back({unit.conv.bias.data(), unit.conv.bias.size(), false});
    refs.push_back({unit.bn.gamma.data(), unit.bn.gamma.size(), false});
    refs.push_back({unit.bn.beta.data(), unit.bn.beta.size(), false});
  };
  add_unit(stem);
  for (BasicBlock& block : blocks) {
    add_unit(block.unit1);
    add_unit(block.unit2);
  }
  refs.push_back({head.weight.data(), head.weight.size(), true});
  refs.push_back({head.bias.data(), head.bias.size(), false});
  return refs;
}

std::size_t Network::param_count() {
  std::size_t total = 0;
  for (const ParamRef& ref : param_refs()) total += ref.size;
  return total;
}

Gradients Network::make_gradients() {
  Gradients grads;
  auto refs = param_refs();
  grads.slots.resize(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) grads.slots[i].assign(refs[i].size, 0.0f);
  return grads;
}

const ConvLayer& Network::conv_at_site(int site) const {
  if (site < 0 || site >= conv_site_count()) {
    throw std::invalid_argument("site " + std::to_string(site) + " is not a convolution site");
  }
  if (site == 0) return stem.conv;
  const int bi = (site - 1) / 2;
  return (site - 1) % 2 == 0 ? blocks[bi].unit1.conv : blocks[bi].unit2.conv;
}

void Network::finalize_sites() {
  sites_.clear();
  int slot = 0;
  auto assign_unit = [&](ConvUnit& unit, int c, int h, int w) {
    unit.site = static_cast<int>(sites_.size());
    sites_.push_back({c, h, w});
    unit.weight_slot = slot;
    slot += unit.conv.has_bias() ? 4 : 3;
  };

  int h = config.input_shape[1], w = config.input_shape[2];
  ConvOutShape os = conv_output_shape(h, w, stem.conv);
  assign_unit(stem, stem.conv.out_channels(), os.h, os.w);
  h = os.h;
  w = os.w;

  for (BasicBlock& block : blocks) {
    os = conv_output_shape(h, w, block.unit1.conv);
    assign_unit(block.unit1, block.out_channels, os.h, os.w);
    h = os.h;
    w = os.w;
    os = conv_output_shape(h, w, block.unit2.conv);
    assign_unit(block.unit2, block.out_channels, os.h, os.w);
  }

  head_weight_slot = slot;
  slot += 2;
  sites_.push_back({head.out_features, 1, 1});
  slot_count_ = slot;
}

Network build_resnet(const ArchConfig& config, std::uint64_t init_seed) {
  if (config.blocks_per_stage < 1) throw std::invalid_argument("blocks_per_stage must be >= 1");
  if (config.num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  for (int wdt : config.stage_widths) {
    if (wdt < 1) throw std::invalid_argument("stage widths must be >= 1");
  }
  if (config.input_shape[0] < 1 || config.input_shape[1] < 1 || config.input_shape[2] < 1) {
    throw std::invalid_argument("input shape extents must be >= 1");
  }

  Network net;
  net.config = config;
  const int n = config.blocks_per_stage;

  net.stem.conv = make_conv(config.input_shape[0], config.stage_widths[0], 3, 1, 1,
                            config.conv_bias);
  net.stem.bn = BatchNormLayer(config.stage_widths[0]);

  for (int stage = 0; stage < 3; ++stage) {
    const int width = config.stage_widths[stage];
    for (int b = 0; b < n; ++b) {
      BasicBlock block;
      const bool transition = stage > 0 && b == 0;
      block.in_channels = b == 0 ? (stage == 0 ? config.stage_widths[0]
                                               : config.stage_widths[stage - 1])
                                 : width;
      block.out_channels = width;
      block.downsample = transition;
      block.unit1.conv =
          make_conv(block.in_channels, width, 3, transition ? 2 : 1, 1, config.conv_bias);
      block.unit1.bn = BatchNormLayer(width);
      block.unit2.conv = make_conv(width, width, 3, 1, 1, config.conv_bias);
      block.unit2.bn = BatchNormLayer(width);
      net.blocks.push_back(std::move(block));
    }
  }

  net.head.in_features = config.stage_widths[2];
  net.head.out_features = config.num_classes;
  net.head.weight.assign(static_cast<std::size_t>(config.num_classes) * config.stage_widths[2],
                         0.0f);
  net.head.bias.assign(config.num_classes, 0.0f);

  net.finalize_sites();  // validates spatial extents stay >= 1

  Rng rng(init_seed);
  auto init_unit = [&rng](ConvUnit& unit) {
    init_kaiming_uniform(unit.conv.weight, unit.conv.mac_steps(), rng);
  };
  init_unit(net.stem);
  for (BasicBlock& block : net.blocks) {
    init_unit(block.unit1);
    init_unit(block.unit2);
  }
  {
    Tensor head_w(net.head.out_features, net.head.in_features, 1, 1);
    init_kaiming_uniform(head_w, net.head.in_features, rng);
    net.head.weight = std::move(head_w.data);
  }
  return net;
}

}  // namespace faultnet
