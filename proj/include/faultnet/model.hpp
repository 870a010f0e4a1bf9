#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "faultnet/layers.hpp"
#include "faultnet/tensor.hpp"

namespace faultnet {

/// Per-block operator order: convolution-normalization-activation is the
/// vanilla arrangement; conv-activation-normalization clips features before
/// they reach the normalization layer.
enum class LayerOrder { ConvNormAct, ConvActNorm };

struct ArchConfig {
  ActivationKind activation = ActivationKind::StandardRelu;
  LayerOrder layer_order = LayerOrder::ConvNormAct;
  int blocks_per_stage = 7;  // n=7 gives the 44-layer recipe (6n+2)
  std::array<int, 3> stage_widths{16, 32, 64};
  int num_classes = 10;
  std::array<int, 3> input_shape{3, 32, 32};  // C,H,W
  bool conv_bias = false;  // convolutions feeding a norm layer carry no bias by default

  bool operator==(const ArchConfig&) const = default;
};

/// Feature shape (C,H,W) of one injection site.
struct SiteInfo {
  int c = 0, h = 0, w = 0;
};

/// One convolution with its normalization layer and injection-site id.
struct ConvUnit {
  ConvLayer conv;
  BatchNormLayer bn;
  int site = -1;
  int weight_slot = -1;  // first gradient slot (conv weight[, bias], gamma, beta)
};

struct BasicBlock {
  ConvUnit unit1, unit2;
  bool downsample = false;  // stride-2 entry with zero-padded channel shortcut
  int in_channels = 0, out_channels = 0;
};

struct UnitTrace {
  Tensor conv_in;
  Tensor conv_out;  // post-hook value
  Tensor mid;       // between norm and activation, in whichever order applies
  BnCache bn;
};

struct BlockTrace {
  UnitTrace unit1, unit2;
  Tensor sum;  // pre-activation residual sum (ConvNormAct order only)
};

/// Everything the backward pass needs from one training forward.
struct ForwardTrace {
  UnitTrace stem;
  std::vector<BlockTrace> blocks;
  Tensor features;  // last block output, the pooling input
  Tensor pooled;    // classifier input
  bool valid = false;
};

/// Corruption hook applied at one injection site during a forward pass.
/// `corrupt_output` mutates the site's computed output; `replace_conv`, when
/// set on a convolution site, computes that convolution itself (used for
/// instruction-level faults that live inside the accumulation).
struct ForwardHook {
  int site = -1;
  std::function<void(Tensor&)> corrupt_output;
  std::function<Tensor(const Tensor&, const ConvLayer&)> replace_conv;
};

/// Min/max observed at every normalization-layer input during one forward.
struct BnInputProbe {
  float min_seen = 0.0f, max_seen = 0.0f;
  bool any = false;
  void observe(const Tensor& t);
};

/// Gradient buffers aligned with Network::param_refs() order.
struct Gradients {
  std::vector<std::vector<float>> slots;
};

struct ParamRef {
  float* data = nullptr;
  std::size_t size = 0;
  bool is_weight = false;  // conv/linear weight (for weight statistics)
};

class Network {
 public:
  ArchConfig config;
  ConvUnit stem;
  std::vector<BasicBlock> blocks;
  LinearLayer head;
  int head_weight_slot = -1;

  BnMode mode = BnMode::Train;
  void set_mode(BnMode m) { mode = m; }

  /// Stable injection-site shapes: every conv output in forward order, then
  /// the classifier output as the final site.
  const std::vector<SiteInfo>& sites() const { return sites_; }
  int site_count() const { return static_cast<int>(sites_.size()); }
  int conv_site_count() const { return static_cast<int>(sites_.size()) - 1; }

  /// Convolution + classifier layers; 6n+2 for the default recipe.
  int counted_layers() const { return conv_site_count() + 1; }

  Tensor forward(const Tensor& input, const ForwardHook* hook = nullptr,
                 ForwardTrace* trace = nullptr, BnInputProbe* probe = nullptr);

  /// Gradient of the scalar loss wrt every parameter given the logit
  /// gradient from the loss and the trace of the corresponding forward.
  /// Only valid in Train mode.
  Gradients backward(const ForwardTrace& trace, const Tensor& logit_grad);

  std::vector<ParamRef> param_refs();
  std::size_t param_count();
  Gradients make_gradients();

  /// Conv layer behind a conv site index (0-based, stem first).
  const ConvLayer& conv_at_site(int site) const;

  void finalize_sites();  // recomputes site shapes and gradient slot ids

 private:
  std::vector<SiteInfo> sites_;
  int slot_count_ = 0;
};

/// Stem conv, three stages of basic blocks with identity shortcuts
/// (zero-padded stride-2 shortcut at stage transitions), global average pool
/// and a linear classifier. Kaiming-uniform weights from init_seed.
Network build_resnet(const ArchConfig& config, std::uint64_t init_seed);

}  // namespace faultnet
