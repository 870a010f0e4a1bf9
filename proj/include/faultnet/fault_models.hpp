#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "faultnet/model.hpp"
#include "faultnet/rng.hpp"
#include "faultnet/tensor.hpp"

namespace faultnet {

/// Spatial corruption pattern on one feature map. Line spans a full row;
/// Block is the y0..y0+height-1 x x0..x0+width-1 rectangle.
struct FaultGeometry {
  enum class Kind { SingleValue, Line, Block };
  Kind kind = Kind::SingleValue;
  int y = 0, x = 0;
  int height = 1, width = 1;

  static FaultGeometry single(int y, int x) { return {Kind::SingleValue, y, x, 1, 1}; }
  static FaultGeometry line(int y) { return {Kind::Line, y, 0, 1, 0}; }
  static FaultGeometry block(int y, int x, int h, int w) { return {Kind::Block, y, x, h, w}; }
};

/// How a corrupted element's value is produced. AdditiveUniform adds
/// sign * U[0, max_magnitude] per element; PowerLawReplace substitutes a
/// signed Pareto draw (magnitude >= xmin).
struct ValueModel {
  enum class Kind { AdditiveUniform, PowerLawReplace };
  Kind kind = Kind::AdditiveUniform;
  double max_magnitude = 0.0;
  double alpha = 3.0;
  double xmin = 1.0;

  static ValueModel additive_uniform(double max_magnitude) {
    ValueModel m;
    m.kind = Kind::AdditiveUniform;
    m.max_magnitude = max_magnitude;
    return m;
  }
  static ValueModel power_law_replace(double alpha, double xmin) {
    ValueModel m;
    m.kind = Kind::PowerLawReplace;
    m.alpha = alpha;
    m.xmin = xmin;
    return m;
  }
};

/// A fully materialized injection plan. The geometry and channel mask are
/// shared across the selected images; `seed` pins the per-element value draws.
struct FaultSpec {
  int layer_index = 0;
  std::vector<int> image_indices;
  std::vector<std::uint8_t> channel_mask;
  FaultGeometry geometry;
  ValueModel value_model;
  std::uint64_t seed = 0;
};

struct CorruptedCoord {
  int image = 0, channel = 0, y = 0, x = 0;
};

/// Training-time fault plan: uniform conv/linear site, Block geometry with
/// uniform corner and extents, Bernoulli(0.3) channels resampled until
/// non-empty, round-half-up fraction of the batch, additive magnitudes
/// bounded by the 1-based epoch index.
FaultSpec sample_training_fault(int epoch, int batch_size, std::span<const SiteInfo> sites,
                                double injected_fraction, Rng& rng);

/// Test-time fault plan: geometry kind uniform over single/line/block, all
/// images selected, channel probability 1.0 / 0.75 / 0.3 by kind.
FaultSpec sample_eval_fault(int batch_size, std::span<const SiteInfo> sites,
                            double magnitude_ceiling, Rng& rng);

/// Corrupts exactly the spec's coordinate set, drawing values from `rng`;
/// returns the corrupted coordinates in application order.
std::vector<CorruptedCoord> apply_fault_inplace(Tensor& feature, const FaultSpec& spec, Rng& rng);

/// Same, with the value stream derived from spec.seed.
std::vector<CorruptedCoord> apply_fault_inplace(Tensor& feature, const FaultSpec& spec);

/// Pure variant: returns the corrupted copy and the coordinate set.
std::pair<Tensor, std::vector<CorruptedCoord>> apply_fault(const Tensor& feature,
                                                           const FaultSpec& spec);

/// Inverse-CDF Pareto sample: xmin * U^(-1/(alpha-1)), U in (0,1].
double sample_power_law(double alpha, double xmin, Rng& rng);

/// Value transforms behind the models, exposed for direct testing.
inline float additive_corrupt(float x, int sign, double magnitude) {
  return x + static_cast<float>(sign * magnitude);
}
inline double pareto_value(double alpha, double xmin, double u) {
  return xmin * std::pow(u, -1.0 / (alpha - 1.0));
}

/// Named geometry/frequency/value-model table loadable from a JSON file.
struct FaultModelDescriptor {
  struct Entry {
    FaultGeometry::Kind geometry = FaultGeometry::Kind::Block;
    double frequency = 0.0;
    double channel_prob = 0.3;
    ValueModel value_model;
  };
  std::string name;
  std::vector<Entry> entries;
};

FaultModelDescriptor load_fault_model_descriptor(const std::filesystem::path& path);

/// Eval-style plan drawn from a descriptor: entry by relative frequency,
/// channels by the entry's probability, geometry uniform within the site.
FaultSpec sample_descriptor_fault(const FaultModelDescriptor& descriptor, int batch_size,
                                  std::span<const SiteInfo> sites, Rng& rng);

}  // namespace faultnet
