#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace faultnet {

/// Dense 4-D array (N batch, C channels, H height, W width) of 32-bit floats,
/// contiguous row-major. The value carrier for every layer and injection.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_);

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }
  static Tensor full(int n, int c, int h, int w, float value);

  std::size_t size() const { return data.size(); }

  std::size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
  }
  float& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  float at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

  float* plane(int in, int ic) { return data.data() + index(in, ic, 0, 0); }
  const float* plane(int in, int ic) const { return data.data() + index(in, ic, 0, 0); }
  float* row(int in, int ic, int iy) { return data.data() + index(in, ic, iy, 0); }
  const float* row(int in, int ic, int iy) const { return data.data() + index(in, ic, iy, 0); }

  bool same_shape(const Tensor& other) const {
    return n == other.n && c == other.c && h == other.h && w == other.w;
  }
  std::string shape_str() const;

  bool all_finite() const;

  /// Bitwise equality (distinguishes NaN payloads and signed zeros).
  bool bit_equal(const Tensor& other) const;
};

/// Zero-pads the spatial dims by `pad` on every side.
Tensor zero_pad(const Tensor& input, int pad);

void add_inplace(Tensor& accum, const Tensor& other);

}  // namespace faultnet
