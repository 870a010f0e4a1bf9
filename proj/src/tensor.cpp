#include "faultnet/tensor.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace faultnet {

Tensor::Tensor(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
  if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) {
    throw std::invalid_argument("tensor extents must be non-negative, got " + shape_str());
  }
  data.assign(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0f);
}

Tensor Tensor::full(int n, int c, int h, int w, float value) {
  Tensor t(n, c, h, w);
  std::fill(t.data.begin(), t.data.end(), value);
  return t;
}

std::string Tensor::shape_str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

bool Tensor::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (!same_shape(other)) return false;
  return std::memcmp(data.data(), other.data.data(), data.size() * sizeof(float)) == 0;
}

Tensor zero_pad(const Tensor& input, int pad) {
  if (pad < 0) throw std::invalid_argument("padding must be non-negative");
  if (pad == 0) return input;
  Tensor out(input.n, input.c, input.h + 2 * pad, input.w + 2 * pad);
  for (int in = 0; in < input.n; ++in) {
    for (int ic = 0; ic < input.c; ++ic) {
      for (int iy = 0; iy < input.h; ++iy) {
        std::memcpy(out.row(in, ic, iy + pad) + pad, input.row(in, ic, iy),
                    static_cast<std::size_t>(input.w) * sizeof(float));
      }
    }
  }
  return out;
}

void add_inplace(Tensor& accum, const Tensor& other) {
  if (!accum.same_shape(other)) {
    throw std::invalid_argument("elementwise add shape mismatch: " + accum.shape_str() + " vs " +
                                other.shape_str());
  }
  float* a = accum.data.data();
  const float* b = other.data.data();
  const std::size_t count = accum.size();
  for (std::size_t i = 0; i < count; ++i) a[i] += b[i];
}

}  // namespace faultnet
