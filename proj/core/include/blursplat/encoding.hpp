// Sinusoidal positional encoding: raw input followed by
// (sin(2^l pi v), cos(2^l pi v)) for l = 0..L-1, giving k(2L+1) outputs
// for a k-vector.
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <numbers>

namespace blursplat {

inline int encoded_size(int k, int L) { return k * (2 * L + 1); }

inline Eigen::VectorXd encode(const Eigen::VectorXd& v, int L) {
  const int k = static_cast<int>(v.size());
  Eigen::VectorXd out(encoded_size(k, L));
  out.head(k) = v;
  double freq = std::numbers::pi;
  for (int l = 0; l < L; ++l) {
    for (int i = 0; i < k; ++i) {
      out[k + 2 * l * k + i] = std::sin(freq * v[i]);
      out[k + (2 * l + 1) * k + i] = std::cos(freq * v[i]);
    }
    freq *= 2.0;
  }
  return out;
}

// Chain rule through encode: d(sum g . encode(v))/dv.
inline Eigen::VectorXd encode_backward(const Eigen::VectorXd& v, int L,
                                       const Eigen::VectorXd& g) {
  const int k = static_cast<int>(v.size());
  Eigen::VectorXd d = g.head(k);
  double freq = std::numbers::pi;
  for (int l = 0; l < L; ++l) {
    for (int i = 0; i < k; ++i) {
      d[i] += freq * std::cos(freq * v[i]) * g[k + 2 * l * k + i] -
              freq * std::sin(freq * v[i]) * g[k + (2 * l + 1) * k + i];
    }
    freq *= 2.0;
  }
  return d;
}

}  // namespace blursplat
