#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "core/tensor.hpp"

namespace invflow::test {

inline ImageTensor random_tensor(int c, int h, int w, std::mt19937& rng, double lo = -1.0,
                                 double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  ImageTensor t(c, h, w);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

/// Masked kernel with free taps uniform in (-scale, scale). The default keeps
/// row sums of the strictly lower part below one, so the inverse operator
/// stays well conditioned at any image size.
inline Kernel random_masked_kernel(int channels, int k, std::mt19937& rng, double scale = 0.0) {
  if (scale <= 0.0) scale = 0.5 / (static_cast<double>(channels) * k * k);
  std::uniform_real_distribution<double> dist(-scale, scale);
  Kernel w(channels, channels, k);
  for (auto& v : w.weights()) v = dist(rng);
  return mask_project(std::move(w));
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
  return max_abs_diff(a.data(), b.data());
}

inline double max_abs(const std::vector<double>& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

/// Relative error against the larger of the two norms, guarded for tiny scales.
inline double rel_err(const std::vector<double>& got, const std::vector<double>& want) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    num = std::max(num, std::abs(got[i] - want[i]));
    den = std::max(den, std::abs(want[i]));
  }
  return num / std::max(den, 1e-12);
}

}  // namespace invflow::test
