#pragma once

#include <random>

#include "core/tensor.hpp"
#include "core/threadpool.hpp"
#include "invconv/stdconv.hpp"

namespace invflow {

/// Per-channel affine y = exp(log_scale) * x + bias. Scales live in log space,
/// so they stay strictly positive by construction. logdet = H * W * sum(log_scale).
struct ActNorm {
  std::vector<double> log_scale;
  std::vector<double> bias;
  bool initialized = false;

  ActNorm() = default;
  explicit ActNorm(int channels)
      : log_scale(static_cast<size_t>(channels), 0.0), bias(static_cast<size_t>(channels), 0.0) {}

  int channels() const { return static_cast<int>(log_scale.size()); }

  ImageTensor forward(const ImageTensor& x, double* logdet) const;
  ImageTensor inverse(const ImageTensor& y) const;

  /// Accumulates parameter gradients into `grad` (a zeroed clone of this
  /// layer); dlogdet is dLoss/dlogdet of the item being backpropagated.
  ImageTensor backward(const ImageTensor& grad_y, const ImageTensor& x, double dlogdet,
                       ActNorm& grad) const;

  /// Data-dependent init: per-channel output mean 0 and variance 1 on the
  /// given batch of layer inputs.
  void init_from_batch(const std::vector<ImageTensor>& xs);
};

/// Invertible 1x1 channel mixing by a dense C x C matrix.
/// logdet = H * W * log|det|.
struct Inv1x1 {
  int channels = 0;
  std::vector<double> mat;  // row-major C x C

  Inv1x1() = default;
  explicit Inv1x1(int c) : channels(c), mat(static_cast<size_t>(c) * c, 0.0) {
    for (int i = 0; i < c; ++i) mat[static_cast<size_t>(i) * c + i] = 1.0;
  }

  ImageTensor forward(const ImageTensor& x, double* logdet) const;
  ImageTensor inverse(const ImageTensor& y) const;
  ImageTensor backward(const ImageTensor& grad_y, const ImageTensor& x, double dlogdet,
                       Inv1x1& grad) const;
};

/// Affine coupling: the first half of the channels passes through and drives a
/// small conv net that rescales and shifts the second half. The scale factor
/// sigma = 0.5 + logistic(s) stays inside (0.5, 1.5), so the layer is always
/// invertible and its logdet = sum log sigma is bounded.
struct Coupling {
  Kernel w1, w2, w3;
  std::vector<double> b1, b2, b3;

  struct Cache {
    ImageTensor x1, x2, h1, h2, s, t;
  };

  Coupling() = default;
  Coupling(int channels, int hidden, uint64_t seed);

  int channels() const { return w3.c_out(); }

  ImageTensor forward(const ImageTensor& x, double* logdet, Cache* cache,
                      ThreadPool* pool = nullptr) const;
  ImageTensor inverse(const ImageTensor& y, ThreadPool* pool = nullptr) const;
  ImageTensor backward(const ImageTensor& grad_y, const Cache& cache, double dlogdet,
                       Coupling& grad, ThreadPool* pool = nullptr) const;
};

/// Monotone piecewise-linear activation: 8 fixed knots uniform on [-3, 3],
/// 9 per-channel positive slopes (log-stored) including both linear tails, and
/// a per-channel output offset. Identity at init. Bijective on the real line.
struct SplineActivation {
  static constexpr int kKnots = 8;
  static constexpr double kLo = -3.0;
  static constexpr double kHi = 3.0;
  static constexpr int kSlopes = kKnots + 1;

  std::vector<double> log_slopes;  // channels * kSlopes, segment-major per channel
  std::vector<double> offset;      // channels

  SplineActivation() = default;
  explicit SplineActivation(int channels)
      : log_slopes(static_cast<size_t>(channels) * kSlopes, 0.0),
        offset(static_cast<size_t>(channels), 0.0) {}

  int channels() const { return static_cast<int>(offset.size()); }
  static double knot(int i) { return kLo + (kHi - kLo) * i / (kKnots - 1); }

  ImageTensor forward(const ImageTensor& x, double* logdet) const;
  ImageTensor inverse(const ImageTensor& y) const;
  ImageTensor backward(const ImageTensor& grad_y, const ImageTensor& x, double dlogdet,
                       SplineActivation& grad) const;
};

/// (C, H, W) -> (4C, H/2, W/2); each 2x2 block (a b / c d) of channel c lands
/// on output channels 4c..4c+3 in the order a, b, c, d. Requires even extents.
ImageTensor squeeze(const ImageTensor& x);
ImageTensor unsqueeze(const ImageTensor& y);

/// Splits channels into (first half, second half); concat undoes it.
std::pair<ImageTensor, ImageTensor> split_channels(const ImageTensor& x);
ImageTensor concat_channels(const ImageTensor& a, const ImageTensor& b);

/// Standard-normal log density summed over all elements, and its z-gradient.
double gaussian_logp(const ImageTensor& z);

}  // namespace invflow
