#include "flow/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "oracle/oracle.hpp"

namespace invflow {

namespace {

void check_channels(int have, int want, const char* who) {
  if (have != want) throw std::invalid_argument(std::string(who) + ": channel count mismatch");
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

ImageTensor ActNorm::forward(const ImageTensor& x, double* logdet) const {
  check_channels(x.channels(), channels(), "ActNorm::forward");
  ImageTensor y(x.channels(), x.height(), x.width());
  double sum_ls = 0.0;
  for (int c = 0; c < x.channels(); ++c) {
    double s = std::exp(log_scale[static_cast<size_t>(c)]);
    double b = bias[static_cast<size_t>(c)];
    sum_ls += log_scale[static_cast<size_t>(c)];
    for (int py = 0; py < x.height(); ++py)
      for (int px = 0; px < x.width(); ++px) y.at(c, py, px) = s * x.at(c, py, px) + b;
  }
  if (logdet) *logdet += static_cast<double>(x.height()) * x.width() * sum_ls;
  return y;
}

ImageTensor ActNorm::inverse(const ImageTensor& y) const {
  check_channels(y.channels(), channels(), "ActNorm::inverse");
  ImageTensor x(y.channels(), y.height(), y.width());
  for (int c = 0; c < y.channels(); ++c) {
    double inv_s = std::exp(-log_scale[static_cast<size_t>(c)]);
    double b = bias[static_cast<size_t>(c)];
    for (int py = 0; py < y.height(); ++py)
      for (int px = 0; px < y.width(); ++px) x.at(c, py, px) = (y.at(c, py, px) - b) * inv_s;
  }
  return x;
}

ImageTensor ActNorm::backward(const ImageTensor& grad_y, const ImageTensor& x, double dlogdet,
                              ActNorm& grad) const {
  ImageTensor gx(x.channels(), x.height(), x.width());
  double hw = static_cast<double>(x.height()) * x.width();
  for (int c = 0; c < x.channels(); ++c) {
    double s = std::exp(log_scale[static_cast<size_t>(c)]);
    double gb = 0.0, gls = 0.0;
    for (int py = 0; py < x.height(); ++py)
      for (int px = 0; px < x.width(); ++px) {
        double g = grad_y.at(c, py, px);
        gx.at(c, py, px) = g * s;
        gb += g;
        gls += g * x.at(c, py, px) * s;
      }
    grad.bias[static_cast<size_t>(c)] += gb;
    grad.log_scale[static_cast<size_t>(c)] += gls + dlogdet * hw;
  }
  return gx;
}

void ActNorm::init_from_batch(const std::vector<ImageTensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("ActNorm::init_from_batch: empty batch");
  check_channels(xs.front().channels(), channels(), "ActNorm::init_from_batch");
  int C = channels();
  for (int c = 0; c < C; ++c) {
    double sum = 0.0, sum2 = 0.0;
    int64_t count = 0;
    for (const ImageTensor& x : xs)
      for (int py = 0; py < x.height(); ++py)
        for (int px = 0; px < x.width(); ++px) {
          double v = x.at(c, py, px);
          sum += v;
          sum2 += v * v;
          ++count;
        }
    double mean = sum / static_cast<double>(count);
    double var = std::max(sum2 / static_cast<double>(count) - mean * mean, 0.0);
    double sd = std::sqrt(var) + 1e-6;
    log_scale[static_cast<size_t>(c)] = -std::log(sd);
    bias[static_cast<size_t>(c)] = -mean / sd;
  }
  initialized = true;
}

ImageTensor Inv1x1::forward(const ImageTensor& x, double* logdet) const {
  check_channels(x.channels(), channels, "Inv1x1::forward");
  DenseOperator a;
  a.n = channels;
  a.a = mat;
  double det = dense_det_lu(a);
  if (std::abs(det) <= 1e-12) throw std::runtime_error("Inv1x1::forward: near-singular matrix");
  ImageTensor y(x.channels(), x.height(), x.width());
  for (int co = 0; co < channels; ++co)
    for (int py = 0; py < x.height(); ++py)
      for (int px = 0; px < x.width(); ++px) {
        double acc = 0.0;
        for (int ci = 0; ci < channels; ++ci)
          acc += mat[static_cast<size_t>(co) * channels + ci] * x.at(ci, py, px);
        y.at(co, py, px) = acc;
      }
  if (logdet)
    *logdet += static_cast<double>(x.height()) * x.width() * std::log(std::abs(det));
  return y;
}

ImageTensor Inv1x1::inverse(const ImageTensor& y) const {
  check_channels(y.channels(), channels, "Inv1x1::inverse");
  DenseOperator a;
  a.n = channels;
  a.a = mat;
  if (std::abs(dense_det_lu(a)) <= 1e-12)
    throw std::runtime_error("Inv1x1::inverse: near-singular matrix");
  DenseOperator inv = dense_inverse(a);
  ImageTensor x(y.channels(), y.height(), y.width());
  for (int co = 0; co < channels; ++co)
    for (int py = 0; py < y.height(); ++py)
      for (int px = 0; px < y.width(); ++px) {
        double acc = 0.0;
        for (int ci = 0; ci < channels; ++ci) acc += inv.at(co, ci) * y.at(ci, py, px);
        x.at(co, py, px) = acc;
      }
  return x;
}

ImageTensor Inv1x1::backward(const ImageTensor& grad_y, const ImageTensor& x, double dlogdet,
                             Inv1x1& grad) const {
  DenseOperator a;
  a.n = channels;
  a.a = mat;
  DenseOperator inv = dense_inverse(a);
  ImageTensor gx(x.channels(), x.height(), x.width());
  double hw = static_cast<double>(x.height()) * x.width();
  for (int ci = 0; ci < channels; ++ci)
    for (int py = 0; py < x.height(); ++py)
      for (int px = 0; px < x.width(); ++px) {
        double acc = 0.0;
        for (int co = 0; co < channels; ++co)
          acc += mat[static_cast<size_t>(co) * channels + ci] * grad_y.at(co, py, px);
        gx.at(ci, py, px) = acc;
      }
  for (int co = 0; co < channels; ++co)
    for (int ci = 0; ci < channels; ++ci) {
      double acc = 0.0;
      for (int py = 0; py < x.height(); ++py)
        for (int px = 0; px < x.width(); ++px) acc += grad_y.at(co, py, px) * x.at(ci, py, px);
      // d logdet / d A = (A^-T); inv.at(ci, co) is the transpose entry.
      grad.mat[static_cast<size_t>(co) * channels + ci] += acc + dlogdet * hw * inv.at(ci, co);
    }
  return gx;
}

Coupling::Coupling(int channels, int hidden, uint64_t seed) {
  if (channels < 2 || channels % 2 != 0)
    throw std::invalid_argument("Coupling: channel count must be even and >= 2");
  int half = channels / 2;
  w1 = Kernel(hidden, half, 3);
  w2 = Kernel(hidden, hidden, 3);
  w3 = Kernel(channels, hidden, 3);  // zero-init keeps the layer at identity
  b1.assign(static_cast<size_t>(hidden), 0.0);
  b2.assign(static_cast<size_t>(hidden), 0.0);
  b3.assign(static_cast<size_t>(channels), 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.05);
  for (auto& v : w1.weights()) v = dist(rng);
  for (auto& v : w2.weights()) v = dist(rng);
}

ImageTensor Coupling::forward(const ImageTensor& x, double* logdet, Cache* cache,
                              ThreadPool* pool) const {
  check_channels(x.channels(), channels(), "Coupling::forward");
  auto [x1, x2] = split_channels(x);
  ImageTensor h1 = std_conv_forward(x1, w1, b1, pool);
  for (auto& v : h1.data()) v = std::tanh(v);
  ImageTensor h2 = std_conv_forward(h1, w2, b2, pool);
  for (auto& v : h2.data()) v = std::tanh(v);
  ImageTensor st = std_conv_forward(h2, w3, b3, pool);
  auto [s, t] = split_channels(st);
  ImageTensor y2(x2.channels(), x2.height(), x2.width());
  double ld = 0.0;
  for (int64_t i = 0; i < x2.size(); ++i) {
    double sig = 0.5 + logistic(s[i]);
    y2[i] = x2[i] * sig + t[i];
    ld += std::log(sig);
  }
  if (logdet) *logdet += ld;
  if (cache) *cache = Cache{x1, x2, std::move(h1), std::move(h2), std::move(s), std::move(t)};
  return concat_channels(x1, y2);
}

ImageTensor Coupling::inverse(const ImageTensor& y, ThreadPool* pool) const {
  check_channels(y.channels(), channels(), "Coupling::inverse");
  auto [y1, y2] = split_channels(y);
  ImageTensor h1 = std_conv_forward(y1, w1, b1, pool);
  for (auto& v : h1.data()) v = std::tanh(v);
  ImageTensor h2 = std_conv_forward(h1, w2, b2, pool);
  for (auto& v : h2.data()) v = std::tanh(v);
  ImageTensor st = std_conv_forward(h2, w3, b3, pool);
  auto [s, t] = split_channels(st);
  ImageTensor x2(y2.channels(), y2.height(), y2.width());
  for (int64_t i = 0; i < y2.size(); ++i) x2[i] = (y2[i] - t[i]) / (0.5 + logistic(s[i]));
  return concat_channels(y1, x2);
}

ImageTensor Coupling::backward(const ImageTensor& grad_y, const Cache& cache, double dlogdet,
                               Coupling& grad, ThreadPool* pool) const {
  auto [gy1, gy2] = split_channels(grad_y);
  const ImageTensor& x2 = cache.x2;
  ImageTensor gx2(x2.channels(), x2.height(), x2.width());
  ImageTensor gs(x2.channels(), x2.height(), x2.width());
  for (int64_t i = 0; i < x2.size(); ++i) {
    double l = logistic(cache.s[i]);
    double sig = 0.5 + l;
    gx2[i] = gy2[i] * sig;
    double gsig = gy2[i] * x2[i] + dlogdet / sig;
    gs[i] = gsig * l * (1.0 - l);
  }
  ImageTensor gst = concat_channels(gs, gy2);
  StdConvGradients g3 = std_conv_backward(gst, cache.h2, w3, pool);
  for (int64_t i = 0; i < g3.grad_input.size(); ++i)
    g3.grad_input[i] *= 1.0 - cache.h2[i] * cache.h2[i];
  StdConvGradients g2 = std_conv_backward(g3.grad_input, cache.h1, w2, pool);
  for (int64_t i = 0; i < g2.grad_input.size(); ++i)
    g2.grad_input[i] *= 1.0 - cache.h1[i] * cache.h1[i];
  StdConvGradients g1 = std_conv_backward(g2.grad_input, cache.x1, w1, pool);

  auto axpy = [](std::vector<double>& dst, const std::vector<double>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };
  axpy(grad.w3.weights(), g3.grad_weights.weights());
  axpy(grad.b3, g3.grad_bias);
  axpy(grad.w2.weights(), g2.grad_weights.weights());
  axpy(grad.b2, g2.grad_bias);
  axpy(grad.w1.weights(), g1.grad_weights.weights());
  axpy(grad.b1, g1.grad_bias);

  ImageTensor gx1 = gy1;
  for (int64_t i = 0; i < gx1.size(); ++i) gx1[i] += g1.grad_input[i];
  return concat_channels(gx1, gx2);
}

ImageTensor SplineActivation::forward(const ImageTensor& x, double* logdet) const {
  check_channels(x.channels(), channels(), "SplineActivation::forward");
  ImageTensor y(x.channels(), x.height(), x.width());
  double ld = 0.0;
  for (int c = 0; c < x.channels(); ++c) {
    const double* ls = &log_slopes[static_cast<size_t>(c) * kSlopes];
    double slope[kSlopes], value[kKnots];
    for (int m = 0; m < kSlopes; ++m) slope[m] = std::exp(ls[m]);
    value[0] = knot(0) + offset[static_cast<size_t>(c)];
    for (int i = 1; i < kKnots; ++i)
      value[i] = value[i - 1] + slope[i] * (knot(i) - knot(i - 1));
    for (int py = 0; py < x.height(); ++py)
      for (int px = 0; px < x.width(); ++px) {
        double v = x.at(c, py, px);
        double out;
        int seg;
        if (v < knot(0)) {
          seg = 0;
          out = value[0] + slope[0] * (v - knot(0));
        } else if (v >= knot(kKnots - 1)) {
          seg = kSlopes - 1;
          out = value[kKnots - 1] + slope[seg] * (v - knot(kKnots - 1));
        } else {
          int i = std::min(static_cast<int>((v - kLo) / ((kHi - kLo) / (kKnots - 1))), kKnots - 2);
          if (v < knot(i)) --i;  // guard against rounding at knot boundaries
          seg = i + 1;
          out = value[i] + slope[seg] * (v - knot(i));
        }
        y.at(c, py, px) = out;
        ld += std::log(slope[seg]);
      }
  }
  if (logdet) *logdet += ld;
  return y;
}

ImageTensor SplineActivation::inverse(const ImageTensor& y) const {
  check_channels(y.channels(), channels(), "SplineActivation::inverse");
  ImageTensor x(y.channels(), y.height(), y.width());
  for (int c = 0; c < y.channels(); ++c) {
    const double* ls = &log_slopes[static_cast<size_t>(c) * kSlopes];
    double slope[kSlopes], value[kKnots];
    for (int m = 0; m < kSlopes; ++m) slope[m] = std::exp(ls[m]);
    value[0] = knot(0) + offset[static_cast<size_t>(c)];
    for (int i = 1; i < kKnots; ++i)
      value[i] = value[i - 1] + slope[i] * (knot(i) - knot(i - 1));
    for (int py = 0; py < y.height(); ++py)
      for (int px = 0; px < y.width(); ++px) {
        double v = y.at(c, py, px);
        double out;
        if (v < value[0]) {
          out = knot(0) + (v - value[0]) / slope[0];
        } else if (v >= value[kKnots - 1]) {
          out = knot(kKnots - 1) + (v - value[kKnots - 1]) / slope[kSlopes - 1];
        } else {
          int i = 0;
          while (i < kKnots - 2 && v >= value[i + 1]) ++i;
          out = knot(i) + (v - value[i]) / slope[i + 1];
        }
        x.at(c, py, px) = out;
      }
  }
  return x;
}

ImageTensor SplineActivation::backward(const ImageTensor& grad_y, const ImageTensor& x,
                                       double dlogdet, SplineActivation& grad) const {
  ImageTensor gx(x.channels(), x.height(), x.width());
  for (int c = 0; c < x.channels(); ++c) {
    const double* ls = &log_slopes[static_cast<size_t>(c) * kSlopes];
    double slope[kSlopes];
    for (int m = 0; m < kSlopes; ++m) slope[m] = std::exp(ls[m]);
    double gslope[kSlopes] = {0.0};
    double goffset = 0.0;
    for (int py = 0; py < x.height(); ++py)
      for (int px = 0; px < x.width(); ++px) {
        double v = x.at(c, py, px);
        double g = grad_y.at(c, py, px);
        int seg;
        double local;  // offset of v inside its segment
        if (v < knot(0)) {
          seg = 0;
          local = v - knot(0);
        } else if (v >= knot(kKnots - 1)) {
          seg = kSlopes - 1;
          local = v - knot(kKnots - 1);
        } else {
          int i = std::min(static_cast<int>((v - kLo) / ((kHi - kLo) / (kKnots - 1))), kKnots - 2);
          if (v < knot(i)) --i;
          seg = i + 1;
          local = v - knot(i);
        }
        gx.at(c, py, px) = g * slope[seg];
        goffset += g;
        gslope[seg] += g * local + dlogdet / slope[seg];
        // The anchor value of segments past the first interior knots already
        // accumulated earlier slopes over their full knot spans.
        int upto = (seg == kSlopes - 1) ? kKnots - 1 : seg - 1;
        for (int m = 1; m <= upto; ++m) gslope[m] += g * (knot(m) - knot(m - 1));
      }
    grad.offset[static_cast<size_t>(c)] += goffset;
    for (int m = 0; m < kSlopes; ++m)
      grad.log_slopes[static_cast<size_t>(c) * kSlopes + m] += gslope[m] * slope[m];
  }
  return gx;
}

ImageTensor squeeze(const ImageTensor& x) {
  if (x.height() % 2 != 0 || x.width() % 2 != 0)
    throw std::invalid_argument("squeeze: spatial extents must be even");
  ImageTensor y(x.channels() * 4, x.height() / 2, x.width() / 2);
  for (int c = 0; c < x.channels(); ++c)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        for (int py = 0; py < y.height(); ++py)
          for (int px = 0; px < y.width(); ++px)
            y.at(c * 4 + dy * 2 + dx, py, px) = x.at(c, 2 * py + dy, 2 * px + dx);
  return y;
}

ImageTensor unsqueeze(const ImageTensor& y) {
  if (y.channels() % 4 != 0)
    throw std::invalid_argument("unsqueeze: channel count must be divisible by 4");
  ImageTensor x(y.channels() / 4, y.height() * 2, y.width() * 2);
  for (int c = 0; c < x.channels(); ++c)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        for (int py = 0; py < y.height(); ++py)
          for (int px = 0; px < y.width(); ++px)
            x.at(c, 2 * py + dy, 2 * px + dx) = y.at(c * 4 + dy * 2 + dx, py, px);
  return x;
}

std::pair<ImageTensor, ImageTensor> split_channels(const ImageTensor& x) {
  if (x.channels() % 2 != 0)
    throw std::invalid_argument("split_channels: channel count must be even");
  int half = x.channels() / 2;
  ImageTensor a(half, x.height(), x.width());
  ImageTensor b(half, x.height(), x.width());
  for (int c = 0; c < half; ++c)
    for (int py = 0; py < x.height(); ++py)
      for (int px = 0; px < x.width(); ++px) {
        a.at(c, py, px) = x.at(c, py, px);
        b.at(c, py, px) = x.at(c + half, py, px);
      }
  return {std::move(a), std::move(b)};
}

ImageTensor concat_channels(const ImageTensor& a, const ImageTensor& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw std::invalid_argument("concat_channels: spatial extents differ");
  ImageTensor x(a.channels() + b.channels(), a.height(), a.width());
  for (int c = 0; c < a.channels(); ++c)
    for (int py = 0; py < a.height(); ++py)
      for (int px = 0; px < a.width(); ++px) x.at(c, py, px) = a.at(c, py, px);
  for (int c = 0; c < b.channels(); ++c)
    for (int py = 0; py < b.height(); ++py)
      for (int px = 0; px < b.width(); ++px) x.at(c + a.channels(), py, px) = b.at(c, py, px);
  return x;
}

double gaussian_logp(const ImageTensor& z) {
  constexpr double half_log_2pi = 0.9189385332046727;  // 0.5 * log(2 * pi)
  double s = 0.0;
  for (int64_t i = 0; i < z.size(); ++i) s += -0.5 * z[i] * z[i] - half_log_2pi;
  return s;
}

}  // namespace invflow
