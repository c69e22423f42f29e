#include "invconv/stdconv.hpp"

#include <algorithm>

namespace invflow {

namespace {

void check_std_args(const ImageTensor& x, const Kernel& w, const char* who) {
  if (w.k() % 2 == 0) throw std::invalid_argument(std::string(who) + ": kernel size must be odd");
  if (x.channels() != w.c_in())
    throw std::invalid_argument(std::string(who) + ": tensor channels do not match kernel");
}

}  // namespace

ImageTensor std_conv_forward(const ImageTensor& x, const Kernel& w, const std::vector<double>& bias,
                             ThreadPool* pool) {
  check_std_args(x, w, "std_conv_forward");
  if (static_cast<int>(bias.size()) != w.c_out())
    throw std::invalid_argument("std_conv_forward: bias length does not match c_out");
  const int Ci = x.channels(), Co = w.c_out(), H = x.height(), W = x.width(), k = w.k();
  const int r = (k - 1) / 2;
  ImageTensor y(Co, H, W);
  ThreadPool::run(pool, static_cast<int64_t>(Co) * H, [&](int64_t lo, int64_t hi) {
    for (int64_t e = lo; e < hi; ++e) {
      int co = static_cast<int>(e / H);
      int py = static_cast<int>(e % H);
      for (int px = 0; px < W; ++px) {
        double acc = bias[co];
        for (int i = 0; i < k; ++i) {
          int sy = py + i - r;
          if (sy < 0 || sy >= H) continue;
          for (int j = 0; j < k; ++j) {
            int sx = px + j - r;
            if (sx < 0 || sx >= W) continue;
            for (int ci = 0; ci < Ci; ++ci) acc += w.at(co, ci, i, j) * x.at(ci, sy, sx);
          }
        }
        y.at(co, py, px) = acc;
      }
    }
  });
  return y;
}

StdConvGradients std_conv_backward(const ImageTensor& grad_y, const ImageTensor& x, const Kernel& w,
                                   ThreadPool* pool) {
  check_std_args(x, w, "std_conv_backward");
  if (grad_y.channels() != w.c_out() || grad_y.height() != x.height() || grad_y.width() != x.width())
    throw std::invalid_argument("std_conv_backward: grad_y shape does not match");
  const int Ci = x.channels(), Co = w.c_out(), H = x.height(), W = x.width(), k = w.k();
  const int r = (k - 1) / 2;

  StdConvGradients g;
  g.grad_input = ImageTensor(Ci, H, W);
  g.grad_weights = Kernel(Co, Ci, k);
  g.grad_bias.assign(static_cast<size_t>(Co), 0.0);

  ThreadPool::run(pool, static_cast<int64_t>(Ci) * H, [&](int64_t lo, int64_t hi) {
    for (int64_t e = lo; e < hi; ++e) {
      int ci = static_cast<int>(e / H);
      int qy = static_cast<int>(e % H);
      for (int qx = 0; qx < W; ++qx) {
        double acc = 0.0;
        for (int i = 0; i < k; ++i) {
          int py = qy - i + r;
          if (py < 0 || py >= H) continue;
          for (int j = 0; j < k; ++j) {
            int px = qx - j + r;
            if (px < 0 || px >= W) continue;
            for (int co = 0; co < Co; ++co) acc += w.at(co, ci, i, j) * grad_y.at(co, py, px);
          }
        }
        g.grad_input.at(ci, qy, qx) = acc;
      }
    }
  });

  int64_t entries = static_cast<int64_t>(Co) * Ci * k * k;
  ThreadPool::run(pool, entries, [&](int64_t lo, int64_t hi) {
    for (int64_t e = lo; e < hi; ++e) {
      int j = static_cast<int>(e % k);
      int i = static_cast<int>((e / k) % k);
      int ci = static_cast<int>((e / (static_cast<int64_t>(k) * k)) % Ci);
      int co = static_cast<int>(e / (static_cast<int64_t>(k) * k * Ci));
      double s = 0.0;
      int y0 = std::max(0, r - i), y1 = std::min(H, H + r - i);
      int x0 = std::max(0, r - j), x1 = std::min(W, W + r - j);
      for (int py = y0; py < y1; ++py)
        for (int px = x0; px < x1; ++px) s += grad_y.at(co, py, px) * x.at(ci, py + i - r, px + j - r);
      g.grad_weights.at(co, ci, i, j) = s;
    }
  });

  for (int co = 0; co < Co; ++co) {
    double s = 0.0;
    for (int py = 0; py < H; ++py)
      for (int px = 0; px < W; ++px) s += grad_y.at(co, py, px);
    g.grad_bias[co] = s;
  }
  return g;
}

}  // namespace invflow
