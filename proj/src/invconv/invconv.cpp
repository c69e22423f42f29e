#include "invconv/invconv.hpp"

#include <algorithm>

namespace invflow {

namespace {

void check_conv_args(const ImageTensor& t, const Kernel& w, const char* who) {
  if (w.c_out() != w.c_in())
    throw std::invalid_argument(std::string(who) + ": kernel must be square in channels");
  if (t.channels() != w.c_in())
    throw std::invalid_argument(std::string(who) + ": tensor channels do not match kernel");
}

void check_single_channel(const Kernel& w, const char* who) {
  if (w.c_out() != 1 || w.c_in() != 1)
    throw std::invalid_argument(std::string(who) + ": reference recursion is single-channel");
}

}  // namespace

ImageTensor conv_forward(const ImageTensor& x, const Kernel& w, ThreadPool* pool) {
  check_conv_args(x, w, "conv_forward");
  const int C = x.channels(), H = x.height(), W = x.width(), k = w.k();
  ImageTensor y(C, H, W);
  const double* xd = x.data().data();
  // One (channel, row) strip per work item. Each tap sweeps a contiguous row
  // segment, so the inner loop streams; the per-pixel accumulation order is
  // still kernel tap major, input channel minor, for determinism.
  ThreadPool::run(pool, static_cast<int64_t>(C) * H, [&](int64_t lo, int64_t hi) {
    for (int64_t e = lo; e < hi; ++e) {
      int co = static_cast<int>(e / H);
      int py = static_cast<int>(e % H);
      double* out = &y.at(co, py, 0);
      for (int i = 0; i < k; ++i) {
        int sy = py - (k - 1) + i;
        if (sy < 0) continue;
        for (int j = 0; j < k; ++j) {
          int shift = j - (k - 1);  // sx = px + shift
          int px0 = std::max(0, -shift);
          for (int ci = 0; ci < C; ++ci) {
            double wv = w.at(co, ci, i, j);
            const double* row = xd + (static_cast<int64_t>(ci) * H + sy) * W;
            for (int px = px0; px < W; ++px) out[px] += wv * row[px + shift];
          }
        }
      }
    }
  });
  return y;
}

ImageTensor inv_conv_solve(const ImageTensor& y, const Kernel& w, ThreadPool* pool) {
  check_conv_args(y, w, "inv_conv_solve");
  const int C = y.channels(), H = y.height(), W = y.width(), k = w.k();
  ImageTensor x(C, H, W);
  DiagonalSchedule sched(H, W);
  // Forward substitution, one anti-diagonal at a time. The pinned tap carries
  // coefficient 1 on the channel diagonal and 0 across channels, so the update
  // is x_p = y_p minus the window contribution of strictly earlier pixels.
  for (int d = 0; d < sched.diagonal_count(); ++d) {
    auto diag = sched.diagonal(d);
    int64_t len = static_cast<int64_t>(diag.size());
    ThreadPool::run(pool, len * C, [&](int64_t lo, int64_t hi) {
      for (int64_t e = lo; e < hi; ++e) {
        int co = static_cast<int>(e % C);
        Pixel p = diag[static_cast<size_t>(e / C)];
        int py = p.row - 1, px = p.col - 1;
        double acc = 0.0;
        bool interior = py >= k - 1 && px >= k - 1;
        for (int i = 0; i < k; ++i) {
          int sy = py - (k - 1) + i;
          if (!interior && sy < 0) continue;
          for (int j = 0; j < k; ++j) {
            if (i == k - 1 && j == k - 1) continue;
            int sx = px - (k - 1) + j;
            if (!interior && sx < 0) continue;
            for (int ci = 0; ci < C; ++ci) acc += w.at(co, ci, i, j) * x.at(ci, sy, sx);
          }
        }
        x.at(co, py, px) = y.at(co, py, px) - acc;
      }
    });
  }
  return x;
}

ImageTensor input_grad(const ImageTensor& grad_x, const Kernel& w, ThreadPool* pool) {
  check_conv_args(grad_x, w, "input_grad");
  const int C = grad_x.channels(), H = grad_x.height(), W = grad_x.width(), k = w.k();
  ImageTensor u(C, H, W);
  DiagonalSchedule sched(H, W);
  // M^T u = grad_x: the transpose couples each pixel to its successors, so the
  // sweep runs from the last diagonal back to the first.
  for (int d = sched.diagonal_count() - 1; d >= 0; --d) {
    auto diag = sched.diagonal(d);
    int64_t len = static_cast<int64_t>(diag.size());
    ThreadPool::run(pool, len * C, [&](int64_t lo, int64_t hi) {
      for (int64_t e = lo; e < hi; ++e) {
        int ci = static_cast<int>(e % C);
        Pixel p = diag[static_cast<size_t>(e / C)];
        int py = p.row - 1, px = p.col - 1;
        double acc = 0.0;
        bool interior = py + k - 1 < H && px + k - 1 < W;
        for (int i = 0; i < k; ++i) {
          int ry = py + (k - 1) - i;
          if (!interior && ry >= H) continue;
          for (int j = 0; j < k; ++j) {
            if (i == k - 1 && j == k - 1) continue;
            int rx = px + (k - 1) - j;
            if (!interior && rx >= W) continue;
            for (int co = 0; co < C; ++co) acc += w.at(co, ci, i, j) * u.at(co, ry, rx);
          }
        }
        u.at(ci, py, px) = grad_x.at(ci, py, px) - acc;
      }
    });
  }
  return u;
}

Kernel weight_grad(const ImageTensor& u, const ImageTensor& x, const Kernel& w, ThreadPool* pool) {
  check_conv_args(u, w, "weight_grad");
  if (!u.same_shape(x)) throw std::invalid_argument("weight_grad: u and x shapes differ");
  const int C = u.channels(), H = u.height(), W = u.width(), k = w.k();
  Kernel g(C, C, k);
  // Each kernel entry owns its full image sum, so the result does not depend
  // on how entries are distributed over threads. The pinned tap stays zero.
  int64_t entries = static_cast<int64_t>(C) * C * k * k;
  ThreadPool::run(pool, entries, [&](int64_t lo, int64_t hi) {
    for (int64_t e = lo; e < hi; ++e) {
      int j = static_cast<int>(e % k);
      int i = static_cast<int>((e / k) % k);
      int ci = static_cast<int>((e / (static_cast<int64_t>(k) * k)) % C);
      int co = static_cast<int>(e / (static_cast<int64_t>(k) * k * C));
      if (i == k - 1 && j == k - 1) continue;
      double s = 0.0;
      int y0 = std::max(0, (k - 1) - i);
      int x0 = std::max(0, (k - 1) - j);
      for (int py = y0; py < H; ++py) {
        int sy = py - (k - 1) + i;
        for (int px = x0; px < W; ++px) s += u.at(co, py, px) * x.at(ci, sy, px - (k - 1) + j);
      }
      g.at(co, ci, i, j) = -s;
    }
  });
  return g;
}

ConvGradients inv_conv_backward(const ImageTensor& grad_x, const ImageTensor& x, const Kernel& w,
                                ThreadPool* pool) {
  ConvGradients out;
  out.grad_input = input_grad(grad_x, w, pool);
  out.grad_weights = weight_grad(out.grad_input, x, w, pool);
  return out;
}

std::vector<double> jacobian_table_recursive(Pixel p, const Kernel& w, int height, int width) {
  check_single_channel(w, "jacobian_table_recursive");
  if (p.row < 1 || p.row > height || p.col < 1 || p.col > width)
    throw std::invalid_argument("jacobian_table_recursive: p out of bounds");
  const int k = w.k();
  std::vector<double> table(static_cast<size_t>(height) * width, 0.0);
  auto idx = [width](Pixel q) { return static_cast<size_t>(q.row - 1) * width + (q.col - 1); };
  // Raster order visits every member of delta_set(q) before q.
  for (int r = 1; r <= height; ++r)
    for (int c = 1; c <= width; ++c) {
      Pixel q{r, c};
      if (q == p) {
        table[idx(q)] = 1.0;
        continue;
      }
      if (!pixel_leq(p, q)) continue;
      double acc = 0.0;
      for (Pixel s : delta_set(q, k, height, width))
        acc += w.at(0, 0, k - 1 - (q.row - s.row), k - 1 - (q.col - s.col)) * table[idx(s)];
      table[idx(q)] = -acc;
    }
  return table;
}

double jacobian_entry_recursive(Pixel q, Pixel p, const Kernel& w, int height, int width) {
  if (q.row < 1 || q.row > height || q.col < 1 || q.col > width)
    throw std::invalid_argument("jacobian_entry_recursive: q out of bounds");
  auto table = jacobian_table_recursive(p, w, height, width);
  return table[static_cast<size_t>(q.row - 1) * width + (q.col - 1)];
}

std::vector<double> weight_jacobian_table_recursive(Pixel a, const ImageTensor& x, const Kernel& w) {
  check_single_channel(w, "weight_jacobian_table_recursive");
  if (x.channels() != 1)
    throw std::invalid_argument("weight_jacobian_table_recursive: x must be single-channel");
  const int k = w.k();
  if (a.row < 1 || a.row > k || a.col < 1 || a.col > k)
    throw std::invalid_argument("weight_jacobian_table_recursive: kernel index out of bounds");
  if (a.row == k && a.col == k)
    throw std::invalid_argument("weight_jacobian_table_recursive: pinned tap (k,k) is not a free weight");
  const int height = x.height(), width = x.width();
  std::vector<double> table(static_cast<size_t>(height) * width, 0.0);
  auto idx = [width](Pixel q) { return static_cast<size_t>(q.row - 1) * width + (q.col - 1); };
  for (int r = 1; r <= height; ++r)
    for (int c = 1; c <= width; ++c) {
      Pixel q{r, c};
      // Direct term: the weight at index a multiplies x at q - (k,k) + a.
      int sy = q.row - k + a.row, sx = q.col - k + a.col;
      double acc = (sy >= 1 && sx >= 1) ? x.at(0, sy - 1, sx - 1) : 0.0;
      for (Pixel s : delta_set(q, k, height, width))
        acc += w.at(0, 0, k - 1 - (q.row - s.row), k - 1 - (q.col - s.col)) * table[idx(s)];
      table[idx(q)] = -acc;
    }
  return table;
}

double weight_jacobian_recursive(Pixel q, Pixel a, const ImageTensor& x, const Kernel& w) {
  if (q.row < 1 || q.row > x.height() || q.col < 1 || q.col > x.width())
    throw std::invalid_argument("weight_jacobian_recursive: q out of bounds");
  auto table = weight_jacobian_table_recursive(a, x, w);
  return table[static_cast<size_t>(q.row - 1) * x.width() + (q.col - 1)];
}

}  // namespace invflow
