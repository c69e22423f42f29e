#include "oracle/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace invflow {

namespace {

constexpr double kPivotTiny = 1e-300;

void check_square(const DenseOperator& m, const char* who) {
  if (m.n < 1 || m.a.size() != static_cast<size_t>(m.n) * m.n)
    throw std::invalid_argument(std::string(who) + ": malformed dense operator");
}

bool is_lower_triangular(const DenseOperator& m) {
  for (int r = 0; r < m.n; ++r)
    for (int c = r + 1; c < m.n; ++c)
      if (m.at(r, c) != 0.0) return false;
  return true;
}

bool is_upper_triangular(const DenseOperator& m) {
  for (int r = 0; r < m.n; ++r)
    for (int c = 0; c < r; ++c)
      if (m.at(r, c) != 0.0) return false;
  return true;
}

// In-place LU with partial pivoting; returns the permutation sign, throws on
// a numerically singular pivot.
double lu_decompose(DenseOperator& m) {
  double sign = 1.0;
  for (int col = 0; col < m.n; ++col) {
    int piv = col;
    double best = std::abs(m.at(col, col));
    for (int r = col + 1; r < m.n; ++r) {
      double v = std::abs(m.at(r, col));
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (best < kPivotTiny) throw std::runtime_error("lu_decompose: singular matrix");
    if (piv != col) {
      for (int c = 0; c < m.n; ++c) std::swap(m.at(piv, c), m.at(col, c));
      sign = -sign;
    }
    for (int r = col + 1; r < m.n; ++r) {
      double f = m.at(r, col) / m.at(col, col);
      m.at(r, col) = f;
      for (int c = col + 1; c < m.n; ++c) m.at(r, c) -= f * m.at(col, c);
    }
  }
  return sign;
}

}  // namespace

std::vector<double> raster_vec(const ImageTensor& t) {
  std::vector<double> v(static_cast<size_t>(t.size()));
  size_t i = 0;
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x)
      for (int c = 0; c < t.channels(); ++c) v[i++] = t.at(c, y, x);
  return v;
}

ImageTensor from_raster_vec(std::span<const double> v, int channels, int height, int width) {
  ImageTensor t(channels, height, width);
  if (v.size() != static_cast<size_t>(t.size()))
    throw std::invalid_argument("from_raster_vec: length does not match extents");
  size_t i = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c) t.at(c, y, x) = v[i++];
  return t;
}

DenseOperator build_operator_matrix(const Kernel& w, int channels, int height, int width) {
  if (w.c_out() != channels || w.c_in() != channels)
    throw std::invalid_argument("build_operator_matrix: kernel channels do not match");
  int64_t n64 = static_cast<int64_t>(channels) * height * width;
  if (n64 > 4096) throw std::invalid_argument("build_operator_matrix: n > 4096 guard");
  const int n = static_cast<int>(n64), k = w.k();
  DenseOperator m;
  m.n = n;
  m.a.assign(static_cast<size_t>(n) * n, 0.0);
  auto idx = [channels, width](int c, int y, int x) { return (y * width + x) * channels + c; };
  for (int py = 0; py < height; ++py)
    for (int px = 0; px < width; ++px)
      for (int i = 0; i < k; ++i) {
        int sy = py - (k - 1) + i;
        if (sy < 0) continue;
        for (int j = 0; j < k; ++j) {
          int sx = px - (k - 1) + j;
          if (sx < 0) continue;
          for (int co = 0; co < channels; ++co)
            for (int ci = 0; ci < channels; ++ci)
              m.at(idx(co, py, px), idx(ci, sy, sx)) = w.at(co, ci, i, j);
        }
      }
  return m;
}

std::vector<double> solve_unit_lower(const DenseOperator& m, std::span<const double> y) {
  check_square(m, "solve_unit_lower");
  if (y.size() != static_cast<size_t>(m.n))
    throw std::invalid_argument("solve_unit_lower: rhs length mismatch");
  for (int r = 0; r < m.n; ++r)
    if (m.at(r, r) != 1.0) throw std::invalid_argument("solve_unit_lower: non-unit diagonal");
  std::vector<double> x(y.begin(), y.end());
  for (int r = 0; r < m.n; ++r) {
    double acc = 0.0;
    for (int c = 0; c < r; ++c) acc += m.at(r, c) * x[c];
    x[r] -= acc;
  }
  return x;
}

std::vector<double> gaussian_elimination_solve(const DenseOperator& m, std::span<const double> y) {
  check_square(m, "gaussian_elimination_solve");
  if (m.n > 2048) throw std::invalid_argument("gaussian_elimination_solve: n > 2048 guard");
  if (y.size() != static_cast<size_t>(m.n))
    throw std::invalid_argument("gaussian_elimination_solve: rhs length mismatch");
  DenseOperator a = m;
  std::vector<double> b(y.begin(), y.end());
  const int n = a.n;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    double best = std::abs(a.at(col, col));
    for (int r = col + 1; r < n; ++r) {
      double v = std::abs(a.at(r, col));
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (best < kPivotTiny) throw std::runtime_error("gaussian_elimination_solve: singular matrix");
    if (piv != col) {
      for (int c = col; c < n; ++c) std::swap(a.at(piv, c), a.at(col, c));
      std::swap(b[piv], b[col]);
    }
    for (int r = col + 1; r < n; ++r) {
      double f = a.at(r, col) / a.at(col, col);
      for (int c = col + 1; c < n; ++c) a.at(r, c) -= f * a.at(col, c);
      b[r] -= f * b[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < n; ++c) acc -= a.at(r, c) * b[c];
    b[r] = acc / a.at(r, r);
  }
  return b;
}

DenseOperator dense_inverse(const DenseOperator& m) {
  check_square(m, "dense_inverse");
  if (m.n > 1024) throw std::invalid_argument("dense_inverse: n > 1024 guard");
  const int n = m.n;
  DenseOperator a = m;
  DenseOperator inv;
  inv.n = n;
  inv.a.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) inv.at(i, i) = 1.0;
  // Gauss-Jordan on [A | I].
  for (int col = 0; col < n; ++col) {
    int piv = col;
    double best = std::abs(a.at(col, col));
    for (int r = col + 1; r < n; ++r) {
      double v = std::abs(a.at(r, col));
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (best < kPivotTiny) throw std::runtime_error("dense_inverse: singular matrix");
    if (piv != col)
      for (int c = 0; c < n; ++c) {
        std::swap(a.at(piv, c), a.at(col, c));
        std::swap(inv.at(piv, c), inv.at(col, c));
      }
    double d = a.at(col, col);
    for (int c = 0; c < n; ++c) {
      a.at(col, c) /= d;
      inv.at(col, c) /= d;
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      double f = a.at(r, col);
      if (f == 0.0) continue;
      for (int c = 0; c < n; ++c) {
        a.at(r, c) -= f * a.at(col, c);
        inv.at(r, c) -= f * inv.at(col, c);
      }
    }
  }
  return inv;
}

double dense_det(const DenseOperator& m) {
  check_square(m, "dense_det");
  if (is_lower_triangular(m) || is_upper_triangular(m)) {
    double d = 1.0;
    for (int r = 0; r < m.n; ++r) d *= m.at(r, r);
    return d;
  }
  return dense_det_lu(m);
}

double dense_det_lu(const DenseOperator& m) {
  check_square(m, "dense_det_lu");
  DenseOperator a = m;
  double sign;
  try {
    sign = lu_decompose(a);
  } catch (const std::runtime_error&) {
    return 0.0;
  }
  double d = sign;
  for (int r = 0; r < a.n; ++r) d *= a.at(r, r);
  return d;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> point, double h,
                                     const std::vector<char>* skip) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be positive");
  if (skip && skip->size() != point.size())
    throw std::invalid_argument("finite_diff_grad: skip mask length mismatch");
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> g(x.size(), 0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    if (skip && (*skip)[i]) continue;
    double keep = x[i];
    x[i] = keep + h;
    double up = loss(x);
    x[i] = keep - h;
    double dn = loss(x);
    x[i] = keep;
    if (!std::isfinite(up) || !std::isfinite(dn))
      throw std::runtime_error("finite_diff_grad: loss returned a non-finite value");
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

}  // namespace invflow
