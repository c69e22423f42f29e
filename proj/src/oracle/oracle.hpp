#pragma once

#include <functional>
#include <span>

#include "core/tensor.hpp"

namespace invflow {

/// Dense n x n materialisation of the masked convolution operator, row-major.
/// Only for verification; guarded to small n.
struct DenseOperator {
  int n = 0;
  std::vector<double> a;

  double& at(int r, int c) { return a[static_cast<size_t>(r) * n + c]; }
  double at(int r, int c) const { return a[static_cast<size_t>(r) * n + c]; }
};

/// Raster flattening used by the dense oracle: pixel-major, channel-minor,
/// index (c, y, x) -> (y * width + x) * channels + c.
std::vector<double> raster_vec(const ImageTensor& t);
ImageTensor from_raster_vec(std::span<const double> v, int channels, int height, int width);

/// Materialises M with vec(y) = M vec(x) in raster order. The invertibility
/// mask makes M unit lower triangular. Guard: n <= 4096.
DenseOperator build_operator_matrix(const Kernel& w, int channels, int height, int width);

/// Forward substitution for unit lower triangular systems; throws if any
/// diagonal entry differs from exactly 1.
std::vector<double> solve_unit_lower(const DenseOperator& m, std::span<const double> y);

/// Textbook Gaussian elimination with partial pivoting, the O(n^3) baseline.
/// Guard: n <= 2048.
std::vector<double> gaussian_elimination_solve(const DenseOperator& m, std::span<const double> y);

/// Dense inverse via elimination on an augmented identity. Guard: n <= 1024.
DenseOperator dense_inverse(const DenseOperator& m);

/// Determinant. Triangular matrices take the structural path (exact product
/// of the stored diagonal, so unit triangular gives exactly 1); everything
/// else goes through LU.
double dense_det(const DenseOperator& m);

/// Determinant via LU with partial pivoting, no structural shortcut.
double dense_det_lu(const DenseOperator& m);

/// Central finite differences of a scalar loss, step h per coordinate.
/// skip[i] true leaves gradient entry i at zero (used for pinned kernel taps).
/// Throws if the loss comes back non-finite.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& loss,
                                     std::span<const double> point, double h = 1e-5,
                                     const std::vector<char>* skip = nullptr);

}  // namespace invflow
