#pragma once

#include "core/schedule.hpp"
#include "core/tensor.hpp"
#include "core/threadpool.hpp"

namespace invflow {

/// Masked causal convolution y = M x. Every output pixel reads the k x k
/// window ending at itself (top-left zero padding, never materialised); the
/// pinned bottom-right tap makes the dense operator unit lower triangular in
/// raster order, so the map is volume preserving.
/// pre: w square in channels and mask-projected; x.channels == w.c_in.
ImageTensor conv_forward(const ImageTensor& x, const Kernel& w, ThreadPool* pool = nullptr);

/// Exact inverse of conv_forward: solves M x = y by a wavefront sweep over
/// anti-diagonals. Pixels within one diagonal are independent; the sweep costs
/// O(m k^2) work per channel pair across the image.
ImageTensor inv_conv_solve(const ImageTensor& y, const Kernel& w, ThreadPool* pool = nullptr);

/// Gradient of inv_conv_solve w.r.t. its input y: solves M^T u = grad_x by the
/// reverse wavefront sweep (last diagonal first).
ImageTensor input_grad(const ImageTensor& grad_x, const Kernel& w, ThreadPool* pool = nullptr);

/// Gradient of inv_conv_solve w.r.t. the kernel, given u = input_grad(...)
/// and the solve output x: a shifted correlation with a leading minus sign.
/// Masked tap entries come back exactly zero.
Kernel weight_grad(const ImageTensor& u, const ImageTensor& x, const Kernel& w,
                   ThreadPool* pool = nullptr);

struct ConvGradients {
  ImageTensor grad_input;
  Kernel grad_weights;
};

/// Full backward pass of x = inv_conv_solve(y, w): grad_input = dL/dy and
/// grad_weights = dL/dw, given grad_x = dL/dx and the solve output x.
ConvGradients inv_conv_backward(const ImageTensor& grad_x, const ImageTensor& x, const Kernel& w,
                                ThreadPool* pool = nullptr);

/// Reference recursion for single-channel Jacobian entries d x_q / d y_p of
/// the solve, memoised over one raster pass. Used as an oracle for input_grad.
double jacobian_entry_recursive(Pixel q, Pixel p, const Kernel& w, int height, int width);

/// All entries d x_q / d y_p for a fixed p, in raster order over q.
std::vector<double> jacobian_table_recursive(Pixel p, const Kernel& w, int height, int width);

/// Reference recursion for single-channel weight sensitivities d x_q / d W_a,
/// a given 1-based; throws if a is the pinned tap (k, k).
double weight_jacobian_recursive(Pixel q, Pixel a, const ImageTensor& x, const Kernel& w);

/// All entries d x_q / d W_a for a fixed kernel index a, raster order over q.
std::vector<double> weight_jacobian_table_recursive(Pixel a, const ImageTensor& x, const Kernel& w);

}  // namespace invflow
