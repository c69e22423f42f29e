#pragma once

#include "core/tensor.hpp"
#include "core/threadpool.hpp"

namespace invflow {

/// Same-padded standard convolution used inside coupling networks; odd k only.
/// Kernel shape (c_out, c_in, k, k); bias has c_out entries.
ImageTensor std_conv_forward(const ImageTensor& x, const Kernel& w, const std::vector<double>& bias,
                             ThreadPool* pool = nullptr);

struct StdConvGradients {
  ImageTensor grad_input;
  Kernel grad_weights;
  std::vector<double> grad_bias;
};

/// Backward pass of std_conv_forward: grad_input is the correlation of grad_y
/// with the spatially flipped, channel-transposed kernel; grad_weights the
/// cross-correlation of grad_y with x; grad_bias the per-channel sum.
StdConvGradients std_conv_backward(const ImageTensor& grad_y, const ImageTensor& x, const Kernel& w,
                                   ThreadPool* pool = nullptr);

}  // namespace invflow
