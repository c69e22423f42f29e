#include "core/tensor.hpp"

namespace invflow {

Kernel mask_project(Kernel w) {
  if (w.c_out() != w.c_in())
    throw std::invalid_argument("mask_project: kernel must have c_out == c_in");
  int c = w.c_out();
  int k = w.k();
  for (int co = 0; co < c; ++co)
    for (int ci = 0; ci < c; ++ci)
      w.at(co, ci, k - 1, k - 1) = (co == ci) ? 1.0 : 0.0;
  return w;
}

Kernel masked_identity_kernel(int channels, int k) {
  return mask_project(Kernel(channels, channels, k));
}

}  // namespace invflow
