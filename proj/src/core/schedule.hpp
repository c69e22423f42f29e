#pragma once

#include <span>
#include <vector>

#include "core/tensor.hpp"

namespace invflow {

/// Strict masked-window neighbourhood of p: every in-bounds pixel q != p with
/// 0 <= p.row - q.row < k and 0 <= p.col - q.col < k. These are exactly the
/// pixels the masked convolution reads besides p itself.
std::vector<Pixel> delta_set(Pixel p, int k, int height, int width);

/// Anti-diagonal wavefront over an height x width grid. Diagonal i (0-based)
/// holds every pixel with row + col == i + 2, in row-ascending order. All of
/// delta_set(p) lies on strictly earlier diagonals, so the pixels within one
/// diagonal can be solved independently.
class DiagonalSchedule {
 public:
  DiagonalSchedule(int height, int width);

  int height() const { return height_; }
  int width() const { return width_; }
  int diagonal_count() const { return static_cast<int>(offsets_.size()) - 1; }

  std::span<const Pixel> diagonal(int i) const {
    return std::span<const Pixel>(pixels_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]);
  }

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<Pixel> pixels_;
  std::vector<size_t> offsets_;
};

inline DiagonalSchedule build_schedule(int height, int width) {
  return DiagonalSchedule(height, width);
}

}  // namespace invflow
