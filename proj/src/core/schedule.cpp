#include "core/schedule.hpp"

#include <algorithm>

namespace invflow {

std::vector<Pixel> delta_set(Pixel p, int k, int height, int width) {
  if (k < 1) throw std::invalid_argument("delta_set: k must be positive");
  if (p.row < 1 || p.row > height || p.col < 1 || p.col > width)
    throw std::invalid_argument("delta_set: pixel out of bounds");
  std::vector<Pixel> out;
  out.reserve(static_cast<size_t>(k) * k - 1);
  int r0 = std::max(1, p.row - k + 1);
  int c0 = std::max(1, p.col - k + 1);
  for (int r = r0; r <= p.row; ++r)
    for (int c = c0; c <= p.col; ++c)
      if (r != p.row || c != p.col) out.push_back(Pixel{r, c});
  return out;
}

DiagonalSchedule::DiagonalSchedule(int height, int width) : height_(height), width_(width) {
  if (height < 1 || width < 1)
    throw std::invalid_argument("DiagonalSchedule: extents must be positive");
  pixels_.reserve(static_cast<size_t>(height) * width);
  offsets_.reserve(static_cast<size_t>(height) + width);
  offsets_.push_back(0);
  // Diagonal d collects pixels with row + col == d; row ascends within it.
  for (int d = 2; d <= height + width; ++d) {
    int r_lo = std::max(1, d - width);
    int r_hi = std::min(height, d - 1);
    for (int r = r_lo; r <= r_hi; ++r) pixels_.push_back(Pixel{r, d - r});
    offsets_.push_back(pixels_.size());
  }
}

}  // namespace invflow
