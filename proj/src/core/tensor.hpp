#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace invflow {

/// 1-based pixel coordinate; (1,1) is the top-left pixel of the image.
struct Pixel {
  int row = 0;
  int col = 0;

  friend bool operator==(Pixel a, Pixel b) { return a.row == b.row && a.col == b.col; }
  friend bool operator!=(Pixel a, Pixel b) { return !(a == b); }
};

/// Componentwise partial order on pixels: p <= q iff both coordinates are <=.
inline bool pixel_leq(Pixel p, Pixel q) { return p.row <= q.row && p.col <= q.col; }

/// Dense (channels, height, width) activation tensor, double precision,
/// row-major within each channel plane.
class ImageTensor {
 public:
  ImageTensor() = default;

  ImageTensor(int channels, int height, int width)
      : channels_(channels), height_(height), width_(width) {
    if (channels < 1 || height < 1 || width < 1)
      throw std::invalid_argument("ImageTensor: extents must be positive");
    data_.assign(static_cast<size_t>(channels) * height * width, 0.0);
  }

  static ImageTensor from_data(int channels, int height, int width, std::vector<double> values) {
    ImageTensor t(channels, height, width);
    if (values.size() != t.data_.size())
      throw std::invalid_argument("ImageTensor::from_data: value count does not match extents");
    t.data_ = std::move(values);
    return t;
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const ImageTensor& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  // 0-based indexing; Pixel{r,c} corresponds to at(ch, r - 1, c - 1).
  double& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void fill(double v) { data_.assign(data_.size(), v); }

 private:
  int64_t index(int c, int y, int x) const {
    return (static_cast<int64_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// (c_out, c_in, k, k) convolution weights, 0-based at(); tap (k-1, k-1) is the
/// bottom-right kernel position that the invertibility mask pins to the
/// identity across channels.
class Kernel {
 public:
  Kernel() = default;

  Kernel(int c_out, int c_in, int k) : c_out_(c_out), c_in_(c_in), k_(k) {
    if (c_out < 1 || c_in < 1 || k < 1)
      throw std::invalid_argument("Kernel: extents must be positive");
    w_.assign(static_cast<size_t>(c_out) * c_in * k * k, 0.0);
  }

  static Kernel from_data(int c_out, int c_in, int k, std::vector<double> values) {
    Kernel w(c_out, c_in, k);
    if (values.size() != w.w_.size())
      throw std::invalid_argument("Kernel::from_data: value count does not match extents");
    w.w_ = std::move(values);
    return w;
  }

  int c_out() const { return c_out_; }
  int c_in() const { return c_in_; }
  int k() const { return k_; }
  int64_t size() const { return static_cast<int64_t>(w_.size()); }

  double& at(int co, int ci, int i, int j) { return w_[index(co, ci, i, j)]; }
  double at(int co, int ci, int i, int j) const { return w_[index(co, ci, i, j)]; }

  std::vector<double>& weights() { return w_; }
  const std::vector<double>& weights() const { return w_; }

  /// Exact check of the invertibility mask: W[c,c,k-1,k-1] == 1 and
  /// W[c,c',k-1,k-1] == 0 for c != c'. Requires square channel extents.
  bool satisfies_mask() const {
    if (c_out_ != c_in_) return false;
    for (int co = 0; co < c_out_; ++co)
      for (int ci = 0; ci < c_in_; ++ci) {
        double want = (co == ci) ? 1.0 : 0.0;
        if (at(co, ci, k_ - 1, k_ - 1) != want) return false;
      }
    return true;
  }

  bool all_finite() const {
    for (double v : w_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  int64_t index(int co, int ci, int i, int j) const {
    return ((static_cast<int64_t>(co) * c_in_ + ci) * k_ + i) * k_ + j;
  }

  int c_out_ = 0;
  int c_in_ = 0;
  int k_ = 0;
  std::vector<double> w_;
};

/// Overwrites the bottom-right tap with the channel identity and returns the
/// result. Throws if the kernel is not square in channels.
Kernel mask_project(Kernel w);

/// Identity operator kernel: zeros everywhere except the pinned tap.
Kernel masked_identity_kernel(int channels, int k);

}  // namespace invflow
