#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace invflow {

enum class DataErrorKind { Io, BadMagic, Truncated, DimensionMismatch };

class DataError : public std::runtime_error {
 public:
  DataError(DataErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  DataErrorKind kind() const { return kind_; }

 private:
  DataErrorKind kind_;
};

/// Quantised image collection; every image is channels*height*width bytes.
struct Dataset {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::vector<uint8_t>> images;
  std::string source;

  size_t item_bytes() const {
    return static_cast<size_t>(channels) * height * width;
  }
};

/// Reads big-endian IDX image files (magic 0x00000803). When a labels path is
/// given, its magic (0x00000801) and count are validated against the images.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path = {});

enum class SynthKind { GaussianBlobs, Checkerboard, Constant };

SynthKind synth_kind_from_string(const std::string& s);
std::string to_string(SynthKind kind);

Dataset synth_dataset(SynthKind kind, int n, int channels, int height, int width, uint64_t seed);

/// Uniform dequantisation to [0, 1): (byte + u) / 256 with u ~ U[0, 1).
/// Quantising back with floor(256 x) recovers the bytes exactly.
ImageTensor dequantize_item(const std::vector<uint8_t>& bytes, int channels, int height, int width,
                            std::mt19937_64& rng);

/// Bits already spent on the 256-level quantisation grid; added to bpd.
constexpr double kDequantOffsetBits = 8.0;

/// The model works on centred data: x in [-0.5, 0.5).
inline void center_in_place(ImageTensor& t) {
  for (auto& v : t.data()) v -= 0.5;
}

/// Centred model output back to bytes: clamp(floor((x + 0.5) * 256)).
std::vector<uint8_t> quantize_centred(const ImageTensor& t);

/// Writes a binary PGM (1 channel) or PPM (3 channels) image.
void write_image_u8(const std::string& path, int channels, int height, int width,
                    const std::vector<uint8_t>& interleaved_rows);

/// Tiles n same-shaped u8 images (channel-planar) into one channel-interleaved
/// grid image, row-major with a 1px separator, for write_image_u8.
struct TiledImage {
  int channels = 0, height = 0, width = 0;
  std::vector<uint8_t> pixels;  // interleaved
};
TiledImage tile_images(const std::vector<std::vector<uint8_t>>& images, int channels, int height,
                       int width);

}  // namespace invflow
