#include "data/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace invflow {

namespace {

uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DataError(DataErrorKind::Truncated, path + ": truncated header");
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream in(images_path, std::ios::binary);
  if (!in) throw DataError(DataErrorKind::Io, images_path + ": cannot open");
  if (read_be32(in, images_path) != kIdxImagesMagic)
    throw DataError(DataErrorKind::BadMagic, images_path + ": not an IDX image file");
  uint32_t count = read_be32(in, images_path);
  uint32_t rows = read_be32(in, images_path);
  uint32_t cols = read_be32(in, images_path);
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096)
    throw DataError(DataErrorKind::DimensionMismatch, images_path + ": implausible image extents");
  Dataset d;
  d.channels = 1;
  d.height = static_cast<int>(rows);
  d.width = static_cast<int>(cols);
  d.source = images_path;
  d.images.reserve(count);
  size_t item = static_cast<size_t>(rows) * cols;
  for (uint32_t i = 0; i < count; ++i) {
    std::vector<uint8_t> img(item);
    if (!in.read(reinterpret_cast<char*>(img.data()), static_cast<std::streamsize>(item)))
      throw DataError(DataErrorKind::Truncated,
                      images_path + ": image data ends at item " + std::to_string(i));
    d.images.push_back(std::move(img));
  }

  if (!labels_path.empty()) {
    std::ifstream lin(labels_path, std::ios::binary);
    if (!lin) throw DataError(DataErrorKind::Io, labels_path + ": cannot open");
    if (read_be32(lin, labels_path) != kIdxLabelsMagic)
      throw DataError(DataErrorKind::BadMagic, labels_path + ": not an IDX label file");
    uint32_t lcount = read_be32(lin, labels_path);
    if (lcount != count)
      throw DataError(DataErrorKind::DimensionMismatch,
                      labels_path + ": label count " + std::to_string(lcount) +
                          " does not match image count " + std::to_string(count));
  }
  return d;
}

SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "gaussian-blobs") return SynthKind::GaussianBlobs;
  if (s == "checkerboard") return SynthKind::Checkerboard;
  if (s == "constant") return SynthKind::Constant;
  throw std::invalid_argument("unknown synthetic dataset kind: " + s);
}

std::string to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::GaussianBlobs: return "gaussian-blobs";
    case SynthKind::Checkerboard: return "checkerboard";
    case SynthKind::Constant: return "constant";
  }
  return "?";
}

Dataset synth_dataset(SynthKind kind, int n, int channels, int height, int width, uint64_t seed) {
  if (n < 1 || channels < 1 || height < 1 || width < 1)
    throw std::invalid_argument("synth_dataset: extents must be positive");
  Dataset d;
  d.channels = channels;
  d.height = height;
  d.width = width;
  d.source = "synthetic:" + to_string(kind);
  d.images.reserve(static_cast<size_t>(n));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int i = 0; i < n; ++i) {
    std::vector<uint8_t> img(d.item_bytes(), 0);
    switch (kind) {
      case SynthKind::GaussianBlobs: {
        // Two soft bumps per channel on a dim background.
        for (int c = 0; c < channels; ++c)
          for (int b = 0; b < 2; ++b) {
            double cy = unit(rng) * (height - 1);
            double cx = unit(rng) * (width - 1);
            double sigma = (0.10 + 0.15 * unit(rng)) * std::max(height, width);
            double amp = 0.4 + 0.6 * unit(rng);
            for (int y = 0; y < height; ++y)
              for (int x = 0; x < width; ++x) {
                double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                double v = amp * std::exp(-d2 / (2.0 * sigma * sigma));
                size_t at = (static_cast<size_t>(c) * height + y) * width + x;
                double cur = img[at] / 255.0 + v;
                img[at] = static_cast<uint8_t>(std::min(255.0, std::floor(cur * 255.0 + 0.5)));
              }
          }
        break;
      }
      case SynthKind::Checkerboard: {
        int tile = std::max(1, height / 4);
        int phase = static_cast<int>(rng() % 2);
        auto lo = static_cast<uint8_t>(rng() % 97);          // [0, 96]
        auto hi = static_cast<uint8_t>(160 + rng() % 96);    // [160, 255]
        for (int c = 0; c < channels; ++c)
          for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
              bool on = ((y / tile + x / tile) % 2) == phase;
              img[(static_cast<size_t>(c) * height + y) * width + x] = on ? hi : lo;
            }
        break;
      }
      case SynthKind::Constant: {
        auto v = static_cast<uint8_t>(rng() % 256);
        std::fill(img.begin(), img.end(), v);
        break;
      }
    }
    d.images.push_back(std::move(img));
  }
  return d;
}

ImageTensor dequantize_item(const std::vector<uint8_t>& bytes, int channels, int height, int width,
                            std::mt19937_64& rng) {
  ImageTensor t(channels, height, width);
  if (bytes.size() != static_cast<size_t>(t.size()))
    throw std::invalid_argument("dequantize_item: byte count does not match extents");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int64_t i = 0; i < t.size(); ++i)
    t[i] = (static_cast<double>(bytes[static_cast<size_t>(i)]) + unit(rng)) / 256.0;
  return t;
}

std::vector<uint8_t> quantize_centred(const ImageTensor& t) {
  std::vector<uint8_t> out(static_cast<size_t>(t.size()));
  for (int64_t i = 0; i < t.size(); ++i) {
    double v = std::floor((t[i] + 0.5) * 256.0);
    out[static_cast<size_t>(i)] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

void write_image_u8(const std::string& path, int channels, int height, int width,
                    const std::vector<uint8_t>& interleaved_rows) {
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("write_image_u8: only 1 (PGM) or 3 (PPM) channels supported");
  if (interleaved_rows.size() != static_cast<size_t>(channels) * height * width)
    throw std::invalid_argument("write_image_u8: pixel count does not match extents");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorKind::Io, path + ": cannot open for writing");
  out << (channels == 1 ? "P5" : "P6") << "\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(interleaved_rows.data()),
            static_cast<std::streamsize>(interleaved_rows.size()));
  if (!out) throw DataError(DataErrorKind::Io, path + ": write failed");
}

TiledImage tile_images(const std::vector<std::vector<uint8_t>>& images, int channels, int height,
                       int width) {
  if (images.empty()) throw std::invalid_argument("tile_images: no images");
  int n = static_cast<int>(images.size());
  int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  int rows = (n + cols - 1) / cols;
  TiledImage g;
  g.channels = channels;
  g.height = rows * height + (rows - 1);
  g.width = cols * width + (cols - 1);
  g.pixels.assign(static_cast<size_t>(g.channels) * g.height * g.width, 32);
  for (int i = 0; i < n; ++i) {
    const auto& img = images[static_cast<size_t>(i)];
    if (img.size() != static_cast<size_t>(channels) * height * width)
      throw std::invalid_argument("tile_images: inconsistent image sizes");
    int ty = (i / cols) * (height + 1);
    int tx = (i % cols) * (width + 1);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < channels; ++c) {
          uint8_t v = img[(static_cast<size_t>(c) * height + y) * width + x];
          size_t at = (static_cast<size_t>(ty + y) * g.width + (tx + x)) * channels + c;
          g.pixels[at] = v;
        }
  }
  return g;
}

}  // namespace invflow
