#pragma once

#include "hpgan/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hpgan::io {

/// 8-bit RGB image, interleaved rows.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Decodes PNG or JPEG by signature; errors name the file.
Image read_image(const std::string& path);
void write_png(const std::string& path, const Image& image);

/// Bilinear (half-pixel centers) resize to size x size, mapped to [-1, 1], layout [3, R, R].
Tensor<float> to_tensor(const Image& image, Index size);

/// v in [-1, 1] -> floor((v + 1) / 2 * 255 + 0.5), clamped to [0, 255].
std::uint8_t to_byte(double v);

/// Tiles images [N, 3, R, R] row-major into a ceil(sqrt(N))-column grid.
template <typename Scalar>
Image make_grid(const Tensor<Scalar>& images);

struct Dataset {
  Tensor<float> images;  // [N, 3, R, R] in [-1, 1]
  std::vector<std::string> files;
  Index size() const { return images.empty() ? 0 : images.dim(0); }
};

/// PNG/JPEG files under `path`, recursively, in sorted order. A nonzero `subset` keeps that many
/// files chosen without replacement by `seed`; `xflip` appends mirrored copies.
Dataset load_dataset(const std::string& path, Index resolution, Index subset, std::uint64_t seed, bool xflip);

/// Gaussian color blobs from two color modes on a dark background; writes `count` PNGs.
std::vector<std::string> make_synth(const std::string& dir, Index count, Index resolution, std::uint64_t seed);

}  // namespace hpgan::io
