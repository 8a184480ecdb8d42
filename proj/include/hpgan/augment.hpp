#pragma once

#include "hpgan/ops.hpp"
#include "hpgan/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace hpgan::augment {

/// Differentiable augmentation policy (color jitter, translation, cutout).
struct AugmentPolicy {
  bool color = true;
  bool translation = true;
  bool cutout = true;
  double translation_ratio = 0.125;
  double cutout_ratio = 0.5;
  double brightness = 0.5;                 // additive shift drawn from [-b, b]
  double saturation_lo = 0.0, saturation_hi = 2.0;
  double contrast_lo = 0.5, contrast_hi = 1.5;

  void validate() const;
  bool any() const { return color || translation || cutout; }

  /// Comma-separated op list, e.g. "color,translation,cutout"; "" or "none" disables all.
  static AugmentPolicy parse(const std::string& ops);
  std::string ops_string() const;
};

/// Per-sample random parameters of one augmentation draw.
struct AugmentParams {
  std::vector<double> brightness, saturation, contrast;
  std::vector<int> shift_x, shift_y;
  std::vector<int> cutout_x, cutout_y;
  int cutout_size = 0;
};

AugmentParams draw_params(const AugmentPolicy& policy, Index batch, Index height, Index width, RngStream& rng);

template <typename Scalar>
ag::Variable<Scalar> apply_augment(const ag::Variable<Scalar>& batch, const AugmentPolicy& policy,
                                   const AugmentParams& params);

/// Draws per-sample parameters from rng and applies them. Output shape equals input shape.
template <typename Scalar>
ag::Variable<Scalar> diff_augment(const ag::Variable<Scalar>& batch, const AugmentPolicy& policy, RngStream& rng) {
  if (!policy.any()) return batch;
  return apply_augment(batch, policy, draw_params(policy, batch.dim(0), batch.dim(2), batch.dim(3), rng));
}

/// Normalized 1-D Gaussian taps, radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// n x n matrix of the 1-D Gaussian filter with reflect padding folded in.
template <typename Scalar>
MatrixX<Scalar> gaussian_filter_matrix(Index n, double sigma);

/// Separable Gaussian blur; sigma = 0 returns the input unchanged.
template <typename Scalar>
ag::Variable<Scalar> gaussian_blur(const ag::Variable<Scalar>& batch, double sigma);

struct BlurSchedule {
  double sigma_max = 2.0;
  std::int64_t images = 200000;
  bool ramp = false;  // linear decay to 0 instead of a hard cutoff
};

/// Discriminator blur sigma after `images_seen` training images; 0 from `images` on.
double blur_sigma(std::int64_t images_seen, const BlurSchedule& schedule);

/// z + eps with eps[b,i] ~ N(0, (l1 |z[b,i]|)^2), or z + l1 |z| when deterministic.
template <typename Scalar>
Tensor<Scalar> latent_perturb(const Tensor<Scalar>& z, double l1, RngStream& rng, bool deterministic = false);

/// Horizontal mirror of every image of an NCHW batch.
template <typename Scalar>
Tensor<Scalar> xflip(const Tensor<Scalar>& images);

/// Appends the mirrored copies: items N..2N-1 mirror items 0..N-1.
template <typename Scalar>
Tensor<Scalar> xflip_amplify(const Tensor<Scalar>& images);

}  // namespace hpgan::augment
