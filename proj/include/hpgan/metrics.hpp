#pragma once

#include "hpgan/init.hpp"
#include "hpgan/ops.hpp"
#include "hpgan/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

/// Sample-quality metrics on a seeded surrogate embedding. Values are not comparable with
/// Inception-based numbers.
namespace hpgan::metrics {

using Matrix = Eigen::MatrixXd;  // rows are samples
using Vector = Eigen::VectorXd;

/// Frozen random conv net: three stride-2 stages, pooled and concatenated, then a random linear
/// map to `dim` outputs.
class Embedder {
 public:
  explicit Embedder(Index dim = 64, std::uint64_t seed = 7);

  template <typename Scalar>
  Matrix operator()(const Tensor<Scalar>& images) const;

  Index dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

 private:
  Index dim_;
  std::uint64_t seed_;
  std::vector<ag::Variable<double>> convs_;
  ag::Variable<double> proj_;
};

struct EmbeddingStats {
  Vector mean;
  Matrix cov;  // unbiased
  Index count = 0;

  static EmbeddingStats from(const Matrix& x);
};

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), clamped at 0.
double frechet_distance(const EmbeddingStats& a, const EmbeddingStats& b);

/// Unbiased MMD^2 with kernel (x.y / d + 1)^3.
double kernel_distance(const Matrix& a, const Matrix& b);

struct PrecisionRecall {
  double precision = 0;
  double recall = 0;
};

/// k-NN manifold precision and recall; a point is covered when within (inclusive) the k-th
/// neighbor radius of some reference point.
PrecisionRecall precision_recall(const Matrix& real, const Matrix& gen, int k = 3);

enum class PplMode { Full, End };

/// Maps latent rows [n, z_dim] to feature rows.
using LatentFeatureFn = std::function<Matrix(const Matrix&)>;

/// Spherical interpolation between latents a and b, not renormalized.
Vector slerp(const Vector& a, const Vector& b, double t);

/// Mean over paths of |f(slerp(z1, z2, t)) - f(slerp(z1, z2, t + eps))|^2 / eps^2. Full samples
/// t ~ U(0, 1); End picks t in {0, 1}.
double perceptual_path_length(const LatentFeatureFn& f, Index z_dim, double eps, Index paths, PplMode mode,
                              RngStream& rng, Index batch = 256);

/// Fraction of per-sample summed real logits that are strictly positive.
double signed_logit_fraction(const std::vector<double>& logits);

struct MetricsReport {
  std::int64_t step = 0;
  std::int64_t images_seen = 0;
  double fid = 0, kid = 0, precision = 0, recall = 0, ppl_full = 0, ppl_end = 0;
  double signed_logit_fraction = 0;
  double d_loss = 0, g_loss = 0, dc_real = 0, dc_fake = 0, ft_loss = 0;
  Index real_count = 0, fake_count = 0;
  std::uint64_t embed_seed = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

/// Nine significant digits, as used in the metrics CSV.
std::string format_number(double x);

}  // namespace hpgan::metrics
