#pragma once

#include <Eigen/Dense>

#include <string>

/// Self-supervised objectives on paired embedding batches (rows = samples, columns = dims).
/// Always evaluated in double precision; callers training in float convert at the boundary.
namespace hpgan::ssl {

using Matrix = Eigen::MatrixXd;

inline constexpr double kStdFloor = 1e-12;

/// Centers each column and divides by its population standard deviation, floored at eps.
Matrix standardize_columns(const Matrix& z, double eps = kStdFloor);

/// Column-normalized cross-correlation: C(i,j) = <a_i, b_j> / (|a_i| |b_j|), norms floored at eps.
/// For standardized inputs this equals A^T B / N.
Matrix cross_correlation(const Matrix& za, const Matrix& zb, double eps = kStdFloor);

/// Redundancy-reduction loss: sum_i (1 - C_ii)^2 + lambda1 * sum_{i != j} C_ij^2.
double barlow_twins_loss(const Matrix& c, double lambda1);

struct VicRegWeights {
  double invariance = 25.0;
  double variance = 25.0;
  double covariance = 1.0;
  double target_std = 1.0;
  double eps = 1e-4;  // inside the square root of the variance
};

struct VicRegTerms {
  double invariance = 0;  // mean squared difference
  double variance = 0;    // hinge on per-column std, summed over both branches
  double covariance = 0;  // squared off-diagonal covariance / dim, summed over both branches
  double total = 0;
};

VicRegTerms vicreg_terms(const Matrix& za, const Matrix& zb, const VicRegWeights& w);
double vicreg_loss(const Matrix& za, const Matrix& zb, const VicRegWeights& w = {});

/// Normalized-temperature cross entropy over the 2N views; positives are (k, k + N).
double ntxent_loss(const Matrix& za, const Matrix& zb, double temperature);

enum class Objective { BarlowTwins, VicReg, NtXent };

struct ObjectiveSpec {
  Objective kind = Objective::BarlowTwins;
  double lambda1 = 0.005;
  VicRegWeights vicreg{};
  double temperature = 0.5;

  void validate() const;
};

Objective parse_objective(const std::string& name);
std::string objective_name(Objective kind);

/// Loss value with gradients with respect to both raw embedding batches.
struct LossWithGrad {
  double value = 0;
  Matrix grad_a;
  Matrix grad_b;
};

/// Barlow Twins on raw embeddings: standardize both, cross-correlate, then the loss above.
LossWithGrad barlow_twins_objective(const Matrix& za, const Matrix& zb, double lambda1);
LossWithGrad vicreg_objective(const Matrix& za, const Matrix& zb, const VicRegWeights& w);
LossWithGrad ntxent_objective(const Matrix& za, const Matrix& zb, double temperature);

LossWithGrad evaluate(const ObjectiveSpec& spec, const Matrix& za, const Matrix& zb);

}  // namespace hpgan::ssl
