#include "oracles.hpp"

#include "hpgan/rng.hpp"
#include "hpgan/ssl.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

namespace hpgan::ssl {
namespace {

using namespace hpgan::testing;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  RngStream rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Matrix permute_rows(const Matrix& m, const std::vector<int>& perm) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
  return out;
}

void expect_gradients(const std::function<LossWithGrad(const Matrix&, const Matrix&)>& objective, Eigen::Index n,
                      Eigen::Index d, std::uint64_t seed) {
  EXPECT_LT(objective_gradient_error(objective, n, d, seed), 1e-4) << "seed " << seed;
}

TEST(Standardize, Examples) {
  Matrix z(2, 3);
  z << 1, 5, 0, -1, 5, 2;
  const Matrix s = standardize_columns(z);
  EXPECT_DOUBLE_EQ(s(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s(1, 0), -1.0);
  EXPECT_DOUBLE_EQ(s(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(s(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(s(0, 2), -1.0);
  EXPECT_DOUBLE_EQ(s(1, 2), 1.0);
}

TEST(Standardize, Errors) {
  Matrix z(2, 1);
  z << 1, std::nan("");
  EXPECT_THROW(standardize_columns(z), std::invalid_argument);
  EXPECT_THROW(standardize_columns(Matrix::Ones(1, 3)), std::invalid_argument);
  EXPECT_THROW(standardize_columns(Matrix::Ones(2, 3), 0.0), std::invalid_argument);
}

TEST(CrossCorrelation, Examples) {
  Matrix z(2, 2);
  z << 1, 1, -1, 1;
  EXPECT_TRUE(cross_correlation(z, z).isApprox(Matrix::Identity(2, 2), 1e-15));
  z << 1, -1, -1, 1;
  Matrix expect(2, 2);
  expect << 1, -1, -1, 1;
  EXPECT_TRUE(cross_correlation(z, z).isApprox(expect, 1e-15));
}

TEST(CrossCorrelation, DuplicatedSampleStaysFinite) {
  Matrix z = Matrix::Ones(4, 3);
  z.row(0) << 0.3, -2, 7;
  for (int r = 1; r < 4; ++r) z.row(r) = z.row(0);
  const Matrix c = cross_correlation(standardize_columns(z), standardize_columns(z));
  EXPECT_TRUE(c.allFinite());
}

TEST(CrossCorrelation, MatchesOracleAndBounds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix a = standardize_columns(random_matrix(6, 5, seed));
    const Matrix b = standardize_columns(random_matrix(6, 5, seed + 50));
    const Matrix c = cross_correlation(a, b);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        EXPECT_NEAR(c(i, j), oracle_cross(a, b, i, j), 1e-12);
        EXPECT_LE(std::abs(c(i, j)), 1.0 + 1e-6);
      }
    EXPECT_TRUE(c.isApprox(a.transpose() * b / 6.0, 1e-12));
  }
}

TEST(CrossCorrelation, ShapeMismatch) {
  EXPECT_THROW(cross_correlation(Matrix::Ones(3, 2), Matrix::Ones(3, 3)), std::invalid_argument);
  EXPECT_THROW(cross_correlation(Matrix::Ones(3, 2), Matrix::Ones(4, 2)), std::invalid_argument);
}

TEST(BarlowTwins, Examples) {
  EXPECT_EQ(barlow_twins_loss(Matrix::Identity(3, 3), 0.005), 0.0);
  Matrix c(2, 2);
  c << 1, -1, -1, 1;
  EXPECT_NEAR(barlow_twins_loss(c, 0.005), 0.01, 1e-15);
  EXPECT_DOUBLE_EQ(barlow_twins_loss(Matrix::Zero(2, 2), 0.005), 2.0);
  EXPECT_THROW(barlow_twins_loss(c, 0.0), std::invalid_argument);
  EXPECT_THROW(barlow_twins_loss(Matrix::Zero(2, 3), 0.005), std::invalid_argument);
}

TEST(BarlowTwins, ZeroOnlyAtIdentity) {
  Matrix c = Matrix::Identity(4, 4);
  c(1, 2) = 1e-3;
  EXPECT_GT(barlow_twins_loss(c, 0.005), 0.0);
  c = Matrix::Identity(4, 4);
  c(3, 3) = 0.999;
  EXPECT_GT(barlow_twins_loss(c, 0.005), 0.0);
}

TEST(VicReg, Examples) {
  Matrix z(4, 2);
  z << 1, 1, -1, 1, 1, -1, -1, -1;
  z *= 2;
  EXPECT_NEAR(vicreg_loss(z, z), 0.0, 1e-15);

  VicRegWeights w;
  w.eps = 0;
  const VicRegTerms t = vicreg_terms(Matrix::Zero(2, 2), Matrix::Zero(2, 2), w);
  EXPECT_DOUBLE_EQ(w.variance * t.variance, 2 * w.variance);
  EXPECT_DOUBLE_EQ(t.invariance, 0.0);
  EXPECT_DOUBLE_EQ(t.covariance, 0.0);
}

TEST(VicReg, MatchesOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix a = random_matrix(2, 2, seed), b = random_matrix(2, 2, seed + 7);
    EXPECT_NEAR(vicreg_loss(a, b), oracle_vicreg(a, b, {}), 1e-10);
    const Matrix c = random_matrix(7, 4, seed + 3), e = random_matrix(7, 4, seed + 9);
    EXPECT_NEAR(vicreg_loss(c, e), oracle_vicreg(c, e, {}), 1e-10);
  }
}

TEST(VicReg, NonnegativeAndInvarianceVanishes) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix a = random_matrix(5, 3, seed);
    EXPECT_GE(vicreg_loss(a, random_matrix(5, 3, seed + 1)), 0.0);
    EXPECT_EQ(vicreg_terms(a, a, {}).invariance, 0.0);
  }
}

TEST(NtXent, OrthogonalPairExample) {
  Matrix z(2, 2);
  z << 1, 0, 0, 1;
  EXPECT_NEAR(ntxent_loss(z, z, 1.0), std::log(1 + 2 * std::exp(-1.0)), 1e-14);
}

TEST(NtXent, MatchesOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix a = random_matrix(3, 4, seed), b = random_matrix(3, 4, seed + 5);
    EXPECT_NEAR(ntxent_loss(a, b, 0.5), oracle_ntxent(a, b, 0.5), 1e-10);
  }
}

TEST(NtXent, RotationInvariant) {
  const Matrix a = random_matrix(5, 4, 1), b = random_matrix(5, 4, 2);
  Eigen::HouseholderQR<Matrix> qr(random_matrix(4, 4, 3));
  const Matrix q = qr.householderQ();
  EXPECT_NEAR(ntxent_loss(a * q, b * q, 0.3), ntxent_loss(a, b, 0.3), 1e-12);
}

TEST(NtXent, DegenerateRow) {
  Matrix a = random_matrix(3, 2, 1);
  a.row(1).setZero();
  try {
    ntxent_loss(a, random_matrix(3, 2, 2), 0.5);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "degenerate embedding");
  }
  EXPECT_THROW(ntxent_loss(a, a, 0.0), std::invalid_argument);
}

TEST(Objectives, PermutationInvariant) {
  const Matrix a = random_matrix(5, 3, 11), b = random_matrix(5, 3, 12);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  const Matrix pa = permute_rows(a, perm), pb = permute_rows(b, perm);
  EXPECT_TRUE(cross_correlation(pa, pb).isApprox(cross_correlation(a, b), 1e-14));
  EXPECT_NEAR(barlow_twins_objective(pa, pb, 0.005).value, barlow_twins_objective(a, b, 0.005).value, 1e-12);
  EXPECT_NEAR(vicreg_loss(pa, pb), vicreg_loss(a, b), 1e-12);
  EXPECT_NEAR(ntxent_loss(pa, pb, 0.5), ntxent_loss(a, b, 0.5), 1e-12);
}

TEST(Objectives, BarlowPipelineComposition) {
  const Matrix a = random_matrix(6, 4, 21), b = random_matrix(6, 4, 22);
  const double expect = barlow_twins_loss(cross_correlation(standardize_columns(a), standardize_columns(b)), 0.005);
  EXPECT_NEAR(barlow_twins_objective(a, b, 0.005).value, expect, 1e-12);
}

class ObjectiveGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(ObjectiveGradient, BarlowTwins) {
  expect_gradients([](const Matrix& a, const Matrix& b) { return barlow_twins_objective(a, b, 0.005); }, 6, 4,
                   GetParam());
}

TEST_P(ObjectiveGradient, VicReg) {
  expect_gradients([](const Matrix& a, const Matrix& b) { return vicreg_objective(a, b, {}); }, 6, 4, GetParam());
}

TEST_P(ObjectiveGradient, NtXent) {
  expect_gradients([](const Matrix& a, const Matrix& b) { return ntxent_objective(a, b, 0.5); }, 5, 4, GetParam());
}

INSTANTIATE_TEST_SUITE_P(Seeds, ObjectiveGradient, ::testing::Range<std::uint64_t>(0, 20));

TEST(Objectives, ParseNames) {
  EXPECT_EQ(parse_objective("barlow_twins"), Objective::BarlowTwins);
  EXPECT_EQ(parse_objective("vicreg"), Objective::VicReg);
  EXPECT_EQ(parse_objective("ntxent"), Objective::NtXent);
  EXPECT_THROW(parse_objective("byol"), std::invalid_argument);
  EXPECT_EQ(objective_name(Objective::VicReg), "vicreg");
}

}  // namespace
}  // namespace hpgan::ssl
