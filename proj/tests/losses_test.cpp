#include "oracles.hpp"

#include "hpgan/losses.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

namespace hpgan::losses {
namespace {

using namespace hpgan::testing;

using testing::check_gradient;
using testing::random_tensor;
using V = std::vector<ag::Variable<double>>;

nn::LogitSet<double> logits_from(const std::vector<std::vector<double>>& per_map, const std::vector<int>& network) {
  nn::LogitSet<double> set;
  for (std::size_t k = 0; k < per_map.size(); ++k) {
    const auto n = static_cast<Index>(per_map[k].size());
    Tensor<double> t({n, 1, 1, 1});
    for (Index i = 0; i < n; ++i) t.data[i] = per_map[k][static_cast<std::size_t>(i)];
    set.maps.push_back(ag::constant(std::move(t)));
    set.network.push_back(network[k]);
  }
  return set;
}

nn::LogitSet<double> constant_logits(double value, Index batch, std::size_t maps) {
  nn::LogitSet<double> set;
  for (std::size_t k = 0; k < maps; ++k) {
    const Index size = Index{1} << (k % 4);
    set.maps.push_back(ag::constant(Tensor<double>::constant({batch, 1, size, size}, value)));
    set.network.push_back(k < maps / 2 ? 0 : 1);
  }
  return set;
}

TEST(Hinge, DiscriminatorExamples) {
  EXPECT_EQ(hinge_d_loss(constant_logits(1, 2, 8), constant_logits(-1, 2, 8)).item(), 0.0);
  auto real = logits_from({{2, 0.5}}, {0}), fake = logits_from({{-2, 0}}, {0});
  EXPECT_DOUBLE_EQ(hinge_d_loss(real, fake).item(), 0.75);
  EXPECT_DOUBLE_EQ(hinge_d_loss(constant_logits(0, 3, 8), constant_logits(0, 3, 8)).item(), 16.0);
  EXPECT_THROW(hinge_d_loss(constant_logits(0, 3, 8), constant_logits(0, 2, 8)), std::invalid_argument);
}

TEST(Hinge, GeneratorExamples) {
  EXPECT_EQ(hinge_g_loss(constant_logits(0, 2, 8)).item(), 0.0);
  EXPECT_DOUBLE_EQ(hinge_g_loss(logits_from({{1, -3}}, {0})).item(), 1.0);
  RngStream rng(1);
  nn::LogitSet<double> set, neg;
  for (int k = 0; k < 8; ++k) {
    auto t = random_tensor({3, 1, 2, 2}, rng);
    set.maps.push_back(ag::constant(t));
    neg.maps.push_back(ag::constant(Tensor<double>(t.shape, -t.data)));
    set.network.push_back(k / 4);
    neg.network.push_back(k / 4);
  }
  EXPECT_NEAR(hinge_g_loss(neg).item(), -hinge_g_loss(set).item(), 1e-15);
}

TEST(Consistency, Examples) {
  EXPECT_EQ(discriminator_consistency(constant_logits(0.3, 4, 8)).item(), 0.0);
  // Per-sample network sums: CNN [2, 0], ViT [1, 1].
  auto set = logits_from({{2, 0}, {0, 0}, {1, 1}, {0, 0}}, {0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(discriminator_consistency(set).item(), 1.0);
  auto shifted = logits_from({{2, 0}, {5, 5}, {1, 1}, {5, 5}}, {0, 0, 1, 1});
  EXPECT_DOUBLE_EQ(discriminator_consistency(shifted).item(), 1.0);
}

TEST(Consistency, LevelRelabelingInvariant) {
  RngStream rng(2);
  nn::LogitSet<double> set;
  for (int k = 0; k < 8; ++k) {
    const Index size = Index{1} << (k % 4);
    set.maps.push_back(ag::constant(random_tensor({5, 1, size, size}, rng)));
    set.network.push_back(k / 4);
  }
  nn::LogitSet<double> shuffled;
  for (int k : {2, 0, 3, 1, 7, 5, 4, 6}) {
    shuffled.maps.push_back(set.maps[static_cast<std::size_t>(k)]);
    shuffled.network.push_back(set.network[static_cast<std::size_t>(k)]);
  }
  EXPECT_NEAR(discriminator_consistency(shuffled).item(), discriminator_consistency(set).item(), 1e-12);
}

TEST(Totals, ExamplesAndLinearity) {
  const LossWeights w;
  EXPECT_DOUBLE_EQ(total_d_loss(1.0, 0.5, 0.25, w), 1.75);
  EXPECT_DOUBLE_EQ(total_g_loss(2.0, 1.0, 10.0, w), 3.2);
  LossWeights zero{0, 0, 0, 0, 0.005};
  EXPECT_EQ(total_d_loss(1.3, 5.0, 7.0, zero), 1.3);
  EXPECT_EQ(total_g_loss(1.3, 5.0, 7.0, zero), 1.3);

  auto s = [](double v) { return ag::constant(Tensor<double>::constant({}, v)); };
  EXPECT_DOUBLE_EQ(total_d_loss(s(1.0), s(0.5), s(0.25), w).item(), 1.75);
  EXPECT_DOUBLE_EQ(total_g_loss(s(2.0), s(1.0), s(10.0), w).item(), 3.2);
  EXPECT_DOUBLE_EQ(total_g_loss(s(2.0), ag::Variable<double>(), ag::Variable<double>(), w).item(), 2.0);
  LossWeights a = w, b = w;
  a.f = 0.1;
  b.f = 0.3;
  EXPECT_NEAR(total_g_loss(2.0, 1.0, 10.0, b) - total_g_loss(2.0, 1.0, 10.0, a), 0.2 * 10.0, 1e-12);
}

TEST(FakeTwins, MatchesStraightLineOracle) {
  FakeTwinsSetup setup;
  nn::Generator<double> g(nn::GeneratorSpec{}, 3);
  nn::LinearHead<double> head(240, 512, 4);
  FakeTwinsOptions opt;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    RngStream zr(seed);
    auto z = random_tensor({2, 64}, zr);
    RngStream rng(100 + seed);
    const double expect = oracle_faketwins(z, g, setup, head, opt, rng);
    const double got = faketwins_loss(z, g, setup.set(), head, opt, rng).item();
    EXPECT_NEAR(got, expect, 1e-8 * std::max(1.0, std::abs(expect)));
  }
}

TEST(FakeTwins, ZeroForDecorrelatedIdenticalViews) {
  FakeTwinsSetup setup;
  nn::Generator<double> g(nn::GeneratorSpec{}, 3);
  nn::LinearHead<double> head(240, 3, 5);
  FakeTwinsOptions opt;
  opt.l1 = 0;
  opt.policy = augment::AugmentPolicy::parse("none");
  RngStream zr(1);
  auto z = random_tensor({8, 64}, zr);
  auto& p = head.parameters();
  p[4].var = ag::constant(Tensor<double>::from_matrix(Eigen::MatrixXd::Identity(3, 3)));
  RngStream rng(2);
  auto images = g(ag::constant(z));
  const auto h = head(pooled_features(images, setup.set())).value().to_matrix();
  const Eigen::MatrixXd centered = h.rowwise() - h.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered.transpose() * centered);
  ASSERT_GT(es.eigenvalues().minCoeff(), 1e-8);
  const Eigen::MatrixXd whiten = es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  p[4].var = ag::constant(Tensor<double>::from_matrix(whiten));
  EXPECT_NEAR(faketwins_loss(z, g, setup.set(), head, opt, rng).item(), 0.0, 1e-12);
}

class FakeTwinsGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(FakeTwinsGradient, GeneratorOutputPixels) {
  static FakeTwinsSetup setup;
  nn::LinearHead<double> head(240, 64, 7);
  const std::uint64_t seed = GetParam();
  RngStream rng(seed);
  auto a = random_tensor({4, 3, 32, 32}, rng, 0.5), b = random_tensor({4, 3, 32, 32}, rng, 0.5);
  auto r = check_gradient(
      [&](const V& v) {
        RngStream draw(seed + 1000);
        return faketwins_views(v[0], v[1], setup.set(), head, augment::AugmentPolicy{}, draw, ssl::ObjectiveSpec{});
      },
      {a, b}, 1e-5, 15, seed);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, FakeTwinsGradient, ::testing::Range<std::uint64_t>(0, 20));

TEST(FakeTwins, BatchOfOneRejected) {
  FakeTwinsSetup setup;
  nn::Generator<double> g(nn::GeneratorSpec{}, 3);
  nn::LinearHead<double> head(240, 16, 5);
  RngStream rng(1);
  EXPECT_THROW(faketwins_loss(Tensor<double>({1, 64}), g, setup.set(), head, FakeTwinsOptions{}, rng),
               std::invalid_argument);
}

TEST(FakeTwins, HeadOnlyDescent) {
  FakeTwinsSetup setup;
  nn::Generator<double> g(nn::GeneratorSpec{}, 3);
  nn::LinearHead<double> head(240, 32, 9);
  RngStream zr(4);
  auto images = ag::detach(g(ag::constant(random_tensor({8, 64}, zr))));
  nn::AdamOptions opts;
  opts.lr = 1e-3;
  nn::Adam<double> adam(head.parameters(), opts);
  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) {
    RngStream draw(55);
    adam.zero_grad();
    auto loss = faketwins_views(images, images, setup.set(), head, augment::AugmentPolicy{}, draw, ssl::ObjectiveSpec{});
    losses.push_back(loss.item());
    ag::backward(loss);
    adam.step();
  }
  double previous = 1e300;
  for (int block = 0; block < 10; ++block) {
    double mean = 0;
    for (int i = 0; i < 10; ++i) mean += losses[static_cast<std::size_t>(block * 10 + i)] / 10;
    EXPECT_LT(mean, previous) << "block " << block;
    previous = mean;
  }
}

TEST(SslLoss, FloatWrapperMatchesKernel) {
  RngStream rng(6);
  auto a = random_tensor({5, 4}, rng), b = random_tensor({5, 4}, rng);
  auto fa = ag::parameter(a.cast<float>()), fb = ag::parameter(b.cast<float>());
  auto loss = ssl_loss(fa, fb, ssl::ObjectiveSpec{});
  const auto ref = ssl::evaluate(ssl::ObjectiveSpec{}, a.to_matrix().cast<float>().cast<double>(),
                                 b.to_matrix().cast<float>().cast<double>());
  EXPECT_NEAR(loss.item(), ref.value, 1e-5);
  ag::backward(loss);
  EXPECT_LT((fa.grad().to_matrix().cast<double>() - ref.grad_a).cwiseAbs().maxCoeff(), 1e-5);
}

}  // namespace
}  // namespace hpgan::losses
