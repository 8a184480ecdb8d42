#include "oracles.hpp"

#include "hpgan/features.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace hpgan::features {
namespace {

using namespace hpgan::testing;

using testing::check_gradient;
using testing::random_tensor;
using V = std::vector<ag::Variable<double>>;

FeatureNetworkSpec conv_spec(std::uint64_t seed = 1) {
  FeatureNetworkSpec s;
  s.seed = seed;
  return s;
}

FeatureNetworkSpec attention_spec(std::uint64_t seed = 2) {
  FeatureNetworkSpec s;
  s.kind = NetworkKind::PatchAttention;
  s.seed = seed;
  return s;
}

TEST(FeatureNetwork, ConvStageShapes) {
  FeatureNetwork<double> net(conv_spec());
  RngStream rng(1);
  auto stages = net.forward(ag::constant(random_tensor({2, 3, 64, 64}, rng)));
  const Index sizes[4] = {16, 8, 4, 2}, widths[4] = {8, 16, 32, 64};
  for (int s = 0; s < kStages; ++s) {
    EXPECT_EQ(stages[static_cast<std::size_t>(s)].shape(), (Shape{2, widths[s], sizes[s], sizes[s]}));
  }
}

TEST(FeatureNetwork, AttentionStageShapes) {
  FeatureNetwork<double> net(attention_spec());
  RngStream rng(2);
  auto stages = net.forward(ag::constant(random_tensor({2, 3, 64, 64}, rng)));
  const Index sizes[4] = {16, 8, 4, 2}, widths[4] = {8, 16, 32, 64};
  for (int s = 0; s < kStages; ++s) {
    EXPECT_EQ(stages[static_cast<std::size_t>(s)].shape(), (Shape{2, widths[s], sizes[s], sizes[s]}));
    EXPECT_TRUE(stages[static_cast<std::size_t>(s)].value().data.allFinite());
  }
}

TEST(FeatureNetwork, SeededDeterminism) {
  RngStream rng(3);
  auto x = ag::constant(random_tensor({2, 3, 32, 32}, rng));
  for (const auto& spec : {conv_spec(5), attention_spec(5)}) {
    FeatureNetwork<double> a(spec), b(spec);
    auto sa = a.forward(x), sb = b.forward(x);
    for (int s = 0; s < kStages; ++s) {
      EXPECT_TRUE((sa[static_cast<std::size_t>(s)].value().data == sb[static_cast<std::size_t>(s)].value().data).all());
    }
    auto other = spec;
    other.seed = 6;
    FeatureNetwork<double> c(other);
    EXPECT_FALSE((c.forward(x)[3].value().data == sa[3].value().data).all());
  }
}

TEST(FeatureNetwork, RejectsBadResolution) {
  FeatureNetwork<double> net(conv_spec());
  EXPECT_THROW(net.forward(ag::constant(Tensor<double>({1, 3, 48, 48}))), std::invalid_argument);
  EXPECT_THROW(net.forward(ag::constant(Tensor<double>({1, 1, 32, 32}))), std::invalid_argument);
}

TEST(FeatureNetwork, WeightsAreFrozen) {
  for (const auto& spec : {conv_spec(), attention_spec()}) {
    FeatureNetwork<float> net(spec);
    for (const auto& w : net.weights()) EXPECT_FALSE(w.var.requires_grad()) << w.name;
  }
}

TEST(FeatureNetwork, SpecRoundTrip) {
  auto spec = attention_spec(17);
  spec.widths = {4, 8, 12, 16};
  const auto parsed = FeatureNetworkSpec::parse(spec.to_string());
  EXPECT_EQ(parsed.to_string(), spec.to_string());
  EXPECT_EQ(parsed.kind, NetworkKind::PatchAttention);
  EXPECT_EQ(parsed.widths[2], 12);
  EXPECT_THROW(FeatureNetworkSpec::parse("kind=resnet"), std::invalid_argument);
  auto with_path = conv_spec();
  with_path.weights_path = "x.bin";
  EXPECT_THROW(with_path.validate(), std::invalid_argument);
}

TEST(Ccm, IdentityAndExample) {
  const std::array<Index, kStages> widths{2, 2, 2, 2};
  auto params = ProjectorParams<double>::identity(widths);
  RngStream rng(4);
  auto stages = random_stages(2, 32, widths, rng);
  auto mixed = ccm_apply(stages, params);
  for (std::size_t s = 0; s < kStages; ++s) EXPECT_TRUE((mixed[s].value().data == stages[s].value().data).all());

  Tensor<double> w({2, 2, 1, 1});
  w.data << 1, 1, 1, -1;
  params.ccm[3] = ag::constant(w);
  Tensor<double> pixel({1, 2, 1, 1});
  pixel.data << 3, 1;
  stages[3] = ag::constant(pixel);
  auto out = ccm_apply(stages, params)[3].value();
  EXPECT_DOUBLE_EQ(out.data[0], 4.0);
  EXPECT_DOUBLE_EQ(out.data[1], 2.0);
}

TEST(Ccm, LinearAndChannelChecked) {
  const std::array<Index, kStages> widths{8, 16, 32, 64};
  auto params = ProjectorParams<double>::random(widths, 3);
  RngStream rng(5);
  auto stages = random_stages(2, 32, widths, rng);
  Stages<double> scaled;
  for (std::size_t s = 0; s < kStages; ++s) scaled[s] = ag::scale(stages[s], 2.5);
  auto a = ccm_apply(stages, params), b = ccm_apply(scaled, params);
  for (std::size_t s = 0; s < kStages; ++s) {
    EXPECT_LT((b[s].value().data - 2.5 * a[s].value().data).abs().maxCoeff(), 1e-10);
  }
  auto wrong = random_stages(2, 32, {8, 16, 32, 32}, rng);
  EXPECT_THROW(ccm_apply(wrong, params), std::invalid_argument);
}

TEST(Csm, ZeroShapeAndOracle) {
  const std::array<Index, kStages> widths{8, 16, 32, 64};
  auto params = ProjectorParams<double>::random(widths, 9);
  Stages<double> zeros;
  for (int s = 0; s < kStages; ++s) {
    const Index size = stage_size(64, s);
    zeros[static_cast<std::size_t>(s)] = ag::constant(Tensor<double>({2, widths[static_cast<std::size_t>(s)], size, size}));
  }
  auto z = csm_apply(zeros, params);
  const Index sizes[4] = {16, 8, 4, 2};
  for (std::size_t s = 0; s < kStages; ++s) {
    EXPECT_EQ(z[s].dim(2), sizes[s]);
    EXPECT_EQ(z[s].value().data.abs().maxCoeff(), 0.0);
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream rng(seed);
    auto m = random_stages(2, 64, widths, rng);
    auto fast = csm_apply(m, params);
    auto slow = oracle_csm(m, params);
    for (std::size_t s = 0; s < kStages; ++s) {
      EXPECT_LT((fast[s].value().data - slow[s].data).abs().maxCoeff(), 1e-6) << "stage " << s;
    }
  }
}

TEST(Csm, TopDownCausality) {
  const std::array<Index, kStages> widths{8, 16, 32, 64};
  auto params = ProjectorParams<double>::random(widths, 10);
  RngStream rng(11);
  auto m = random_stages(1, 32, widths, rng);
  auto base = csm_apply(m, params);
  for (std::size_t zeroed = 0; zeroed < kStages; ++zeroed) {
    auto mod = m;
    mod[zeroed] = ag::constant(Tensor<double>(m[zeroed].shape()));
    auto out = csm_apply(mod, params);
    for (std::size_t s = 0; s < kStages; ++s) {
      const bool same = (out[s].value().data == base[s].value().data).all();
      EXPECT_EQ(same, zeroed < s) << "zeroed " << zeroed << " level " << s;
    }
  }
}

TEST(Pooled, ConstantMapsDimensionAndPermutation) {
  const std::array<Index, kStages> widths{8, 16, 32, 64};
  std::vector<Stages<double>> pyramids(2);
  for (auto& pyr : pyramids)
    for (int s = 0; s < kStages; ++s) {
      const Index size = stage_size(32, s);
      pyr[static_cast<std::size_t>(s)] =
          ag::constant(Tensor<double>::constant({3, widths[static_cast<std::size_t>(s)], size, size}, 0.25));
    }
  auto v = pooled_representation(pyramids).value();
  EXPECT_EQ(v.shape, (Shape{3, 240}));
  EXPECT_LT((v.data - 0.25).abs().maxCoeff(), 1e-15);

  RngStream rng(12);
  auto a = random_stages(2, 32, widths, rng);
  auto b = a;
  const Index size0 = stage_size(32, 0);
  std::vector<Index> perm;
  for (Index n = 0; n < 2; ++n)
    for (Index c = 0; c < widths[0]; ++c)
      for (Index p = size0 * size0 - 1; p >= 0; --p) perm.push_back((n * widths[0] + c) * size0 * size0 + p);
  b[0] = ag::gather(a[0], perm, a[0].shape());
  auto va = pooled_representation(std::vector<Stages<double>>{a}).value();
  auto vb = pooled_representation(std::vector<Stages<double>>{b}).value();
  EXPECT_LT((va.data - vb.data).abs().maxCoeff(), 1e-14);
}

TEST(Projector, GradientReachesImages) {
  for (const auto& spec : {conv_spec(3), attention_spec(3)}) {
    Projector<double> proj(spec, 21);
    RngStream rng(13);
    auto x = random_tensor({2, 3, 32, 32}, rng, 0.5);
    for (std::size_t level = 0; level < kStages; ++level) {
      auto r = check_gradient(
          [&](const V& v) {
            RngStream w(77 + level);
            auto y = proj(v[0])[level];
            return ag::sum(ag::mul(y, ag::constant(random_tensor(y.shape(), w))));
          },
          {x}, 1e-5, 40, level);
      EXPECT_LT(r.max_rel_error, 1e-4) << features::kind_name(spec.kind) << " level " << level;
      EXPECT_GT(r.scale, 0.0);
    }
  }
}

TEST(Resize, BoxAndBilinear) {
  const auto box = resize_matrix<double>(8, 2);
  EXPECT_DOUBLE_EQ(box(0, 3), 0.25);
  EXPECT_DOUBLE_EQ(box(1, 4), 0.25);
  EXPECT_DOUBLE_EQ(box(0, 4), 0.0);
  const auto up = resize_matrix<double>(2, 4);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(up.row(i).sum(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(up(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(up(1, 0), 0.75);
}

}  // namespace
}  // namespace hpgan::features
