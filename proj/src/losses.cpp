#include "hpgan/losses.hpp"

#include <stdexcept>

namespace hpgan::losses {

void LossWeights::validate() const {
  if (d_fake < 0 || d_real < 0 || g < 0 || f < 0) throw std::invalid_argument("loss weights must be nonnegative");
  if (lambda1 <= 0) throw std::invalid_argument("lambda1 must be positive");
}

template <typename Scalar>
ag::Variable<Scalar> hinge_d_loss(const nn::LogitSet<Scalar>& real, const nn::LogitSet<Scalar>& fake) {
  if (real.size() != fake.size() || real.size() == 0) throw std::invalid_argument("hinge_d_loss: map count mismatch");
  if (real.batch() != fake.batch()) throw std::invalid_argument("hinge_d_loss: batch size mismatch");
  ag::Variable<Scalar> total;
  for (std::size_t k = 0; k < real.size(); ++k) {
    auto r = ag::mean(ag::relu(ag::add_scalar(ag::scale(real.maps[k], Scalar(-1)), Scalar(1))));
    auto f = ag::mean(ag::relu(ag::add_scalar(fake.maps[k], Scalar(1))));
    auto term = ag::add(r, f);
    total = total.defined() ? ag::add(total, term) : term;
  }
  return total;
}

template <typename Scalar>
ag::Variable<Scalar> hinge_g_loss(const nn::LogitSet<Scalar>& fake) {
  if (fake.size() == 0) throw std::invalid_argument("hinge_g_loss: empty logit set");
  ag::Variable<Scalar> total;
  for (const auto& map : fake.maps) {
    auto term = ag::scale(ag::mean(map), Scalar(-1));
    total = total.defined() ? ag::add(total, term) : term;
  }
  return total;
}

template <typename Scalar>
ag::Variable<Scalar> discriminator_consistency(const nn::LogitSet<Scalar>& logits) {
  return ag::mean(ag::square(ag::sub(logits.network_sum(0), logits.network_sum(1))));
}

template <typename Scalar>
ag::Variable<Scalar> ssl_loss(const ag::Variable<Scalar>& za, const ag::Variable<Scalar>& zb,
                              const ssl::ObjectiveSpec& objective) {
  if (za.shape().size() != 2 || za.shape() != zb.shape()) throw std::invalid_argument("embedding batch shape mismatch");
  const Index n = za.dim(0), d = za.dim(1);
  auto to_double = [n, d](const Tensor<Scalar>& t) -> ssl::Matrix {
    return Eigen::Map<const RowMatrixX<Scalar>>(t.ptr(), n, d).template cast<double>();
  };
  ssl::LossWithGrad r = ssl::evaluate(objective, to_double(za.value()), to_double(zb.value()));
  auto to_tensor = [n, d](const ssl::Matrix& m) {
    RowMatrixX<Scalar> rm = m.cast<Scalar>();
    return Tensor<Scalar>({n, d}, Eigen::Map<ArrayX<Scalar>>(rm.data(), rm.size()));
  };
  Tensor<Scalar> ga = to_tensor(r.grad_a), gb = to_tensor(r.grad_b);
  Tensor<Scalar> value = Tensor<Scalar>::constant({}, static_cast<Scalar>(r.value));
  return ag::make_result<Scalar>(std::move(value), {za, zb}, [za, zb, ga, gb](const ag::Node<Scalar>& self) {
    const Scalar g = self.grad.data[0];
    if (za.requires_grad()) accumulate_grad(*za.node(), Tensor<Scalar>(ga.shape, ga.data * g));
    if (zb.requires_grad()) accumulate_grad(*zb.node(), Tensor<Scalar>(gb.shape, gb.data * g));
  });
}

template <typename Scalar>
ag::Variable<Scalar> pooled_features(const ag::Variable<Scalar>& images, const ProjectorSet<Scalar>& projectors) {
  if (projectors.empty()) throw std::invalid_argument("pooled_features: no projectors");
  std::vector<features::Stages<Scalar>> pyramids;
  for (const auto* p : projectors) pyramids.push_back((*p)(images));
  return features::pooled_representation(pyramids);
}

template <typename Scalar>
ag::Variable<Scalar> faketwins_views(const ag::Variable<Scalar>& a, const ag::Variable<Scalar>& b,
                                     const ProjectorSet<Scalar>& projectors, nn::LinearHead<Scalar>& head,
                                     const augment::AugmentPolicy& policy, RngStream& rng,
                                     const ssl::ObjectiveSpec& objective) {
  if (a.dim(0) < 2) throw std::invalid_argument("faketwins requires batch >= 2");
  auto va = pooled_features(augment::diff_augment(a, policy, rng), projectors);
  auto vb = pooled_features(augment::diff_augment(b, policy, rng), projectors);
  return ssl_loss(head(va), head(vb), objective);
}

template <typename Scalar>
ag::Variable<Scalar> faketwins_loss(const Tensor<Scalar>& z, const nn::Generator<Scalar>& generator,
                                    const ProjectorSet<Scalar>& projectors, nn::LinearHead<Scalar>& head,
                                    const FakeTwinsOptions& options, RngStream& rng) {
  if (z.dim(0) < 2) throw std::invalid_argument("faketwins requires batch >= 2");
  Tensor<Scalar> z2 = augment::latent_perturb(z, options.l1, rng, options.deterministic_perturb);
  auto a = generator(ag::constant(z));
  auto b = generator(ag::constant(std::move(z2)));
  return faketwins_views(a, b, projectors, head, options.policy, rng, options.objective);
}

namespace {

template <typename Scalar>
ag::Variable<Scalar> add_weighted(ag::Variable<Scalar> total, const ag::Variable<Scalar>& term, double w) {
  if (!term.defined()) return total;
  return ag::add(total, ag::scale(term, static_cast<Scalar>(w)));
}

}  // namespace

template <typename Scalar>
ag::Variable<Scalar> total_d_loss(const ag::Variable<Scalar>& hinge, const ag::Variable<Scalar>& dc_fake,
                                  const ag::Variable<Scalar>& dc_real, const LossWeights& w) {
  return add_weighted(add_weighted(hinge, dc_fake, w.d_fake), dc_real, w.d_real);
}

template <typename Scalar>
ag::Variable<Scalar> total_g_loss(const ag::Variable<Scalar>& hinge, const ag::Variable<Scalar>& dc,
                                  const ag::Variable<Scalar>& ft, const LossWeights& w) {
  return add_weighted(add_weighted(hinge, dc, w.g), ft, w.f);
}

#define HPGAN_INSTANTIATE_LOSSES(S)                                                                        \
  template ag::Variable<S> hinge_d_loss(const nn::LogitSet<S>&, const nn::LogitSet<S>&);                    \
  template ag::Variable<S> hinge_g_loss(const nn::LogitSet<S>&);                                            \
  template ag::Variable<S> discriminator_consistency(const nn::LogitSet<S>&);                               \
  template ag::Variable<S> ssl_loss(const ag::Variable<S>&, const ag::Variable<S>&, const ssl::ObjectiveSpec&); \
  template ag::Variable<S> pooled_features(const ag::Variable<S>&, const ProjectorSet<S>&);                  \
  template ag::Variable<S> faketwins_views(const ag::Variable<S>&, const ag::Variable<S>&,                  \
                                           const ProjectorSet<S>&, nn::LinearHead<S>&,                      \
                                           const augment::AugmentPolicy&, RngStream&,                       \
                                           const ssl::ObjectiveSpec&);                                      \
  template ag::Variable<S> faketwins_loss(const Tensor<S>&, const nn::Generator<S>&, const ProjectorSet<S>&, \
                                          nn::LinearHead<S>&, const FakeTwinsOptions&, RngStream&);         \
  template ag::Variable<S> total_d_loss(const ag::Variable<S>&, const ag::Variable<S>&,                     \
                                        const ag::Variable<S>&, const LossWeights&);                        \
  template ag::Variable<S> total_g_loss(const ag::Variable<S>&, const ag::Variable<S>&,                     \
                                        const ag::Variable<S>&, const LossWeights&);

HPGAN_INSTANTIATE_LOSSES(float)
HPGAN_INSTANTIATE_LOSSES(double)

#undef HPGAN_INSTANTIATE_LOSSES

}  // namespace hpgan::losses
