#pragma once

#include "hpgan/augment.hpp"
#include "hpgan/features.hpp"
#include "hpgan/networks.hpp"
#include "hpgan/ssl.hpp"

#include <vector>

namespace hpgan::losses {

struct LossWeights {
  double d_fake = 1.0;    // consistency on generated images, discriminator phase
  double d_real = 1.0;    // consistency on real images, discriminator phase
  double g = 1.0;         // consistency on generated images, generator phase
  double f = 0.02;        // FakeTwins
  double lambda1 = 0.005; // off-diagonal weight inside Barlow Twins

  void validate() const;
};

/// Sum over maps of mean(max(0, 1 - real)) + mean(max(0, 1 + fake)), hinge taken per logit.
template <typename Scalar>
ag::Variable<Scalar> hinge_d_loss(const nn::LogitSet<Scalar>& real, const nn::LogitSet<Scalar>& fake);

/// Sum over maps of -mean(fake).
template <typename Scalar>
ag::Variable<Scalar> hinge_g_loss(const nn::LogitSet<Scalar>& fake);

/// Batch mean of (sum of network-0 scalar logits - sum of network-1 scalar logits)^2.
template <typename Scalar>
ag::Variable<Scalar> discriminator_consistency(const nn::LogitSet<Scalar>& logits);

/// SSL objective on two embedding batches [N, D]; evaluated in double, gradients cast back.
template <typename Scalar>
ag::Variable<Scalar> ssl_loss(const ag::Variable<Scalar>& za, const ag::Variable<Scalar>& zb,
                              const ssl::ObjectiveSpec& objective);

/// Frozen projector stacks whose pooled outputs feed the head.
template <typename Scalar>
using ProjectorSet = std::vector<const features::Projector<Scalar>*>;

/// Pooled concatenated representation of one image batch across all projectors.
template <typename Scalar>
ag::Variable<Scalar> pooled_features(const ag::Variable<Scalar>& images, const ProjectorSet<Scalar>& projectors);

/// Augments both batches with independent draws, projects, pools, embeds with the head and
/// applies the SSL objective.
template <typename Scalar>
ag::Variable<Scalar> faketwins_views(const ag::Variable<Scalar>& a, const ag::Variable<Scalar>& b,
                                     const ProjectorSet<Scalar>& projectors, nn::LinearHead<Scalar>& head,
                                     const augment::AugmentPolicy& policy, RngStream& rng,
                                     const ssl::ObjectiveSpec& objective);

struct FakeTwinsOptions {
  double l1 = 0.1;
  bool deterministic_perturb = false;
  augment::AugmentPolicy policy;
  ssl::ObjectiveSpec objective;
};

/// A' = T1(G(z)), B' = T2(G(z + eps)); returns the SSL objective of head(V_A'), head(V_B').
template <typename Scalar>
ag::Variable<Scalar> faketwins_loss(const Tensor<Scalar>& z, const nn::Generator<Scalar>& generator,
                                    const ProjectorSet<Scalar>& projectors, nn::LinearHead<Scalar>& head,
                                    const FakeTwinsOptions& options, RngStream& rng);

/// hinge + d_fake * dc_fake + d_real * dc_real; undefined terms are skipped.
template <typename Scalar>
ag::Variable<Scalar> total_d_loss(const ag::Variable<Scalar>& hinge, const ag::Variable<Scalar>& dc_fake,
                                  const ag::Variable<Scalar>& dc_real, const LossWeights& w);

/// hinge + g * dc + f * ft; undefined terms are skipped.
template <typename Scalar>
ag::Variable<Scalar> total_g_loss(const ag::Variable<Scalar>& hinge, const ag::Variable<Scalar>& dc,
                                  const ag::Variable<Scalar>& ft, const LossWeights& w);

inline double total_d_loss(double hinge, double dc_fake, double dc_real, const LossWeights& w) {
  return hinge + w.d_fake * dc_fake + w.d_real * dc_real;
}

inline double total_g_loss(double hinge, double dc, double ft, const LossWeights& w) {
  return hinge + w.g * dc + w.f * ft;
}

}  // namespace hpgan::losses
