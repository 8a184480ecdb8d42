#pragma once

#include "hpgan/features.hpp"
#include "hpgan/init.hpp"
#include "hpgan/ops.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

/// Trainable networks: generator, discriminator bank, FakeTwins head, plus optimizer and EMA.
namespace hpgan::nn {

/// Named reference to a tensor owned by a module; used for checkpoints and snapshots.
template <typename Scalar>
using TensorRefs = std::vector<std::pair<std::string, Tensor<Scalar>*>>;

template <typename Scalar>
TensorRefs<Scalar> tensor_refs(VariableList<Scalar>& vars, const std::string& prefix = "") {
  TensorRefs<Scalar> out;
  for (auto& nv : vars) out.emplace_back(prefix + nv.name, &nv.var.mutable_value());
  return out;
}

template <typename Scalar>
void set_requires_grad(VariableList<Scalar>& vars, bool on) {
  for (auto& nv : vars) nv.var.set_requires_grad(on);
}

template <typename Scalar>
void zero_grad(VariableList<Scalar>& vars) {
  for (auto& nv : vars) nv.var.zero_grad();
}

// ---------------------------------------------------------------------------------------------
// Spectral normalization

/// Persisted singular-vector estimates of one weight reshaped to [out, rest].
template <typename Scalar>
struct SpectralState {
  Tensor<Scalar> u;  // [out]
  Tensor<Scalar> v;  // [rest]
  Scalar sigma = Scalar(1);

  static SpectralState init(Index out, Index rest, RngStream& rng);
};

/// W / sigma with sigma the top singular value estimate. One power-iteration step refines
/// (u, v) first when `update` is set. Gradient treats u and v as constants.
template <typename Scalar>
ag::Variable<Scalar> spectral_normalize(const ag::Variable<Scalar>& weight, SpectralState<Scalar>& state, bool update);

/// Spectral-normalized convolution with bias.
template <typename Scalar>
struct SnConv {
  ag::Variable<Scalar> weight;
  ag::Variable<Scalar> bias;
  SpectralState<Scalar> sn;
  int stride = 1;
  int pad = 0;

  static SnConv make(Index in, Index out, int kernel, int stride, int pad, RngStream& rng);
  ag::Variable<Scalar> operator()(const ag::Variable<Scalar>& x, bool update_sn);
};

// ---------------------------------------------------------------------------------------------
// Generator

struct GeneratorSpec {
  Index z_dim = 64;
  Index resolution = 32;
  Index base_channels = 64;
  Index min_channels = 8;

  void validate() const;
  /// Channels at 4x4, 8x8, ..., R x R.
  std::vector<Index> channels() const;
};

/// Toy skip-layer-excitation upsampling generator with a tanh output.
template <typename Scalar>
class Generator {
 public:
  Generator(const GeneratorSpec& spec, std::uint64_t seed);

  /// z [N, z_dim] -> images [N, 3, R, R] in [-1, 1].
  ag::Variable<Scalar> forward(const ag::Variable<Scalar>& z) const;
  ag::Variable<Scalar> operator()(const ag::Variable<Scalar>& z) const { return forward(z); }

  const GeneratorSpec& spec() const { return spec_; }
  VariableList<Scalar>& parameters() { return params_; }
  const VariableList<Scalar>& parameters() const { return params_; }

 private:
  const ag::Variable<Scalar>& p(const std::string& name) const;

  GeneratorSpec spec_;
  VariableList<Scalar> params_;
};

/// Same architecture and weights in another precision; the copy is detached from any optimizer.
template <typename To, typename From>
Generator<To> cast_generator(const Generator<From>& g) {
  Generator<To> out(g.spec(), 0);
  const auto& src = g.parameters();
  auto& dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i].var = ag::Variable<To>(src[i].var.value().template cast<To>(), false);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Discriminators

/// Spatial logit maps [N, 1, h, w] tagged with the feature network they judge.
template <typename Scalar>
struct LogitSet {
  std::vector<ag::Variable<Scalar>> maps;
  std::vector<int> network;

  Index batch() const { return maps.empty() ? 0 : maps.front().dim(0); }
  std::size_t size() const { return maps.size(); }
  /// Per-sample spatial mean of map k: [N].
  ag::Variable<Scalar> scalar(std::size_t k) const { return ag::sample_mean(maps[k]); }
  /// Per-sample sum of the scalar logits over the maps of one network: [N].
  ag::Variable<Scalar> network_sum(int net) const;
};

struct DiscriminatorSpec {
  bool projected = true;
  /// Stage widths of each judged feature network (projected mode).
  std::vector<std::array<Index, features::kStages>> widths;
  Index hidden = 16;
  Index raw_base = 16;  // first width of the raw-image discriminator

  void validate() const;
};

/// Affine parameters of one batch-norm layer.
template <typename Scalar>
struct NormParams {
  ag::Variable<Scalar> gamma;
  ag::Variable<Scalar> beta;
};

/// Independent heads, one per (network, level), or a single raw-image discriminator when not
/// projected. Each head is spectral-normalized convs with batch norm and leaky ReLU between them;
/// batch statistics are always used.
template <typename Scalar>
class DiscriminatorBank {
 public:
  DiscriminatorBank(const DiscriminatorSpec& spec, Index resolution, std::uint64_t seed);

  LogitSet<Scalar> forward(const std::vector<features::Stages<Scalar>>& pyramids, bool update_sn);
  LogitSet<Scalar> forward_raw(const ag::Variable<Scalar>& images, bool update_sn);

  const DiscriminatorSpec& spec() const { return spec_; }
  std::size_t head_count() const { return heads_.size(); }
  VariableList<Scalar> parameters() const;
  /// Parameters and spectral-norm vectors.
  TensorRefs<Scalar> state();

 private:
  DiscriminatorSpec spec_;
  std::vector<std::vector<SnConv<Scalar>>> heads_;
  std::vector<std::vector<NormParams<Scalar>>> norms_;  // one fewer than convs per head
  std::vector<int> head_network_;
};

// ---------------------------------------------------------------------------------------------
// FakeTwins head

/// Three affine layers of `width` units; batch norm and ReLU after the first two.
template <typename Scalar>
class LinearHead {
 public:
  LinearHead(Index in_dim, Index width, std::uint64_t seed);

  ag::Variable<Scalar> forward(const ag::Variable<Scalar>& v);
  ag::Variable<Scalar> operator()(const ag::Variable<Scalar>& v) { return forward(v); }

  Index in_dim() const { return in_dim_; }
  Index width() const { return width_; }
  VariableList<Scalar>& parameters() { return params_; }
  const VariableList<Scalar>& parameters() const { return params_; }
  /// Parameters and running batch-norm statistics.
  TensorRefs<Scalar> state();

  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;

 private:
  Index in_dim_, width_;
  VariableList<Scalar> params_;
  std::array<Tensor<Scalar>, 2> running_mean_, running_var_;
};

// ---------------------------------------------------------------------------------------------
// Optimization

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

/// Adam over a fixed parameter list; parameters without a gradient are skipped.
template <typename Scalar>
class Adam {
 public:
  Adam(VariableList<Scalar> params, AdamOptions options);

  void step();
  void zero_grad();

  const VariableList<Scalar>& parameters() const { return params_; }
  const AdamOptions& options() const { return options_; }
  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  /// First and second moments, named after their parameters.
  TensorRefs<Scalar> state(const std::string& prefix);

 private:
  VariableList<Scalar> params_;
  AdamOptions options_;
  std::vector<Tensor<Scalar>> m_, v_;
  std::int64_t t_ = 0;
};

/// shadow <- decay * shadow + (1 - decay) * current, elementwise per tensor.
template <typename Scalar>
void ema_update(VariableList<Scalar>& shadow, const VariableList<Scalar>& current, double decay);

}  // namespace hpgan::nn
