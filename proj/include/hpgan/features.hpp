#pragma once

#include "hpgan/init.hpp"
#include "hpgan/ops.hpp"

#include <array>
#include <cstdint>
#include <string>

/// Frozen feature networks and the random channel/scale mixing projectors on top of them.
namespace hpgan::features {

inline constexpr int kStages = 4;

enum class NetworkKind { Conv, PatchAttention };

std::string kind_name(NetworkKind kind);
NetworkKind parse_kind(const std::string& name);

struct FeatureNetworkSpec {
  NetworkKind kind = NetworkKind::Conv;
  std::array<Index, kStages> widths{8, 16, 32, 64};
  int patch_size = 4;   // PatchAttention only
  int blocks = 2;       // PatchAttention only
  int embed_dim = 32;   // PatchAttention only
  int heads = 2;        // PatchAttention only
  std::uint64_t seed = 1;
  std::string weights_path;  // reserved for externally trained weights; must be empty

  void validate() const;
  /// Single-line canonical text, e.g. "kind=conv widths=8/16/32/64 ... seed=1".
  std::string to_string() const;
  static FeatureNetworkSpec parse(const std::string& text);
};

template <typename Scalar>
using Stages = std::array<ag::Variable<Scalar>, kStages>;

/// Stage s (0-based) has spatial size resolution / 2^(s+2).
Index stage_size(Index resolution, int stage);

/// Matrix resizing a length-`in` axis to `out`: box average for integer downscale, otherwise
/// bilinear with half-pixel centers.
template <typename Scalar>
MatrixX<Scalar> resize_matrix(Index in, Index out);

template <typename Scalar>
ag::Variable<Scalar> resize(const ag::Variable<Scalar>& x, Index height, Index width);

/// Seeded surrogate backbone with weights fixed at construction.
template <typename Scalar>
class FeatureNetwork {
 public:
  explicit FeatureNetwork(const FeatureNetworkSpec& spec);

  Stages<Scalar> forward(const ag::Variable<Scalar>& images) const;

  const FeatureNetworkSpec& spec() const { return spec_; }
  const VariableList<Scalar>& weights() const { return weights_; }

 private:
  const ag::Variable<Scalar>& w(std::size_t i) const { return weights_[i].var; }
  Stages<Scalar> forward_conv(const ag::Variable<Scalar>& images) const;
  Stages<Scalar> forward_attention(const ag::Variable<Scalar>& images) const;

  FeatureNetworkSpec spec_;
  VariableList<Scalar> weights_;
};

/// Random, untrained mixing weights: CCM 1x1 per stage; CSM 3x3 per stage plus 1x1 laterals
/// that bring stage s+1 to the width of stage s.
template <typename Scalar>
struct ProjectorParams {
  std::array<ag::Variable<Scalar>, kStages> ccm;
  std::array<ag::Variable<Scalar>, kStages> csm;
  std::array<ag::Variable<Scalar>, kStages - 1> lateral;

  static ProjectorParams random(const std::array<Index, kStages>& widths, std::uint64_t seed);
  /// Identity 1x1 mixing and centered-delta 3x3 kernels (test mode).
  static ProjectorParams identity(const std::array<Index, kStages>& widths);
  VariableList<Scalar> named() const;
};

template <typename Scalar>
Stages<Scalar> ccm_apply(const Stages<Scalar>& stages, const ProjectorParams<Scalar>& params);

/// Top-down: out4 = conv(m4); out_s = conv(m_s + upsample(lateral(out_{s+1}))).
template <typename Scalar>
Stages<Scalar> csm_apply(const Stages<Scalar>& mixed, const ProjectorParams<Scalar>& params);

/// Feature network followed by CCM and CSM.
template <typename Scalar>
class Projector {
 public:
  Projector(const FeatureNetworkSpec& spec, std::uint64_t projector_seed);

  Stages<Scalar> operator()(const ag::Variable<Scalar>& images) const;

  const FeatureNetwork<Scalar>& network() const { return network_; }
  const ProjectorParams<Scalar>& params() const { return params_; }
  VariableList<Scalar> frozen_weights() const;

 private:
  FeatureNetwork<Scalar> network_;
  ProjectorParams<Scalar> params_;
};

/// Global average pool of every level of every pyramid, concatenated per sample.
template <typename Scalar>
ag::Variable<Scalar> pooled_representation(const std::vector<Stages<Scalar>>& pyramids);

}  // namespace hpgan::features
