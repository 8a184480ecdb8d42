#include "hpgan/features.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hpgan::features {

std::string kind_name(NetworkKind kind) { return kind == NetworkKind::Conv ? "conv" : "attention"; }

NetworkKind parse_kind(const std::string& name) {
  if (name == "conv") return NetworkKind::Conv;
  if (name == "attention") return NetworkKind::PatchAttention;
  throw std::invalid_argument("unknown feature network kind '" + name + "'");
}

void FeatureNetworkSpec::validate() const {
  for (Index w : widths)
    if (w <= 0) throw std::invalid_argument("feature network widths must be positive");
  if (!weights_path.empty()) throw std::invalid_argument("loading external feature network weights is not supported");
  if (kind == NetworkKind::PatchAttention) {
    if (patch_size <= 0 || blocks < 0 || embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0 || embed_dim % 4 != 0) {
      throw std::invalid_argument("invalid patch-attention spec");
    }
  }
}

std::string FeatureNetworkSpec::to_string() const {
  std::ostringstream os;
  os << "kind=" << kind_name(kind) << " widths=" << widths[0] << '/' << widths[1] << '/' << widths[2] << '/'
     << widths[3];
  if (kind == NetworkKind::PatchAttention) {
    os << " patch=" << patch_size << " blocks=" << blocks << " dim=" << embed_dim << " heads=" << heads;
  }
  os << " seed=" << seed;
  return os.str();
}

FeatureNetworkSpec FeatureNetworkSpec::parse(const std::string& text) {
  FeatureNetworkSpec s;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("bad feature network field '" + tok + "'");
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "kind") {
      s.kind = parse_kind(val);
    } else if (key == "widths") {
      std::istringstream ws(val);
      std::string part;
      int i = 0;
      while (std::getline(ws, part, '/')) {
        if (i >= kStages) throw std::invalid_argument("widths needs 4 entries");
        s.widths[static_cast<std::size_t>(i++)] = std::stoll(part);
      }
      if (i != kStages) throw std::invalid_argument("widths needs 4 entries");
    } else if (key == "patch") {
      s.patch_size = std::stoi(val);
    } else if (key == "blocks") {
      s.blocks = std::stoi(val);
    } else if (key == "dim") {
      s.embed_dim = std::stoi(val);
    } else if (key == "heads") {
      s.heads = std::stoi(val);
    } else if (key == "seed") {
      s.seed = std::stoull(val);
    } else {
      throw std::invalid_argument("unknown feature network field '" + key + "'");
    }
  }
  s.validate();
  return s;
}

Index stage_size(Index resolution, int stage) { return resolution >> (stage + 2); }

template <typename Scalar>
MatrixX<Scalar> resize_matrix(Index in, Index out) {
  MatrixX<Scalar> m = MatrixX<Scalar>::Zero(out, in);
  if (out <= in && in % out == 0) {
    const Index f = in / out;
    for (Index i = 0; i < out; ++i) m.row(i).segment(i * f, f).setConstant(Scalar(1) / Scalar(f));
    return m;
  }
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    const Index i0 = std::min<Index>(static_cast<Index>(std::floor(src)), in - 1);
    const Index i1 = std::min<Index>(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    m(i, i0) += static_cast<Scalar>(1.0 - frac);
    m(i, i1) += static_cast<Scalar>(frac);
  }
  return m;
}

template <typename Scalar>
ag::Variable<Scalar> resize(const ag::Variable<Scalar>& x, Index height, Index width) {
  if (x.dim(2) == height && x.dim(3) == width) return x;
  return ag::separable(x, resize_matrix<Scalar>(x.dim(2), height), resize_matrix<Scalar>(x.dim(3), width));
}

namespace {

template <typename Scalar>
ag::Variable<Scalar> frozen(Tensor<double> t) {
  return ag::Variable<Scalar>(t.cast<Scalar>(), false);
}

// [N, C, H, W] -> [N*H*W, C]
template <typename Scalar>
ag::Variable<Scalar> grid_to_tokens(const ag::Variable<Scalar>& x) {
  const Index N = x.dim(0), C = x.dim(1), T = x.dim(2) * x.dim(3);
  std::vector<Index> idx(static_cast<std::size_t>(N * T * C));
  std::size_t k = 0;
  for (Index n = 0; n < N; ++n)
    for (Index t = 0; t < T; ++t)
      for (Index c = 0; c < C; ++c) idx[k++] = (n * C + c) * T + t;
  return ag::gather(x, std::move(idx), {N * T, C});
}

// [N*H*W, C] -> [N, C, H, W]
template <typename Scalar>
ag::Variable<Scalar> tokens_to_grid(const ag::Variable<Scalar>& x, Index N, Index H, Index W) {
  const Index C = x.dim(1), T = H * W;
  std::vector<Index> idx(static_cast<std::size_t>(N * T * C));
  std::size_t k = 0;
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index t = 0; t < T; ++t) idx[k++] = (n * T + t) * C + c;
  return ag::gather(x, std::move(idx), {N, C, H, W});
}

// Picks head slices out of the fused [N*T, 3D] projection. `part` selects q/k/v; transposed gives [B, dh, T].
template <typename Scalar>
ag::Variable<Scalar> split_heads(const ag::Variable<Scalar>& qkv, Index N, Index T, Index D, Index H, int part,
                                 bool transposed) {
  const Index dh = D / H;
  std::vector<Index> idx(static_cast<std::size_t>(N * H * T * dh));
  std::size_t k = 0;
  for (Index n = 0; n < N; ++n)
    for (Index h = 0; h < H; ++h) {
      if (!transposed) {
        for (Index t = 0; t < T; ++t)
          for (Index e = 0; e < dh; ++e) idx[k++] = (n * T + t) * 3 * D + part * D + h * dh + e;
      } else {
        for (Index e = 0; e < dh; ++e)
          for (Index t = 0; t < T; ++t) idx[k++] = (n * T + t) * 3 * D + part * D + h * dh + e;
      }
    }
  return transposed ? ag::gather(qkv, std::move(idx), {N * H, dh, T}) : ag::gather(qkv, std::move(idx), {N * H, T, dh});
}

template <typename Scalar>
ag::Variable<Scalar> merge_heads(const ag::Variable<Scalar>& heads, Index N, Index T, Index D, Index H) {
  const Index dh = D / H;
  std::vector<Index> idx(static_cast<std::size_t>(N * T * D));
  std::size_t k = 0;
  for (Index n = 0; n < N; ++n)
    for (Index t = 0; t < T; ++t)
      for (Index h = 0; h < H; ++h)
        for (Index e = 0; e < dh; ++e) idx[k++] = ((n * H + h) * T + t) * dh + e;
  return ag::gather(heads, std::move(idx), {N * T, D});
}

// 2-D sinusoidal position code for a g x g grid, tiled over the batch: [N*T, D].
template <typename Scalar>
Tensor<Scalar> position_code(Index N, Index g, Index D) {
  const Index quarter = D / 4;
  Tensor<Scalar> pe({N * g * g, D});
  for (Index y = 0; y < g; ++y)
    for (Index x = 0; x < g; ++x)
      for (Index i = 0; i < quarter; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
        const Scalar v[4] = {static_cast<Scalar>(std::sin(y * freq)), static_cast<Scalar>(std::cos(y * freq)),
                             static_cast<Scalar>(std::sin(x * freq)), static_cast<Scalar>(std::cos(x * freq))};
        for (Index n = 0; n < N; ++n) {
          const Index row = n * g * g + y * g + x;
          for (int j = 0; j < 4; ++j) pe.data[row * D + j * quarter + i] = v[j];
        }
      }
  return pe;
}

}  // namespace

template <typename Scalar>
FeatureNetwork<Scalar>::FeatureNetwork(const FeatureNetworkSpec& spec) : spec_(spec) {
  spec_.validate();
  RngStream rng = RngStream(spec_.seed).derive("feature-network/" + kind_name(spec_.kind));
  auto add = [&](const std::string& name, Tensor<double> t) { weights_.push_back({name, frozen<Scalar>(std::move(t))}); };
  if (spec_.kind == NetworkKind::Conv) {
    const Index stem = spec_.widths[0];
    add("stem", kaiming_uniform({stem, 3, 3, 3}, 27, kLeakyGain, rng));
    Index in = stem;
    for (int s = 0; s < kStages; ++s) {
      const Index out = spec_.widths[static_cast<std::size_t>(s)];
      add("stage" + std::to_string(s), kaiming_uniform({out, in, 3, 3}, in * 9, kLeakyGain, rng));
      in = out;
    }
  } else {
    const Index d = spec_.embed_dim, p = spec_.patch_size;
    add("patch_embed", kaiming_uniform({d, 3, p, p}, 3 * p * p, 1.0, rng));
    for (int b = 0; b < spec_.blocks; ++b) {
      const std::string pre = "block" + std::to_string(b) + ".";
      add(pre + "qkv", kaiming_uniform({3 * d, d}, d, 1.0, rng));
      add(pre + "proj", kaiming_uniform({d, d}, d, 1.0, rng));
      add(pre + "fc1", kaiming_uniform({2 * d, d}, d, kLeakyGain, rng));
      add(pre + "fc2", kaiming_uniform({d, 2 * d}, 2 * d, 1.0, rng));
    }
    for (int s = 0; s < kStages; ++s) {
      add("stage_head" + std::to_string(s),
          kaiming_uniform({spec_.widths[static_cast<std::size_t>(s)], d, 1, 1}, d, 1.0, rng));
    }
  }
}

template <typename Scalar>
Stages<Scalar> FeatureNetwork<Scalar>::forward(const ag::Variable<Scalar>& images) const {
  if (images.shape().size() != 4 || images.dim(1) != 3) throw std::invalid_argument("feature network expects [N, 3, R, R]");
  const Index R = images.dim(2);
  if (R % 32 != 0 || images.dim(3) != R) {
    throw std::invalid_argument("feature network resolution must be square and divisible by 32, got " +
                                std::to_string(R));
  }
  return spec_.kind == NetworkKind::Conv ? forward_conv(images) : forward_attention(images);
}

template <typename Scalar>
Stages<Scalar> FeatureNetwork<Scalar>::forward_conv(const ag::Variable<Scalar>& images) const {
  const ag::Variable<Scalar> none;
  const Scalar slope = Scalar(0.2);
  ag::Variable<Scalar> x = ag::leaky_relu(ag::conv2d(images, w(0), none, 2, 1), slope);
  Stages<Scalar> out;
  for (std::size_t s = 0; s < kStages; ++s) {
    x = ag::leaky_relu(ag::conv2d(x, w(1 + s), none, 2, 1), slope);
    out[s] = x;
  }
  return out;
}

template <typename Scalar>
Stages<Scalar> FeatureNetwork<Scalar>::forward_attention(const ag::Variable<Scalar>& images) const {
  const ag::Variable<Scalar> none;
  const Index N = images.dim(0), R = images.dim(2);
  const Index p = spec_.patch_size, D = spec_.embed_dim, H = spec_.heads;
  const Index g = R / p, T = g * g;
  const Scalar attn_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(D / H));

  ag::Variable<Scalar> x = grid_to_tokens(ag::conv2d(images, w(0), none, static_cast<int>(p), 0));
  x = ag::add(x, ag::constant(position_code<Scalar>(N, g, D)));
  std::size_t wi = 1;
  for (int b = 0; b < spec_.blocks; ++b) {
    const auto& wqkv = w(wi);
    const auto& wproj = w(wi + 1);
    const auto& wfc1 = w(wi + 2);
    const auto& wfc2 = w(wi + 3);
    wi += 4;
    ag::Variable<Scalar> qkv = ag::linear(ag::layer_norm(x, Scalar(1e-5)), wqkv, none);
    ag::Variable<Scalar> q = split_heads(qkv, N, T, D, H, 0, false);
    ag::Variable<Scalar> kt = split_heads(qkv, N, T, D, H, 1, true);
    ag::Variable<Scalar> v = split_heads(qkv, N, T, D, H, 2, false);
    ag::Variable<Scalar> scores = ag::scale(ag::bmm(q, kt), attn_scale);
    ag::Variable<Scalar> attn = ag::reshape(ag::softmax_rows(ag::reshape(scores, {N * H * T, T})), {N * H, T, T});
    ag::Variable<Scalar> mixed = merge_heads(ag::bmm(attn, v), N, T, D, H);
    x = ag::add(x, ag::linear(mixed, wproj, none));
    ag::Variable<Scalar> hidden = ag::gelu(ag::linear(ag::layer_norm(x, Scalar(1e-5)), wfc1, none));
    x = ag::add(x, ag::linear(hidden, wfc2, none));
  }
  ag::Variable<Scalar> grid = tokens_to_grid(x, N, g, g);
  Stages<Scalar> out;
  for (int s = 0; s < kStages; ++s) {
    const Index size = stage_size(R, s);
    out[static_cast<std::size_t>(s)] = ag::conv2d(resize(grid, size, size), w(wi + static_cast<std::size_t>(s)), none, 1, 0);
  }
  return out;
}

template <typename Scalar>
ProjectorParams<Scalar> ProjectorParams<Scalar>::random(const std::array<Index, kStages>& widths, std::uint64_t seed) {
  RngStream rng = RngStream(seed).derive("projector");
  ProjectorParams p;
  for (std::size_t s = 0; s < kStages; ++s) {
    const Index c = widths[s];
    p.ccm[s] = frozen<Scalar>(kaiming_uniform({c, c, 1, 1}, c, 1.0, rng));
    p.csm[s] = frozen<Scalar>(kaiming_uniform({c, c, 3, 3}, 9 * c, 1.0, rng));
  }
  for (std::size_t s = 0; s + 1 < kStages; ++s) {
    p.lateral[s] = frozen<Scalar>(kaiming_uniform({widths[s], widths[s + 1], 1, 1}, widths[s + 1], 1.0, rng));
  }
  return p;
}

template <typename Scalar>
ProjectorParams<Scalar> ProjectorParams<Scalar>::identity(const std::array<Index, kStages>& widths) {
  ProjectorParams p;
  for (std::size_t s = 0; s < kStages; ++s) {
    const Index c = widths[s];
    Tensor<double> one({c, c, 1, 1}), three({c, c, 3, 3});
    for (Index i = 0; i < c; ++i) {
      one.at(i, i, 0, 0) = 1.0;
      three.at(i, i, 1, 1) = 1.0;
    }
    p.ccm[s] = frozen<Scalar>(std::move(one));
    p.csm[s] = frozen<Scalar>(std::move(three));
  }
  for (std::size_t s = 0; s + 1 < kStages; ++s) {
    Tensor<double> lat({widths[s], widths[s + 1], 1, 1});
    for (Index i = 0; i < std::min(widths[s], widths[s + 1]); ++i) lat.at(i, i, 0, 0) = 1.0;
    p.lateral[s] = frozen<Scalar>(std::move(lat));
  }
  return p;
}

template <typename Scalar>
VariableList<Scalar> ProjectorParams<Scalar>::named() const {
  VariableList<Scalar> out;
  for (std::size_t s = 0; s < kStages; ++s) out.push_back({"ccm" + std::to_string(s), ccm[s]});
  for (std::size_t s = 0; s < kStages; ++s) out.push_back({"csm" + std::to_string(s), csm[s]});
  for (std::size_t s = 0; s + 1 < kStages; ++s) out.push_back({"lateral" + std::to_string(s), lateral[s]});
  return out;
}

template <typename Scalar>
Stages<Scalar> ccm_apply(const Stages<Scalar>& stages, const ProjectorParams<Scalar>& params) {
  const ag::Variable<Scalar> none;
  Stages<Scalar> out;
  for (std::size_t s = 0; s < kStages; ++s) {
    if (stages[s].dim(1) != params.ccm[s].dim(1)) {
      throw std::invalid_argument("ccm_apply: stage " + std::to_string(s) + " has " + std::to_string(stages[s].dim(1)) +
                                  " channels, projector expects " + std::to_string(params.ccm[s].dim(1)));
    }
    out[s] = ag::conv2d(stages[s], params.ccm[s], none, 1, 0);
  }
  return out;
}

template <typename Scalar>
Stages<Scalar> csm_apply(const Stages<Scalar>& mixed, const ProjectorParams<Scalar>& params) {
  const ag::Variable<Scalar> none;
  Stages<Scalar> out;
  out[kStages - 1] = ag::conv2d(mixed[kStages - 1], params.csm[kStages - 1], none, 1, 1);
  for (int s = kStages - 2; s >= 0; --s) {
    const auto i = static_cast<std::size_t>(s);
    ag::Variable<Scalar> deeper = ag::conv2d(out[i + 1], params.lateral[i], none, 1, 0);
    ag::Variable<Scalar> merged = ag::add(mixed[i], resize(deeper, mixed[i].dim(2), mixed[i].dim(3)));
    out[i] = ag::conv2d(merged, params.csm[i], none, 1, 1);
  }
  return out;
}

template <typename Scalar>
Projector<Scalar>::Projector(const FeatureNetworkSpec& spec, std::uint64_t projector_seed)
    : network_(spec), params_(ProjectorParams<Scalar>::random(spec.widths, projector_seed)) {}

template <typename Scalar>
Stages<Scalar> Projector<Scalar>::operator()(const ag::Variable<Scalar>& images) const {
  return csm_apply(ccm_apply(network_.forward(images), params_), params_);
}

template <typename Scalar>
VariableList<Scalar> Projector<Scalar>::frozen_weights() const {
  VariableList<Scalar> out = network_.weights();
  for (auto& nv : params_.named()) out.push_back(nv);
  return out;
}

template <typename Scalar>
ag::Variable<Scalar> pooled_representation(const std::vector<Stages<Scalar>>& pyramids) {
  std::vector<ag::Variable<Scalar>> parts;
  for (const auto& pyr : pyramids) {
    for (const auto& level : pyr) {
      if (!parts.empty() && level.dim(0) != parts.front().dim(0)) {
        throw std::invalid_argument("pooled_representation: batch size mismatch");
      }
      parts.push_back(ag::spatial_mean(level));
    }
  }
  return ag::concat_features(parts);
}

#define HPGAN_INSTANTIATE_FEATURES(S)                                                                \
  template MatrixX<S> resize_matrix<S>(Index, Index);                                                \
  template ag::Variable<S> resize(const ag::Variable<S>&, Index, Index);                             \
  template class FeatureNetwork<S>;                                                                  \
  template struct ProjectorParams<S>;                                                                \
  template class Projector<S>;                                                                       \
  template Stages<S> ccm_apply(const Stages<S>&, const ProjectorParams<S>&);                         \
  template Stages<S> csm_apply(const Stages<S>&, const ProjectorParams<S>&);                         \
  template ag::Variable<S> pooled_representation(const std::vector<Stages<S>>&);

HPGAN_INSTANTIATE_FEATURES(float)
HPGAN_INSTANTIATE_FEATURES(double)

#undef HPGAN_INSTANTIATE_FEATURES

}  // namespace hpgan::features
