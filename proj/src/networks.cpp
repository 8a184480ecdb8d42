#include "hpgan/networks.hpp"

#include <cmath>
#include <stdexcept>

namespace hpgan::nn {

namespace {

constexpr double kSlope = 0.2;
constexpr double kDiscBnEps = 1e-5;

template <typename Scalar>
ag::Variable<Scalar> param(Tensor<double> t) {
  return ag::parameter(t.cast<Scalar>());
}

template <typename Scalar>
ag::Variable<Scalar> zeros_param(Shape shape) {
  return ag::parameter(Tensor<Scalar>(std::move(shape)));
}

template <typename Scalar>
MatrixX<Scalar> nearest_up2(Index n) {
  MatrixX<Scalar> m = MatrixX<Scalar>::Zero(2 * n, n);
  for (Index i = 0; i < n; ++i) m(2 * i, i) = m(2 * i + 1, i) = Scalar(1);
  return m;
}

template <typename Scalar>
void normalize(VectorX<Scalar>& x) {
  const Scalar n = x.norm();
  if (n > Scalar(1e-12)) x /= n;
}

}  // namespace

// ---------------------------------------------------------------------------------------------

template <typename Scalar>
SpectralState<Scalar> SpectralState<Scalar>::init(Index out, Index rest, RngStream& rng) {
  SpectralState s;
  s.u = Tensor<Scalar>({out});
  s.v = Tensor<Scalar>({rest});
  for (Index i = 0; i < out; ++i) s.u.data[i] = static_cast<Scalar>(rng.normal());
  for (Index i = 0; i < rest; ++i) s.v.data[i] = static_cast<Scalar>(rng.normal());
  VectorX<Scalar> u = s.u.data.matrix(), v = s.v.data.matrix();
  normalize(u);
  normalize(v);
  s.u.data = u.array();
  s.v.data = v.array();
  return s;
}

template <typename Scalar>
ag::Variable<Scalar> spectral_normalize(const ag::Variable<Scalar>& weight, SpectralState<Scalar>& state, bool update) {
  const Index out = weight.dim(0);
  const Index rest = weight.size() / out;
  if (state.u.size() != out || state.v.size() != rest) throw std::invalid_argument("spectral state shape mismatch");
  Eigen::Map<const RowMatrixX<Scalar>> w(weight.value().ptr(), out, rest);
  VectorX<Scalar> u = state.u.data.matrix(), v = state.v.data.matrix();
  if (update) {
    v = w.transpose() * u;
    normalize(v);
    u = w * v;
    normalize(u);
    state.u.data = u.array();
    state.v.data = v.array();
  }
  const Scalar sigma = u.dot(w * v);
  state.sigma = sigma;
  if (std::abs(sigma) < Scalar(1e-12)) return weight;
  Tensor<Scalar> value(weight.shape(), weight.value().data / sigma);
  return ag::make_result<Scalar>(std::move(value), {weight}, [weight, u, v, sigma](const ag::Node<Scalar>& self) {
    const Index o = u.size(), r = v.size();
    Eigen::Map<const RowMatrixX<Scalar>> g(self.grad.ptr(), o, r);
    Eigen::Map<const RowMatrixX<Scalar>> wm(weight.value().ptr(), o, r);
    const Scalar inner = (g.array() * wm.array()).sum();
    RowMatrixX<Scalar> dw = g / sigma - (inner / (sigma * sigma)) * (u * v.transpose());
    accumulate_grad(*weight.node(), Tensor<Scalar>(weight.shape(), Eigen::Map<ArrayX<Scalar>>(dw.data(), dw.size())));
  });
}

template <typename Scalar>
SnConv<Scalar> SnConv<Scalar>::make(Index in, Index out, int kernel, int stride, int pad, RngStream& rng) {
  SnConv c;
  c.weight = param<Scalar>(kaiming_uniform({out, in, kernel, kernel}, in * kernel * kernel, kLeakyGain, rng));
  c.bias = zeros_param<Scalar>({out});
  c.sn = SpectralState<Scalar>::init(out, in * kernel * kernel, rng);
  c.stride = stride;
  c.pad = pad;
  return c;
}

template <typename Scalar>
ag::Variable<Scalar> SnConv<Scalar>::operator()(const ag::Variable<Scalar>& x, bool update_sn) {
  return ag::conv2d(x, spectral_normalize(weight, sn, update_sn), bias, stride, pad);
}

// ---------------------------------------------------------------------------------------------

void GeneratorSpec::validate() const {
  if (z_dim <= 0) throw std::invalid_argument("z_dim must be positive");
  if (resolution < 8 || (resolution & (resolution - 1)) != 0) {
    throw std::invalid_argument("generator resolution must be a power of two >= 8");
  }
  if (base_channels <= 0 || min_channels <= 0) throw std::invalid_argument("generator channels must be positive");
}

std::vector<Index> GeneratorSpec::channels() const {
  std::vector<Index> out;
  Index c = base_channels;
  for (Index r = 4; r <= resolution; r *= 2) {
    out.push_back(std::max(c, min_channels));
    c /= 2;
  }
  return out;
}

template <typename Scalar>
Generator<Scalar>::Generator(const GeneratorSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  RngStream rng = RngStream(seed).derive("generator");
  const auto ch = spec_.channels();
  auto add = [&](std::string name, ag::Variable<Scalar> v) { params_.push_back({std::move(name), std::move(v)}); };
  add("g.fc.weight", param<Scalar>(kaiming_uniform({16 * ch[0], spec_.z_dim}, spec_.z_dim, kLeakyGain, rng)));
  add("g.fc.bias", zeros_param<Scalar>({16 * ch[0]}));
  for (std::size_t i = 1; i < ch.size(); ++i) {
    const std::string pre = "g.block" + std::to_string(i);
    add(pre + ".weight", param<Scalar>(kaiming_uniform({ch[i], ch[i - 1], 3, 3}, ch[i - 1] * 9, kLeakyGain, rng)));
    add(pre + ".bias", zeros_param<Scalar>({ch[i]}));
    if (i >= 2) {
      const std::string sle = "g.sle" + std::to_string(i);
      add(sle + ".fc1.weight", param<Scalar>(kaiming_uniform({ch[i], ch[i - 2]}, ch[i - 2], kLeakyGain, rng)));
      add(sle + ".fc1.bias", zeros_param<Scalar>({ch[i]}));
      add(sle + ".fc2.weight", param<Scalar>(kaiming_uniform({ch[i], ch[i]}, ch[i], 1.0, rng)));
      add(sle + ".fc2.bias", zeros_param<Scalar>({ch[i]}));
    }
  }
  add("g.to_rgb.weight", param<Scalar>(kaiming_uniform({3, ch.back(), 3, 3}, ch.back() * 9, 1.0, rng)));
  add("g.to_rgb.bias", zeros_param<Scalar>({3}));
}

template <typename Scalar>
const ag::Variable<Scalar>& Generator<Scalar>::p(const std::string& name) const {
  for (const auto& nv : params_)
    if (nv.name == name) return nv.var;
  throw std::logic_error("generator has no parameter " + name);
}

template <typename Scalar>
ag::Variable<Scalar> Generator<Scalar>::forward(const ag::Variable<Scalar>& z) const {
  if (z.shape().size() != 2 || z.dim(1) != spec_.z_dim) {
    throw std::invalid_argument("generator expects z of shape [N, " + std::to_string(spec_.z_dim) + "], got " +
                                shape_string(z.shape()));
  }
  const Scalar slope = Scalar(kSlope);
  const auto ch = spec_.channels();
  const Index n = z.dim(0);
  ag::Variable<Scalar> x = ag::leaky_relu(ag::linear(z, p("g.fc.weight"), p("g.fc.bias")), slope);
  x = ag::reshape(x, {n, ch[0], 4, 4});
  std::vector<ag::Variable<Scalar>> feats{x};
  for (std::size_t i = 1; i < ch.size(); ++i) {
    const std::string pre = "g.block" + std::to_string(i);
    const Index size = x.dim(2);
    x = ag::separable(x, nearest_up2<Scalar>(size), nearest_up2<Scalar>(size));
    x = ag::leaky_relu(ag::conv2d(x, p(pre + ".weight"), p(pre + ".bias"), 1, 1), slope);
    if (i >= 2) {
      const std::string sle = "g.sle" + std::to_string(i);
      ag::Variable<Scalar> s = ag::spatial_mean(feats[i - 2]);
      s = ag::leaky_relu(ag::linear(s, p(sle + ".fc1.weight"), p(sle + ".fc1.bias")), slope);
      s = ag::sigmoid(ag::linear(s, p(sle + ".fc2.weight"), p(sle + ".fc2.bias")));
      x = ag::mul_channels(x, s);
    }
    feats.push_back(x);
  }
  return ag::tanh(ag::conv2d(x, p("g.to_rgb.weight"), p("g.to_rgb.bias"), 1, 1));
}

// ---------------------------------------------------------------------------------------------

template <typename Scalar>
ag::Variable<Scalar> LogitSet<Scalar>::network_sum(int net) const {
  ag::Variable<Scalar> total;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    if (network[k] != net) continue;
    total = total.defined() ? ag::add(total, scalar(k)) : scalar(k);
  }
  if (!total.defined()) throw std::invalid_argument("logit set has no maps for network " + std::to_string(net));
  return total;
}

void DiscriminatorSpec::validate() const {
  if (hidden <= 0 || raw_base <= 0) throw std::invalid_argument("discriminator widths must be positive");
  if (projected && widths.empty()) throw std::invalid_argument("projected discriminator needs at least one network");
}

namespace {

template <typename Scalar>
NormParams<Scalar> make_norm(Index channels) {
  return {ag::parameter(Tensor<Scalar>::constant({channels}, Scalar(1))), zeros_param<Scalar>({channels})};
}

}  // namespace

template <typename Scalar>
DiscriminatorBank<Scalar>::DiscriminatorBank(const DiscriminatorSpec& spec, Index resolution, std::uint64_t seed)
    : spec_(spec) {
  spec_.validate();
  RngStream root = RngStream(seed).derive("discriminator");
  if (spec_.projected) {
    for (std::size_t n = 0; n < spec_.widths.size(); ++n) {
      for (int s = 0; s < features::kStages; ++s) {
        RngStream rng = root.derive(static_cast<std::uint64_t>(n * features::kStages + static_cast<std::size_t>(s)));
        const Index c = spec_.widths[n][static_cast<std::size_t>(s)];
        std::vector<SnConv<Scalar>> head;
        head.push_back(SnConv<Scalar>::make(c, spec_.hidden, 3, 1, 1, rng));
        head.push_back(SnConv<Scalar>::make(spec_.hidden, spec_.hidden, 3, 1, 1, rng));
        head.push_back(SnConv<Scalar>::make(spec_.hidden, 1, 1, 1, 0, rng));
        heads_.push_back(std::move(head));
        norms_.push_back({make_norm<Scalar>(spec_.hidden), make_norm<Scalar>(spec_.hidden)});
        head_network_.push_back(static_cast<int>(n));
      }
    }
  } else {
    if (resolution < 16) throw std::invalid_argument("raw discriminator needs resolution >= 16");
    RngStream rng = root.derive("raw");
    const Index b = spec_.raw_base;
    const Index widths[5] = {3, b, 2 * b, 4 * b, 4 * b};
    std::vector<SnConv<Scalar>> head;
    for (int i = 0; i < 4; ++i) head.push_back(SnConv<Scalar>::make(widths[i], widths[i + 1], 3, 2, 1, rng));
    head.push_back(SnConv<Scalar>::make(widths[4], 1, 1, 1, 0, rng));
    heads_.push_back(std::move(head));
    norms_.push_back({});
    for (int i = 1; i <= 4; ++i) norms_.back().push_back(make_norm<Scalar>(widths[i]));
    head_network_.push_back(0);
  }
}

namespace {

template <typename Scalar>
ag::Variable<Scalar> run_head(std::vector<SnConv<Scalar>>& head, const std::vector<NormParams<Scalar>>& norms,
                              ag::Variable<Scalar> x, bool update_sn) {
  for (std::size_t j = 0; j < head.size(); ++j) {
    x = head[j](x, update_sn);
    if (j + 1 < head.size()) {
      x = ag::batch_norm2d(x, norms[j].gamma, norms[j].beta, Scalar(kDiscBnEps));
      x = ag::leaky_relu(x, Scalar(kSlope));
    }
  }
  return x;
}

}  // namespace

template <typename Scalar>
LogitSet<Scalar> DiscriminatorBank<Scalar>::forward(const std::vector<features::Stages<Scalar>>& pyramids,
                                                    bool update_sn) {
  if (!spec_.projected) throw std::logic_error("raw discriminator takes images, not pyramids");
  if (pyramids.size() != spec_.widths.size()) {
    throw std::invalid_argument("discriminator bank expects " + std::to_string(spec_.widths.size()) + " pyramids");
  }
  LogitSet<Scalar> out;
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    const auto n = static_cast<std::size_t>(head_network_[h]);
    const std::size_t level = h % features::kStages;
    out.maps.push_back(run_head(heads_[h], norms_[h], pyramids[n][level], update_sn));
    out.network.push_back(head_network_[h]);
  }
  return out;
}

template <typename Scalar>
LogitSet<Scalar> DiscriminatorBank<Scalar>::forward_raw(const ag::Variable<Scalar>& images, bool update_sn) {
  if (spec_.projected) throw std::logic_error("projected discriminator takes pyramids, not images");
  LogitSet<Scalar> out;
  out.maps.push_back(run_head(heads_[0], norms_[0], images, update_sn));
  out.network.push_back(0);
  return out;
}

namespace {

template <typename Scalar>
std::string head_name(const DiscriminatorSpec& spec, std::size_t h, std::size_t j) {
  const std::string conv = ".c" + std::to_string(j);
  if (!spec.projected) return "d.raw" + conv;
  return "d.n" + std::to_string(h / features::kStages) + ".l" + std::to_string(h % features::kStages) + conv;
}

template <typename Scalar>
std::string norm_name(const DiscriminatorSpec& spec, std::size_t h, std::size_t j) {
  const std::string conv = head_name<Scalar>(spec, h, j);
  return conv.substr(0, conv.size() - 1 - std::to_string(j).size()) + "bn" + std::to_string(j);
}

}  // namespace

template <typename Scalar>
VariableList<Scalar> DiscriminatorBank<Scalar>::parameters() const {
  VariableList<Scalar> out;
  for (std::size_t h = 0; h < heads_.size(); ++h)
    for (std::size_t j = 0; j < heads_[h].size(); ++j) {
      const std::string name = head_name<Scalar>(spec_, h, j);
      out.push_back({name + ".weight", heads_[h][j].weight});
      out.push_back({name + ".bias", heads_[h][j].bias});
      if (j < norms_[h].size()) {
        const std::string bn = norm_name<Scalar>(spec_, h, j);
        out.push_back({bn + ".gamma", norms_[h][j].gamma});
        out.push_back({bn + ".beta", norms_[h][j].beta});
      }
    }
  return out;
}

template <typename Scalar>
TensorRefs<Scalar> DiscriminatorBank<Scalar>::state() {
  TensorRefs<Scalar> out;
  for (std::size_t h = 0; h < heads_.size(); ++h)
    for (std::size_t j = 0; j < heads_[h].size(); ++j) {
      const std::string name = head_name<Scalar>(spec_, h, j);
      auto& c = heads_[h][j];
      out.emplace_back(name + ".weight", &c.weight.mutable_value());
      out.emplace_back(name + ".bias", &c.bias.mutable_value());
      out.emplace_back(name + ".sn_u", &c.sn.u);
      out.emplace_back(name + ".sn_v", &c.sn.v);
      if (j < norms_[h].size()) {
        const std::string bn = norm_name<Scalar>(spec_, h, j);
        out.emplace_back(bn + ".gamma", &norms_[h][j].gamma.mutable_value());
        out.emplace_back(bn + ".beta", &norms_[h][j].beta.mutable_value());
      }
    }
  return out;
}

// ---------------------------------------------------------------------------------------------

template <typename Scalar>
LinearHead<Scalar>::LinearHead(Index in_dim, Index width, std::uint64_t seed) : in_dim_(in_dim), width_(width) {
  if (in_dim <= 0 || width <= 0) throw std::invalid_argument("linear head dimensions must be positive");
  RngStream rng = RngStream(seed).derive("linear-head");
  Index fan_in = in_dim;
  for (int l = 1; l <= 3; ++l) {
    const std::string pre = "head.fc" + std::to_string(l);
    const double gain = l < 3 ? kLeakyGain : 1.0;
    params_.push_back({pre + ".weight", param<Scalar>(kaiming_uniform({width, fan_in}, fan_in, gain, rng))});
    params_.push_back({pre + ".bias", zeros_param<Scalar>({width})});
    fan_in = width;
  }
  for (int l = 1; l <= 2; ++l) {
    const std::string pre = "head.bn" + std::to_string(l);
    params_.push_back({pre + ".gamma", ag::parameter(Tensor<Scalar>::constant({width}, Scalar(1)))});
    params_.push_back({pre + ".beta", zeros_param<Scalar>({width})});
  }
  for (std::size_t l = 0; l < 2; ++l) {
    running_mean_[l] = Tensor<Scalar>({width});
    running_var_[l] = Tensor<Scalar>::constant({width}, Scalar(1));
  }
}

template <typename Scalar>
ag::Variable<Scalar> LinearHead<Scalar>::forward(const ag::Variable<Scalar>& v) {
  if (v.shape().size() != 2 || v.dim(1) != in_dim_) {
    throw std::invalid_argument("linear head expects [N, " + std::to_string(in_dim_) + "], got " + shape_string(v.shape()));
  }
  if (v.dim(0) < 2) throw std::invalid_argument("batch-norm requires batch >= 2");
  ag::Variable<Scalar> x = v;
  for (std::size_t l = 0; l < 3; ++l) {
    x = ag::linear(x, params_[2 * l].var, params_[2 * l + 1].var);
    if (l < 2) {
      const auto& h = x.value();
      const Index n = h.dim(0);
      Eigen::Map<const RowMatrixX<Scalar>> hm(h.ptr(), n, width_);
      const VectorX<Scalar> mu = hm.colwise().mean().transpose();
      const VectorX<Scalar> var = (hm.rowwise() - mu.transpose()).array().square().colwise().sum().transpose() /
                                  static_cast<Scalar>(n - 1);
      const Scalar m = Scalar(kBnMomentum);
      running_mean_[l].data = (Scalar(1) - m) * running_mean_[l].data + m * mu.array();
      running_var_[l].data = (Scalar(1) - m) * running_var_[l].data + m * var.array();
      x = ag::relu(ag::batch_norm(x, params_[6 + 2 * l].var, params_[7 + 2 * l].var, Scalar(kBnEps)));
    }
  }
  return x;
}

template <typename Scalar>
TensorRefs<Scalar> LinearHead<Scalar>::state() {
  TensorRefs<Scalar> out = tensor_refs(params_);
  for (std::size_t l = 0; l < 2; ++l) {
    out.emplace_back("head.bn" + std::to_string(l + 1) + ".running_mean", &running_mean_[l]);
    out.emplace_back("head.bn" + std::to_string(l + 1) + ".running_var", &running_var_[l]);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------

template <typename Scalar>
Adam<Scalar>::Adam(VariableList<Scalar> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (options_.lr <= 0 || options_.beta1 < 0 || options_.beta1 >= 1 || options_.beta2 < 0 || options_.beta2 >= 1 ||
      options_.eps <= 0) {
    throw std::invalid_argument("invalid Adam options");
  }
  for (const auto& nv : params_) {
    m_.emplace_back(nv.var.shape());
    v_.emplace_back(nv.var.shape());
  }
}

template <typename Scalar>
void Adam<Scalar>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<Scalar>(options_.beta1), b2 = static_cast<Scalar>(options_.beta2);
  const auto step = static_cast<Scalar>(options_.lr / c1);
  const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
  const auto eps = static_cast<Scalar>(options_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& var = params_[i].var;
    if (!var.has_grad()) continue;
    const auto& g = var.grad().data;
    m_[i].data = b1 * m_[i].data + (Scalar(1) - b1) * g;
    v_[i].data = b2 * v_[i].data + (Scalar(1) - b2) * g.square();
    var.mutable_value().data -= step * m_[i].data / ((v_[i].data * inv_c2).sqrt() + eps);
  }
}

template <typename Scalar>
void Adam<Scalar>::zero_grad() {
  for (auto& nv : params_) nv.var.zero_grad();
}

template <typename Scalar>
TensorRefs<Scalar> Adam<Scalar>::state(const std::string& prefix) {
  TensorRefs<Scalar> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(prefix + params_[i].name + ".m", &m_[i]);
    out.emplace_back(prefix + params_[i].name + ".v", &v_[i]);
  }
  return out;
}

template <typename Scalar>
void ema_update(VariableList<Scalar>& shadow, const VariableList<Scalar>& current, double decay) {
  if (decay < 0 || decay >= 1) throw std::invalid_argument("ema decay must be in [0, 1)");
  if (shadow.size() != current.size()) throw std::invalid_argument("ema: parameter count mismatch");
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    if (shadow[i].var.shape() != current[i].var.shape()) {
      throw std::invalid_argument("ema: shape mismatch for " + current[i].name);
    }
  }
  const auto d = static_cast<Scalar>(decay);
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    auto& s = shadow[i].var.mutable_value().data;
    s = d * s + (Scalar(1) - d) * current[i].var.value().data;
  }
}

#define HPGAN_INSTANTIATE_NN(S)                                                                     \
  template struct SpectralState<S>;                                                                 \
  template ag::Variable<S> spectral_normalize(const ag::Variable<S>&, SpectralState<S>&, bool);     \
  template struct SnConv<S>;                                                                        \
  template class Generator<S>;                                                                      \
  template struct LogitSet<S>;                                                                      \
  template class DiscriminatorBank<S>;                                                              \
  template class LinearHead<S>;                                                                     \
  template class Adam<S>;                                                                           \
  template void ema_update(VariableList<S>&, const VariableList<S>&, double);

HPGAN_INSTANTIATE_NN(float)
HPGAN_INSTANTIATE_NN(double)

#undef HPGAN_INSTANTIATE_NN

}  // namespace hpgan::nn
