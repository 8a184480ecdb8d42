#include "hpgan/augment.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hpgan::augment {

void AugmentPolicy::validate() const {
  if (!(translation_ratio > 0 && translation_ratio <= 1)) throw std::invalid_argument("translation ratio must be in (0, 1]");
  if (!(cutout_ratio > 0 && cutout_ratio <= 1)) throw std::invalid_argument("cutout ratio must be in (0, 1]");
  if (brightness < 0) throw std::invalid_argument("brightness range must be nonnegative");
  if (saturation_lo > saturation_hi || contrast_lo > contrast_hi) throw std::invalid_argument("empty color range");
}

AugmentPolicy AugmentPolicy::parse(const std::string& ops) {
  AugmentPolicy p;
  p.color = p.translation = p.cutout = false;
  std::stringstream ss(ops);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    item = item.substr(b, e - b + 1);
    if (item == "color") p.color = true;
    else if (item == "translation") p.translation = true;
    else if (item == "cutout") p.cutout = true;
    else if (item == "none") continue;
    else throw std::invalid_argument("unknown augmentation op '" + item + "'");
  }
  return p;
}

std::string AugmentPolicy::ops_string() const {
  std::string s;
  auto add = [&s](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ",";
    s += name;
  };
  add(color, "color");
  add(translation, "translation");
  add(cutout, "cutout");
  return s.empty() ? "none" : s;
}

AugmentParams draw_params(const AugmentPolicy& policy, Index batch, Index height, Index width, RngStream& rng) {
  policy.validate();
  AugmentParams p;
  const auto n = static_cast<std::size_t>(batch);
  if (policy.color) {
    p.brightness.resize(n);
    p.saturation.resize(n);
    p.contrast.resize(n);
    for (std::size_t i = 0; i < n; ++i) p.brightness[i] = rng.uniform(-policy.brightness, policy.brightness);
    for (std::size_t i = 0; i < n; ++i) p.saturation[i] = rng.uniform(policy.saturation_lo, policy.saturation_hi);
    for (std::size_t i = 0; i < n; ++i) p.contrast[i] = rng.uniform(policy.contrast_lo, policy.contrast_hi);
  }
  if (policy.translation) {
    const int sx = static_cast<int>(static_cast<double>(width) * policy.translation_ratio + 0.5);
    const int sy = static_cast<int>(static_cast<double>(height) * policy.translation_ratio + 0.5);
    p.shift_x.resize(n);
    p.shift_y.resize(n);
    for (std::size_t i = 0; i < n; ++i) p.shift_x[i] = static_cast<int>(rng.below(2 * sx + 1)) - sx;
    for (std::size_t i = 0; i < n; ++i) p.shift_y[i] = static_cast<int>(rng.below(2 * sy + 1)) - sy;
  }
  if (policy.cutout) {
    p.cutout_size = static_cast<int>(static_cast<double>(height) * policy.cutout_ratio + 0.5);
    const auto span_y = static_cast<std::uint64_t>(height + (1 - p.cutout_size % 2));
    const auto span_x = static_cast<std::uint64_t>(width + (1 - p.cutout_size % 2));
    p.cutout_x.resize(n);
    p.cutout_y.resize(n);
    for (std::size_t i = 0; i < n; ++i) p.cutout_x[i] = static_cast<int>(rng.below(span_x));
    for (std::size_t i = 0; i < n; ++i) p.cutout_y[i] = static_cast<int>(rng.below(span_y));
  }
  return p;
}

namespace {

template <typename Scalar>
Tensor<Scalar> per_sample(const std::vector<double>& v) {
  Tensor<Scalar> t({static_cast<Index>(v.size())});
  for (std::size_t i = 0; i < v.size(); ++i) t.data[static_cast<Index>(i)] = static_cast<Scalar>(v[i]);
  return t;
}

// y = (x - m) * s + m, with m the mean over channels at each pixel.
template <typename Scalar>
ag::Variable<Scalar> saturation(const ag::Variable<Scalar>& x, const std::vector<double>& factor) {
  const Index N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<Scalar> out(x.shape());
  for (Index n = 0; n < N; ++n) {
    const Scalar s = static_cast<Scalar>(factor[static_cast<std::size_t>(n)]);
    ArrayX<Scalar> m = ArrayX<Scalar>::Zero(HW);
    for (Index c = 0; c < C; ++c) m += x.value().data.segment((n * C + c) * HW, HW);
    m /= Scalar(C);
    for (Index c = 0; c < C; ++c) {
      out.data.segment((n * C + c) * HW, HW) = (x.value().data.segment((n * C + c) * HW, HW) - m) * s + m;
    }
  }
  return ag::make_result<Scalar>(std::move(out), {x}, [x, factor, N, C, HW](const ag::Node<Scalar>& self) {
    Tensor<Scalar> dx(x.shape());
    for (Index n = 0; n < N; ++n) {
      const Scalar s = static_cast<Scalar>(factor[static_cast<std::size_t>(n)]);
      ArrayX<Scalar> gm = ArrayX<Scalar>::Zero(HW);
      for (Index c = 0; c < C; ++c) gm += self.grad.data.segment((n * C + c) * HW, HW);
      gm *= (Scalar(1) - s) / Scalar(C);
      for (Index c = 0; c < C; ++c) {
        dx.data.segment((n * C + c) * HW, HW) = self.grad.data.segment((n * C + c) * HW, HW) * s + gm;
      }
    }
    ag::accumulate_grad(*x.node(), std::move(dx));
  });
}

// y = (x - m) * c + m, with m the mean over the whole sample.
template <typename Scalar>
ag::Variable<Scalar> contrast(const ag::Variable<Scalar>& x, const std::vector<double>& factor) {
  const Index N = x.dim(0), M = x.size() / N;
  Tensor<Scalar> out(x.shape());
  for (Index n = 0; n < N; ++n) {
    const Scalar c = static_cast<Scalar>(factor[static_cast<std::size_t>(n)]);
    const auto seg = x.value().data.segment(n * M, M);
    const Scalar m = seg.mean();
    out.data.segment(n * M, M) = (seg - m) * c + m;
  }
  return ag::make_result<Scalar>(std::move(out), {x}, [x, factor, N, M](const ag::Node<Scalar>& self) {
    Tensor<Scalar> dx(x.shape());
    for (Index n = 0; n < N; ++n) {
      const Scalar c = static_cast<Scalar>(factor[static_cast<std::size_t>(n)]);
      const auto g = self.grad.data.segment(n * M, M);
      dx.data.segment(n * M, M) = g * c + g.mean() * (Scalar(1) - c);
    }
    ag::accumulate_grad(*x.node(), std::move(dx));
  });
}

template <typename Scalar>
ag::Variable<Scalar> translate(const ag::Variable<Scalar>& x, const std::vector<int>& sx, const std::vector<int>& sy) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::vector<Index> idx(static_cast<std::size_t>(x.size()));
  std::size_t k = 0;
  for (Index n = 0; n < N; ++n) {
    const Index dx = sx[static_cast<std::size_t>(n)], dy = sy[static_cast<std::size_t>(n)];
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < H; ++h)
        for (Index w = 0; w < W; ++w) {
          const Index ih = h - dy, iw = w - dx;
          idx[k++] = (ih < 0 || ih >= H || iw < 0 || iw >= W) ? -1 : ((n * C + c) * H + ih) * W + iw;
        }
  }
  return ag::gather(x, std::move(idx), x.shape());
}

template <typename Scalar>
ag::Variable<Scalar> cutout(const ag::Variable<Scalar>& x, const AugmentParams& p) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<Scalar> mask = Tensor<Scalar>::constant(x.shape(), Scalar(1));
  const int half = p.cutout_size / 2;
  for (Index n = 0; n < N; ++n) {
    const Index y0 = std::max<Index>(0, p.cutout_y[static_cast<std::size_t>(n)] - half);
    const Index y1 = std::min<Index>(H, p.cutout_y[static_cast<std::size_t>(n)] + half);
    const Index x0 = std::max<Index>(0, p.cutout_x[static_cast<std::size_t>(n)] - half);
    const Index x1 = std::min<Index>(W, p.cutout_x[static_cast<std::size_t>(n)] + half);
    for (Index c = 0; c < C; ++c)
      for (Index h = y0; h < y1; ++h)
        for (Index w = x0; w < x1; ++w) mask.at(n, c, h, w) = Scalar(0);
  }
  return ag::mul(x, ag::constant(std::move(mask)));
}

Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

template <typename Scalar>
ag::Variable<Scalar> apply_augment(const ag::Variable<Scalar>& batch, const AugmentPolicy& policy,
                                   const AugmentParams& params) {
  if (batch.shape().size() != 4) throw std::invalid_argument("apply_augment: expected an NCHW batch");
  ag::Variable<Scalar> x = batch;
  if (policy.color) {
    x = ag::add_samples(x, ag::constant(per_sample<Scalar>(params.brightness)));
    x = saturation(x, params.saturation);
    x = contrast(x, params.contrast);
  }
  if (policy.translation) x = translate(x, params.shift_x, params.shift_y);
  if (policy.cutout) x = cutout(x, params);
  return x;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

template <typename Scalar>
MatrixX<Scalar> gaussian_filter_matrix(Index n, double sigma) {
  const std::vector<double> k = gaussian_kernel(sigma);
  const Index radius = static_cast<Index>(k.size() / 2);
  MatrixX<Scalar> m = MatrixX<Scalar>::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index t = -radius; t <= radius; ++t) m(i, reflect(i + t, n)) += static_cast<Scalar>(k[static_cast<std::size_t>(t + radius)]);
  return m;
}

template <typename Scalar>
ag::Variable<Scalar> gaussian_blur(const ag::Variable<Scalar>& batch, double sigma) {
  if (sigma < 0) throw std::invalid_argument("gaussian_blur: sigma must be nonnegative");
  if (sigma == 0) return batch;
  return ag::separable(batch, gaussian_filter_matrix<Scalar>(batch.dim(2), sigma),
                       gaussian_filter_matrix<Scalar>(batch.dim(3), sigma));
}

double blur_sigma(std::int64_t images_seen, const BlurSchedule& schedule) {
  if (images_seen < 0) throw std::invalid_argument("blur_sigma: negative image count");
  if (schedule.images <= 0 || images_seen >= schedule.images) return 0.0;
  if (!schedule.ramp) return schedule.sigma_max;
  return schedule.sigma_max * (1.0 - static_cast<double>(images_seen) / static_cast<double>(schedule.images));
}

template <typename Scalar>
Tensor<Scalar> latent_perturb(const Tensor<Scalar>& z, double l1, RngStream& rng, bool deterministic) {
  if (l1 < 0) throw std::invalid_argument("latent_perturb: l1 must be nonnegative");
  Tensor<Scalar> out = z;
  for (Index i = 0; i < z.size(); ++i) {
    const double mag = l1 * std::abs(static_cast<double>(z.data[i]));
    const double eps = deterministic ? mag : mag * rng.normal();
    out.data[i] = static_cast<Scalar>(static_cast<double>(z.data[i]) + eps);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> xflip(const Tensor<Scalar>& images) {
  if (images.rank() != 4) throw std::invalid_argument("xflip: expected an NCHW batch");
  Tensor<Scalar> out(images.shape);
  const Index rows = images.dim(0) * images.dim(1) * images.dim(2), W = images.dim(3);
  for (Index r = 0; r < rows; ++r) out.data.segment(r * W, W) = images.data.segment(r * W, W).reverse();
  return out;
}

template <typename Scalar>
Tensor<Scalar> xflip_amplify(const Tensor<Scalar>& images) {
  Tensor<Scalar> flipped = xflip(images);
  Shape shape = images.shape;
  shape[0] *= 2;
  Tensor<Scalar> out(shape);
  out.data.head(images.size()) = images.data;
  out.data.tail(images.size()) = flipped.data;
  return out;
}

#define HPGAN_INSTANTIATE_AUGMENT(S)                                                                          \
  template ag::Variable<S> apply_augment(const ag::Variable<S>&, const AugmentPolicy&, const AugmentParams&); \
  template MatrixX<S> gaussian_filter_matrix<S>(Index, double);                                               \
  template ag::Variable<S> gaussian_blur(const ag::Variable<S>&, double);                                     \
  template Tensor<S> latent_perturb(const Tensor<S>&, double, RngStream&, bool);                              \
  template Tensor<S> xflip(const Tensor<S>&);                                                                 \
  template Tensor<S> xflip_amplify(const Tensor<S>&);

HPGAN_INSTANTIATE_AUGMENT(float)
HPGAN_INSTANTIATE_AUGMENT(double)

#undef HPGAN_INSTANTIATE_AUGMENT

}  // namespace hpgan::augment
