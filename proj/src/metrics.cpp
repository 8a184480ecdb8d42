#include "hpgan/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace hpgan::metrics {

namespace {

constexpr Index kEmbedChunk = 200;
constexpr Index kEmbedWidths[3] = {16, 32, 64};

}  // namespace

Embedder::Embedder(Index dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim <= 0) throw std::invalid_argument("embedding dim must be positive");
  RngStream rng = RngStream(seed).derive("embedder");
  Index in = 3, pooled = 0;
  for (Index out : kEmbedWidths) {
    convs_.push_back(ag::constant(kaiming_uniform({out, in, 3, 3}, in * 9, kLeakyGain, rng)));
    in = out;
    pooled += out;
  }
  proj_ = ag::constant(kaiming_uniform({dim, pooled}, pooled, 1.0, rng));
}

template <typename Scalar>
Matrix Embedder::operator()(const Tensor<Scalar>& images) const {
  if (images.rank() != 4 || images.dim(1) != 3) throw std::invalid_argument("embed expects [N, 3, H, W]");
  ag::NoGradGuard no_grad;
  const Index n = images.dim(0), per = images.size() / std::max<Index>(n, 1);
  Matrix out(n, dim_);
  const ag::Variable<double> none;
  for (Index start = 0; start < n; start += kEmbedChunk) {
    const Index m = std::min(kEmbedChunk, n - start);
    Tensor<double> chunk({m, 3, images.dim(2), images.dim(3)});
    chunk.data = images.data.segment(start * per, m * per).template cast<double>();
    ag::Variable<double> x = ag::constant(std::move(chunk));
    std::vector<ag::Variable<double>> pooled;
    for (const auto& w : convs_) {
      x = ag::leaky_relu(ag::conv2d(x, w, none, 2, 1), 0.2);
      pooled.push_back(ag::spatial_mean(x));
    }
    ag::Variable<double> e = ag::linear(ag::concat_features(pooled), proj_, none);
    out.middleRows(start, m) = Eigen::Map<const RowMatrixX<double>>(e.value().ptr(), m, dim_);
  }
  return out;
}

template Matrix Embedder::operator()(const Tensor<float>&) const;
template Matrix Embedder::operator()(const Tensor<double>&) const;

EmbeddingStats EmbeddingStats::from(const Matrix& x) {
  if (x.rows() < 2) throw std::invalid_argument("embedding statistics need at least 2 samples");
  if (!x.allFinite()) throw std::invalid_argument("non-finite embedding");
  EmbeddingStats s;
  s.count = x.rows();
  s.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  return s;
}

namespace {

Matrix psd_sqrt(const Matrix& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error(std::string(what) + ": eigendecomposition failed");
  const Vector& ev = es.eigenvalues();
  if (ev.size() > 0 && ev.minCoeff() < -1e-8) {
    throw std::invalid_argument(std::string(what) + ": covariance is not positive semidefinite");
  }
  return es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const EmbeddingStats& a, const EmbeddingStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows()) {
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const Matrix root_a = psd_sqrt(a.cov, "frechet_distance");
  psd_sqrt(b.cov, "frechet_distance");
  const Matrix inner = root_a * b.cov * root_a;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double trace_term = a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return mean_term + std::max(0.0, trace_term);
}

double kernel_distance(const Matrix& a, const Matrix& b) {
  const Index m = a.rows(), n = b.rows(), d = a.cols();
  if (m < 2 || n < 2) throw std::invalid_argument("kernel_distance needs at least 2 samples per set");
  if (b.cols() != d) throw std::invalid_argument("kernel_distance: dimension mismatch");
  auto kernel = [d](const Matrix& x, const Matrix& y) -> Matrix {
    return ((x * y.transpose()).array() / static_cast<double>(d) + 1.0).cube().matrix();
  };
  const Matrix kaa = kernel(a, a), kbb = kernel(b, b), kab = kernel(a, b);
  const double saa = kaa.sum() - kaa.trace();
  const double sbb = kbb.sum() - kbb.trace();
  return saa / static_cast<double>(m * (m - 1)) + sbb / static_cast<double>(n * (n - 1)) -
         2.0 * kab.sum() / static_cast<double>(m * n);
}

namespace {

constexpr Index kDistChunk = 512;

// Squared distances between rows of x[start:start+rows] and all rows of y.
Matrix sq_dists(const Matrix& x, Index start, Index rows, const Matrix& y) {
  const auto xs = x.middleRows(start, rows);
  Matrix d = -2.0 * xs * y.transpose();
  d.colwise() += xs.rowwise().squaredNorm();
  d.rowwise() += y.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

// Squared k-th nearest neighbor distance of every row of x within x, self excluded.
Vector kth_radius(const Matrix& x, int k) {
  const Index n = x.rows();
  Vector r(n);
  std::vector<double> row(static_cast<std::size_t>(n));
  for (Index s = 0; s < n; s += kDistChunk) {
    const Index m = std::min(kDistChunk, n - s);
    const Matrix d = sq_dists(x, s, m, x);
    for (Index i = 0; i < m; ++i) {
      Index w = 0;
      for (Index j = 0; j < n; ++j)
        if (j != s + i) row[static_cast<std::size_t>(w++)] = d(i, j);
      std::nth_element(row.begin(), row.begin() + (k - 1), row.begin() + w);
      r(s + i) = row[static_cast<std::size_t>(k - 1)];
    }
  }
  return r;
}

double coverage(const Matrix& ref, const Vector& radius, const Matrix& query) {
  Index covered = 0;
  for (Index s = 0; s < query.rows(); s += kDistChunk) {
    const Index m = std::min(kDistChunk, query.rows() - s);
    const Matrix d = sq_dists(query, s, m, ref);
    for (Index i = 0; i < m; ++i) {
      if (((d.row(i).transpose().array() - radius.array()) <= 0.0).any()) ++covered;
    }
  }
  return static_cast<double>(covered) / static_cast<double>(query.rows());
}

}  // namespace

PrecisionRecall precision_recall(const Matrix& real, const Matrix& gen, int k) {
  if (k < 1) throw std::invalid_argument("precision_recall: k must be >= 1");
  if (real.rows() < k + 1 || gen.rows() < k + 1) {
    throw std::invalid_argument("precision_recall needs at least k+1 points per set");
  }
  if (real.cols() != gen.cols()) throw std::invalid_argument("precision_recall: dimension mismatch");
  PrecisionRecall pr;
  pr.precision = coverage(real, kth_radius(real, k), gen);
  pr.recall = coverage(gen, kth_radius(gen, k), real);
  return pr;
}

Vector slerp(const Vector& a, const Vector& b, double t) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) return (1 - t) * a + t * b;
  const double cos_omega = std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
  const double omega = std::acos(cos_omega);
  const double s = std::sin(omega);
  if (s < 1e-12) return (1 - t) * a + t * b;
  return (std::sin((1 - t) * omega) / s) * a + (std::sin(t * omega) / s) * b;
}

double perceptual_path_length(const LatentFeatureFn& f, Index z_dim, double eps, Index paths, PplMode mode,
                              RngStream& rng, Index batch) {
  if (eps <= 0) throw std::invalid_argument("ppl epsilon must be positive");
  if (paths <= 0 || z_dim <= 0 || batch <= 0) throw std::invalid_argument("ppl needs positive paths, z_dim and batch");
  double total = 0;
  for (Index start = 0; start < paths; start += batch) {
    const Index m = std::min(batch, paths - start);
    Matrix za(m, z_dim), zb(m, z_dim);
    for (Index i = 0; i < m; ++i) {
      Vector z1(z_dim), z2(z_dim);
      for (Index j = 0; j < z_dim; ++j) z1(j) = rng.normal();
      for (Index j = 0; j < z_dim; ++j) z2(j) = rng.normal();
      const double t = mode == PplMode::Full ? rng.uniform() : static_cast<double>(rng.below(2));
      za.row(i) = slerp(z1, z2, t).transpose();
      zb.row(i) = slerp(z1, z2, t + eps).transpose();
    }
    const Matrix fa = f(za), fb = f(zb);
    total += (fa - fb).rowwise().squaredNorm().sum() / (eps * eps);
  }
  return total / static_cast<double>(paths);
}

double signed_logit_fraction(const std::vector<double>& logits) {
  if (logits.empty()) return 0.0;
  const auto positive = std::count_if(logits.begin(), logits.end(), [](double x) { return x > 0.0; });
  return static_cast<double>(positive) / static_cast<double>(logits.size());
}

std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

std::string MetricsReport::csv_header() {
  return "step,images_seen,fid,kid,precision,recall,ppl_full,ppl_end,signed_logit_fraction,"
         "d_loss,g_loss,dc_real,dc_fake,ft_loss,real_count,fake_count,embed_seed";
}

std::string MetricsReport::csv_row() const {
  std::ostringstream os;
  os << step << ',' << images_seen;
  for (double v : {fid, kid, precision, recall, ppl_full, ppl_end, signed_logit_fraction, d_loss, g_loss, dc_real,
                   dc_fake, ft_loss}) {
    os << ',' << format_number(v);
  }
  os << ',' << real_count << ',' << fake_count << ',' << embed_seed;
  return os.str();
}

}  // namespace hpgan::metrics
