#include "hpgan/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hpgan::ssl {

namespace {

void check_batch(const Matrix& z) {
  if (z.rows() < 2) throw std::invalid_argument("embedding batch needs at least 2 samples");
  if (z.cols() < 1) throw std::invalid_argument("embedding dimension must be positive");
  if (!z.allFinite()) throw std::invalid_argument("non-finite embedding");
}

void check_pair(const Matrix& za, const Matrix& zb) {
  check_batch(za);
  check_batch(zb);
  if (za.rows() != zb.rows() || za.cols() != zb.cols()) {
    throw std::invalid_argument("embedding batch shape mismatch");
  }
}

struct Standardized {
  Matrix z;
  Eigen::VectorXd scale;  // per-column divisor, max(std, eps)
  Eigen::Array<bool, Eigen::Dynamic, 1> floored;
};

Standardized standardize(const Matrix& z, double eps) {
  const double n = static_cast<double>(z.rows());
  Standardized s;
  s.z = z.rowwise() - z.colwise().mean();
  Eigen::VectorXd sd = (s.z.array().square().colwise().sum() / n).sqrt().transpose();
  s.floored = sd.array() < eps;
  s.scale = s.floored.select(Eigen::VectorXd::Constant(z.cols(), eps), sd);
  s.z = s.z * s.scale.cwiseInverse().asDiagonal();
  return s;
}

Matrix standardize_backward(const Standardized& s, const Matrix& g) {
  const double n = static_cast<double>(g.rows());
  Matrix dz(g.rows(), g.cols());
  for (Eigen::Index i = 0; i < g.cols(); ++i) {
    const auto gi = g.col(i);
    const double gmean = gi.mean();
    if (s.floored[i]) {
      dz.col(i) = (gi.array() - gmean).matrix() / s.scale[i];
    } else {
      const auto zi = s.z.col(i);
      const double proj = gi.dot(zi) / n;
      dz.col(i) = ((gi.array() - gmean) - zi.array() * proj).matrix() / s.scale[i];
    }
  }
  return dz;
}

struct Normalized {
  Matrix u;
  Eigen::VectorXd norm;  // max(|col|, eps)
  Eigen::Array<bool, Eigen::Dynamic, 1> floored;
};

Normalized normalize_columns(const Matrix& z, double eps) {
  Normalized r;
  Eigen::VectorXd norms = z.colwise().norm().transpose();
  r.floored = norms.array() < eps;
  r.norm = r.floored.select(Eigen::VectorXd::Constant(z.cols(), eps), norms);
  r.u = z * r.norm.cwiseInverse().asDiagonal();
  return r;
}

Matrix normalize_backward(const Normalized& r, const Matrix& g) {
  Matrix dz(g.rows(), g.cols());
  for (Eigen::Index i = 0; i < g.cols(); ++i) {
    if (r.floored[i]) {
      dz.col(i) = g.col(i) / r.norm[i];
    } else {
      const auto ui = r.u.col(i);
      dz.col(i) = (g.col(i) - ui * ui.dot(g.col(i))) / r.norm[i];
    }
  }
  return dz;
}

}  // namespace

Matrix standardize_columns(const Matrix& z, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("standardize_columns: eps must be positive");
  check_batch(z);
  return standardize(z, eps).z;
}

Matrix cross_correlation(const Matrix& za, const Matrix& zb, double eps) {
  check_pair(za, zb);
  return normalize_columns(za, eps).u.transpose() * normalize_columns(zb, eps).u;
}

double barlow_twins_loss(const Matrix& c, double lambda1) {
  if (c.rows() != c.cols()) throw std::invalid_argument("cross-correlation matrix must be square");
  if (!(lambda1 > 0)) throw std::invalid_argument("lambda1 must be positive");
  const double on = (1.0 - c.diagonal().array()).square().sum();
  const double off = c.array().square().sum() - c.diagonal().array().square().sum();
  return on + lambda1 * off;
}

VicRegTerms vicreg_terms(const Matrix& za, const Matrix& zb, const VicRegWeights& w) {
  check_pair(za, zb);
  const double n = static_cast<double>(za.rows());
  const double d = static_cast<double>(za.cols());
  VicRegTerms t;
  t.invariance = (za - zb).array().square().sum() / (n * d);
  for (const Matrix* z : {&za, &zb}) {
    Matrix zc = z->rowwise() - z->colwise().mean();
    Eigen::ArrayXd var = zc.array().square().colwise().sum().transpose() / (n - 1.0);
    Eigen::ArrayXd sd = (var + w.eps).sqrt();
    t.variance += (w.target_std - sd).max(0.0).mean();
    Matrix cov = zc.transpose() * zc / (n - 1.0);
    t.covariance += (cov.array().square().sum() - cov.diagonal().array().square().sum()) / d;
  }
  t.total = w.invariance * t.invariance + w.variance * t.variance + w.covariance * t.covariance;
  return t;
}

double vicreg_loss(const Matrix& za, const Matrix& zb, const VicRegWeights& w) {
  return vicreg_terms(za, zb, w).total;
}

double ntxent_loss(const Matrix& za, const Matrix& zb, double temperature) {
  return ntxent_objective(za, zb, temperature).value;
}

void ObjectiveSpec::validate() const {
  if (!(lambda1 > 0)) throw std::invalid_argument("lambda1 must be positive");
  if (!(temperature > 0)) throw std::invalid_argument("temperature must be positive");
}

Objective parse_objective(const std::string& name) {
  if (name == "barlow_twins") return Objective::BarlowTwins;
  if (name == "vicreg") return Objective::VicReg;
  if (name == "ntxent") return Objective::NtXent;
  throw std::invalid_argument("unknown ssl objective '" + name + "' (barlow_twins, vicreg, ntxent)");
}

std::string objective_name(Objective kind) {
  switch (kind) {
    case Objective::BarlowTwins: return "barlow_twins";
    case Objective::VicReg: return "vicreg";
    case Objective::NtXent: return "ntxent";
  }
  return "unknown";
}

LossWithGrad barlow_twins_objective(const Matrix& za, const Matrix& zb, double lambda1) {
  check_pair(za, zb);
  const Standardized sa = standardize(za, kStdFloor);
  const Standardized sb = standardize(zb, kStdFloor);
  const Normalized na = normalize_columns(sa.z, kStdFloor);
  const Normalized nb = normalize_columns(sb.z, kStdFloor);
  const Matrix c = na.u.transpose() * nb.u;

  LossWithGrad r;
  r.value = barlow_twins_loss(c, lambda1);
  Matrix dc = 2.0 * lambda1 * c;
  dc.diagonal() = -2.0 * (1.0 - c.diagonal().array()).matrix();
  r.grad_a = standardize_backward(sa, normalize_backward(na, nb.u * dc.transpose()));
  r.grad_b = standardize_backward(sb, normalize_backward(nb, na.u * dc));
  return r;
}

LossWithGrad vicreg_objective(const Matrix& za, const Matrix& zb, const VicRegWeights& w) {
  const VicRegTerms t = vicreg_terms(za, zb, w);
  const double n = static_cast<double>(za.rows());
  const double d = static_cast<double>(za.cols());
  LossWithGrad r;
  r.value = t.total;
  const Matrix dinv = w.invariance * 2.0 * (za - zb) / (n * d);
  r.grad_a = dinv;
  r.grad_b = -dinv;
  for (int branch = 0; branch < 2; ++branch) {
    const Matrix& z = branch == 0 ? za : zb;
    Matrix zc = z.rowwise() - z.colwise().mean();
    Eigen::ArrayXd var = zc.array().square().colwise().sum().transpose() / (n - 1.0);
    Eigen::ArrayXd sd = (var + w.eps).sqrt();
    // Variance hinge; the centering Jacobian drops out because centered columns sum to zero.
    Eigen::ArrayXd active = (w.target_std - sd > 0.0).cast<double>();
    Eigen::VectorXd coef = (-w.variance / d * active / ((n - 1.0) * sd)).matrix();
    Matrix g = zc * coef.asDiagonal();
    Matrix cov = zc.transpose() * zc / (n - 1.0);
    cov.diagonal().setZero();
    g += w.covariance * (4.0 / (d * (n - 1.0))) * zc * cov;
    (branch == 0 ? r.grad_a : r.grad_b) += g;
  }
  return r;
}

LossWithGrad ntxent_objective(const Matrix& za, const Matrix& zb, double temperature) {
  check_pair(za, zb);
  if (!(temperature > 0)) throw std::invalid_argument("temperature must be positive");
  const Eigen::Index n = za.rows();
  const Eigen::Index m = 2 * n;
  Matrix z(m, za.cols());
  z << za, zb;
  Eigen::VectorXd norms = z.rowwise().norm();
  if ((norms.array() <= 0.0).any()) throw std::invalid_argument("degenerate embedding");
  const Matrix u = norms.cwiseInverse().asDiagonal() * z;
  const Matrix s = u * u.transpose() / temperature;

  LossWithGrad r;
  Matrix ds = Matrix::Zero(m, m);
  double total = 0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const Eigen::Index pos = (k + n) % m;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != k) mx = std::max(mx, s(k, j));
    double denom = 0;
    for (Eigen::Index j = 0; j < m; ++j)
      if (j != k) denom += std::exp(s(k, j) - mx);
    total += -(s(k, pos) - mx) + std::log(denom);
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == k) continue;
      ds(k, j) = std::exp(s(k, j) - mx) / denom;
    }
    ds(k, pos) -= 1.0;
  }
  r.value = total / static_cast<double>(m);
  ds /= static_cast<double>(m);
  const Matrix du = (ds + ds.transpose()) * u / temperature;
  Matrix dz(m, za.cols());
  for (Eigen::Index k = 0; k < m; ++k) {
    dz.row(k) = (du.row(k) - u.row(k) * u.row(k).dot(du.row(k))) / norms[k];
  }
  r.grad_a = dz.topRows(n);
  r.grad_b = dz.bottomRows(n);
  return r;
}

LossWithGrad evaluate(const ObjectiveSpec& spec, const Matrix& za, const Matrix& zb) {
  spec.validate();
  switch (spec.kind) {
    case Objective::BarlowTwins: return barlow_twins_objective(za, zb, spec.lambda1);
    case Objective::VicReg: return vicreg_objective(za, zb, spec.vicreg);
    case Objective::NtXent: return ntxent_objective(za, zb, spec.temperature);
  }
  throw std::logic_error("unhandled ssl objective");
}

}  // namespace hpgan::ssl
