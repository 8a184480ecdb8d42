#include "hpgan/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace hpgan::ag {

namespace {

template <typename Scalar>
using RowMap = Eigen::Map<RowMatrixX<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrixX<Scalar>>;

template <typename Scalar>
Tensor<Scalar> like(const Tensor<Scalar>& t) {
  return Tensor<Scalar>(t.shape);
}

void require_rank(const Shape& s, int rank, const char* what) {
  if (static_cast<int>(s.size()) != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(s));
  }
}

}  // namespace

template <typename Scalar>
Variable<Scalar> add(const Variable<Scalar>& a, const Variable<Scalar>& b) {
  require_shape(b.shape(), a.shape(), "add");
  Tensor<Scalar> out(a.shape(), a.value().data + b.value().data);
  return make_result<Scalar>(std::move(out), {a, b}, [a, b](const Node<Scalar>& self) {
    accumulate_grad(*a.node(), self.grad);
    accumulate_grad(*b.node(), self.grad);
  });
}

template <typename Scalar>
Variable<Scalar> sub(const Variable<Scalar>& a, const Variable<Scalar>& b) {
  require_shape(b.shape(), a.shape(), "sub");
  Tensor<Scalar> out(a.shape(), a.value().data - b.value().data);
  return make_result<Scalar>(std::move(out), {a, b}, [a, b](const Node<Scalar>& self) {
    accumulate_grad(*a.node(), self.grad);
    if (b.requires_grad()) accumulate_grad(*b.node(), Tensor<Scalar>(self.grad.shape, -self.grad.data));
  });
}

template <typename Scalar>
Variable<Scalar> mul(const Variable<Scalar>& a, const Variable<Scalar>& b) {
  require_shape(b.shape(), a.shape(), "mul");
  Tensor<Scalar> out(a.shape(), a.value().data * b.value().data);
  return make_result<Scalar>(std::move(out), {a, b}, [a, b](const Node<Scalar>& self) {
    if (a.requires_grad()) accumulate_grad(*a.node(), Tensor<Scalar>(self.grad.shape, self.grad.data * b.value().data));
    if (b.requires_grad()) accumulate_grad(*b.node(), Tensor<Scalar>(self.grad.shape, self.grad.data * a.value().data));
  });
}

template <typename Scalar>
Variable<Scalar> scale(const Variable<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().data * s);
  return make_result<Scalar>(std::move(out), {a}, [a, s](const Node<Scalar>& self) {
    accumulate_grad(*a.node(), Tensor<Scalar>(self.grad.shape, self.grad.data * s));
  });
}

template <typename Scalar>
Variable<Scalar> add_scalar(const Variable<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().data + s);
  return make_result<Scalar>(std::move(out), {a}, [a](const Node<Scalar>& self) {
    accumulate_grad(*a.node(), self.grad);
  });
}

template <typename Scalar>
Variable<Scalar> square(const Variable<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().data.square());
  return make_result<Scalar>(std::move(out), {a}, [a](const Node<Scalar>& self) {
    accumulate_grad(*a.node(), Tensor<Scalar>(self.grad.shape, Scalar(2) * self.grad.data * a.value().data));
  });
}

template <typename Scalar>
Variable<Scalar> leaky_relu(const Variable<Scalar>& x, Scalar slope) {
  const auto& v = x.value().data;
  Tensor<Scalar> out(x.shape(), (v > Scalar(0)).select(v, v * slope));
  return make_result<Scalar>(std::move(out), {x}, [x, slope](const Node<Scalar>& self) {
    const auto& v = x.value().data;
    accumulate_grad(*x.node(),
                    Tensor<Scalar>(self.grad.shape, (v > Scalar(0)).select(self.grad.data, self.grad.data * slope)));
  });
}

template <typename Scalar>
Variable<Scalar> tanh(const Variable<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().data.tanh());
  return make_result<Scalar>(std::move(out), {x}, [x](const Node<Scalar>& self) {
    accumulate_grad(*x.node(),
                    Tensor<Scalar>(self.grad.shape, self.grad.data * (Scalar(1) - self.value.data.square())));
  });
}

template <typename Scalar>
Variable<Scalar> sigmoid(const Variable<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), Scalar(1) / (Scalar(1) + (-x.value().data).exp()));
  return make_result<Scalar>(std::move(out), {x}, [x](const Node<Scalar>& self) {
    const auto& y = self.value.data;
    accumulate_grad(*x.node(), Tensor<Scalar>(self.grad.shape, self.grad.data * y * (Scalar(1) - y)));
  });
}

template <typename Scalar>
Variable<Scalar> gelu(const Variable<Scalar>& x) {
  const Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  const Scalar k = Scalar(0.044715);
  const auto& v = x.value().data;
  ArrayX<Scalar> t = (c * (v + k * v.cube())).tanh();
  Tensor<Scalar> out(x.shape(), Scalar(0.5) * v * (Scalar(1) + t));
  return make_result<Scalar>(std::move(out), {x}, [x, c, k](const Node<Scalar>& self) {
    const auto& v = x.value().data;
    ArrayX<Scalar> t = (c * (v + k * v.cube())).tanh();
    ArrayX<Scalar> d = Scalar(0.5) * (Scalar(1) + t) +
                       Scalar(0.5) * v * (Scalar(1) - t.square()) * c * (Scalar(1) + Scalar(3) * k * v.square());
    accumulate_grad(*x.node(), Tensor<Scalar>(self.grad.shape, self.grad.data * d));
  });
}

template <typename Scalar>
Variable<Scalar> sum(const Variable<Scalar>& x) {
  Tensor<Scalar> out = Tensor<Scalar>::constant({}, x.value().data.sum());
  return make_result<Scalar>(std::move(out), {x}, [x](const Node<Scalar>& self) {
    accumulate_grad(*x.node(), Tensor<Scalar>::constant(x.shape(), self.grad.data[0]));
  });
}

template <typename Scalar>
Variable<Scalar> mean(const Variable<Scalar>& x) {
  const Scalar n = static_cast<Scalar>(x.size());
  Tensor<Scalar> out = Tensor<Scalar>::constant({}, x.value().data.sum() / n);
  return make_result<Scalar>(std::move(out), {x}, [x, n](const Node<Scalar>& self) {
    accumulate_grad(*x.node(), Tensor<Scalar>::constant(x.shape(), self.grad.data[0] / n));
  });
}

template <typename Scalar>
Variable<Scalar> reshape(const Variable<Scalar>& x, Shape shape) {
  Tensor<Scalar> out(std::move(shape), x.value().data);
  return make_result<Scalar>(std::move(out), {x}, [x](const Node<Scalar>& self) {
    accumulate_grad(*x.node(), Tensor<Scalar>(x.shape(), self.grad.data));
  });
}

template <typename Scalar>
Variable<Scalar> matmul(const Variable<Scalar>& a, const Variable<Scalar>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  if (a.dim(1) != b.dim(0)) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tensor<Scalar> out({a.dim(0), b.dim(1)});
  matrix_view(out).noalias() = matrix_view(a.value()) * matrix_view(b.value());
  return make_result<Scalar>(std::move(out), {a, b}, [a, b](const Node<Scalar>& self) {
    auto g = matrix_view(self.grad);
    if (a.requires_grad()) {
      Tensor<Scalar> da(a.shape());
      matrix_view(da).noalias() = g * matrix_view(b.value()).transpose();
      accumulate_grad(*a.node(), std::move(da));
    }
    if (b.requires_grad()) {
      Tensor<Scalar> db(b.shape());
      matrix_view(db).noalias() = matrix_view(a.value()).transpose() * g;
      accumulate_grad(*b.node(), std::move(db));
    }
  });
}

template <typename Scalar>
Variable<Scalar> linear(const Variable<Scalar>& x, const Variable<Scalar>& w, const Variable<Scalar>& bias) {
  require_rank(x.shape(), 2, "linear");
  require_rank(w.shape(), 2, "linear weight");
  if (x.dim(1) != w.dim(1)) {
    throw std::invalid_argument("linear: input width " + std::to_string(x.dim(1)) + " != weight fan-in " +
                                std::to_string(w.dim(1)));
  }
  Tensor<Scalar> out({x.dim(0), w.dim(0)});
  auto o = matrix_view(out);
  o.noalias() = matrix_view(x.value()) * matrix_view(w.value()).transpose();
  const bool has_bias = bias.defined();
  if (has_bias) o.rowwise() += bias.value().data.matrix().transpose();
  std::vector<Variable<Scalar>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result<Scalar>(std::move(out), inputs, [x, w, bias, has_bias](const Node<Scalar>& self) {
    auto g = matrix_view(self.grad);
    if (x.requires_grad()) {
      Tensor<Scalar> dx(x.shape());
      matrix_view(dx).noalias() = g * matrix_view(w.value());
      accumulate_grad(*x.node(), std::move(dx));
    }
    if (w.requires_grad()) {
      Tensor<Scalar> dw(w.shape());
      matrix_view(dw).noalias() = g.transpose() * matrix_view(x.value());
      accumulate_grad(*w.node(), std::move(dw));
    }
    if (has_bias && bias.requires_grad()) {
      Tensor<Scalar> db(bias.shape());
      db.data = g.colwise().sum().transpose().array();
      accumulate_grad(*bias.node(), std::move(db));
    }
  });
}

template <typename Scalar>
Variable<Scalar> bmm(const Variable<Scalar>& a, const Variable<Scalar>& b) {
  require_rank(a.shape(), 3, "bmm");
  require_rank(b.shape(), 3, "bmm");
  const Index B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != B || b.dim(1) != k) throw std::invalid_argument("bmm: shape mismatch");
  Tensor<Scalar> out({B, m, n});
  for (Index i = 0; i < B; ++i) {
    RowMap<Scalar>(out.ptr() + i * m * n, m, n).noalias() =
        ConstRowMap<Scalar>(a.value().ptr() + i * m * k, m, k) * ConstRowMap<Scalar>(b.value().ptr() + i * k * n, k, n);
  }
  return make_result<Scalar>(std::move(out), {a, b}, [a, b, B, m, k, n](const Node<Scalar>& self) {
    Tensor<Scalar> da, db;
    if (a.requires_grad()) da = Tensor<Scalar>(a.shape());
    if (b.requires_grad()) db = Tensor<Scalar>(b.shape());
    for (Index i = 0; i < B; ++i) {
      ConstRowMap<Scalar> g(self.grad.ptr() + i * m * n, m, n);
      if (!da.empty()) {
        RowMap<Scalar>(da.ptr() + i * m * k, m, k).noalias() =
            g * ConstRowMap<Scalar>(b.value().ptr() + i * k * n, k, n).transpose();
      }
      if (!db.empty()) {
        RowMap<Scalar>(db.ptr() + i * k * n, k, n).noalias() =
            ConstRowMap<Scalar>(a.value().ptr() + i * m * k, m, k).transpose() * g;
      }
    }
    if (!da.empty()) accumulate_grad(*a.node(), std::move(da));
    if (!db.empty()) accumulate_grad(*b.node(), std::move(db));
  });
}

template <typename Scalar>
Variable<Scalar> conv2d(const Variable<Scalar>& x, const Variable<Scalar>& w, const Variable<Scalar>& bias,
                        int stride, int pad) {
  require_rank(x.shape(), 4, "conv2d input");
  require_rank(w.shape(), 4, "conv2d weight");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index O = w.dim(0), K = w.dim(2);
  if (w.dim(1) != C) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(C) + " channels, weight expects " +
                                std::to_string(w.dim(1)));
  }
  const Index Ho = (H + 2 * pad - K) / stride + 1;
  const Index Wo = (W + 2 * pad - K) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");
  const Index HWo = Ho * Wo;
  const Index rows = C * K * K;
  const Index cols_n = N * HWo;

  // im2col: row (c, ki, kj), column (n, oh, ow).
  auto cols = std::make_shared<RowMatrixX<Scalar>>(rows, cols_n);
  const Scalar* xp = x.value().ptr();
  for (Index c = 0; c < C; ++c) {
    for (Index ki = 0; ki < K; ++ki) {
      for (Index kj = 0; kj < K; ++kj) {
        Scalar* dst = cols->data() + ((c * K + ki) * K + kj) * cols_n;
        for (Index n = 0; n < N; ++n) {
          const Scalar* plane = xp + (n * C + c) * H * W;
          for (Index oh = 0; oh < Ho; ++oh) {
            const Index ih = oh * stride - pad + ki;
            Scalar* d = dst + n * HWo + oh * Wo;
            if (ih < 0 || ih >= H) {
              std::fill(d, d + Wo, Scalar(0));
              continue;
            }
            for (Index ow = 0; ow < Wo; ++ow) {
              const Index iw = ow * stride - pad + kj;
              d[ow] = (iw < 0 || iw >= W) ? Scalar(0) : plane[ih * W + iw];
            }
          }
        }
      }
    }
  }

  ConstRowMap<Scalar> wm(w.value().ptr(), O, rows);
  RowMatrixX<Scalar> prod = wm * (*cols);
  Tensor<Scalar> out({N, O, Ho, Wo});
  const bool has_bias = bias.defined();
  for (Index n = 0; n < N; ++n) {
    RowMap<Scalar> d(out.ptr() + n * O * HWo, O, HWo);
    d = prod.middleCols(n * HWo, HWo);
    if (has_bias) d.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias.value().ptr(), O);
  }

  std::vector<Variable<Scalar>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result<Scalar>(
      std::move(out), inputs,
      [x, w, bias, has_bias, cols, N, C, H, W, O, K, Ho, Wo, HWo, rows, cols_n, stride, pad](const Node<Scalar>& self) {
        RowMatrixX<Scalar> g(O, cols_n);
        for (Index n = 0; n < N; ++n) g.middleCols(n * HWo, HWo) = ConstRowMap<Scalar>(self.grad.ptr() + n * O * HWo, O, HWo);
        if (w.requires_grad()) {
          Tensor<Scalar> dw(w.shape());
          RowMap<Scalar>(dw.ptr(), O, rows).noalias() = g * cols->transpose();
          accumulate_grad(*w.node(), std::move(dw));
        }
        if (has_bias && bias.requires_grad()) {
          Tensor<Scalar> db(bias.shape());
          for (Index o = 0; o < O; ++o) db.data[o] = g.row(o).sum();
          accumulate_grad(*bias.node(), std::move(db));
        }
        if (x.requires_grad()) {
          ConstRowMap<Scalar> wm(w.value().ptr(), O, rows);
          RowMatrixX<Scalar> dcols = wm.transpose() * g;
          Tensor<Scalar> dx(x.shape());
          Scalar* dxp = dx.ptr();
          for (Index c = 0; c < C; ++c) {
            for (Index ki = 0; ki < K; ++ki) {
              for (Index kj = 0; kj < K; ++kj) {
                const Scalar* src = dcols.data() + ((c * K + ki) * K + kj) * cols_n;
                for (Index n = 0; n < N; ++n) {
                  Scalar* plane = dxp + (n * C + c) * H * W;
                  for (Index oh = 0; oh < Ho; ++oh) {
                    const Index ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) continue;
                    const Scalar* s = src + n * HWo + oh * Wo;
                    for (Index ow = 0; ow < Wo; ++ow) {
                      const Index iw = ow * stride - pad + kj;
                      if (iw >= 0 && iw < W) plane[ih * W + iw] += s[ow];
                    }
                  }
                }
              }
            }
          }
          accumulate_grad(*x.node(), std::move(dx));
        }
      });
}

template <typename Scalar>
Variable<Scalar> separable(const Variable<Scalar>& x, const MatrixX<Scalar>& rows, const MatrixX<Scalar>& cols) {
  require_rank(x.shape(), 4, "separable");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (rows.cols() != H || cols.cols() != W) throw std::invalid_argument("separable: matrix/input size mismatch");
  const Index Ho = rows.rows(), Wo = cols.rows();
  Tensor<Scalar> out({N, C, Ho, Wo});
  const Index planes = N * C;
  // Column pass over all planes at once, then the row pass per plane.
  RowMatrixX<Scalar> tmp = ConstRowMap<Scalar>(x.value().ptr(), planes * H, W) * cols.transpose();
  for (Index p = 0; p < planes; ++p) {
    RowMap<Scalar>(out.ptr() + p * Ho * Wo, Ho, Wo).noalias() = rows * tmp.middleRows(p * H, H);
  }
  return make_result<Scalar>(std::move(out), {x}, [x, rows, cols, planes, H, W, Ho, Wo](const Node<Scalar>& self) {
    RowMatrixX<Scalar> t(planes * H, Wo);
    for (Index p = 0; p < planes; ++p) {
      t.middleRows(p * H, H).noalias() = rows.transpose() * ConstRowMap<Scalar>(self.grad.ptr() + p * Ho * Wo, Ho, Wo);
    }
    Tensor<Scalar> dx(x.shape());
    RowMap<Scalar>(dx.ptr(), planes * H, W).noalias() = t * cols;
    accumulate_grad(*x.node(), std::move(dx));
  });
}

template <typename Scalar>
Variable<Scalar> gather(const Variable<Scalar>& x, std::vector<Index> index, Shape out_shape) {
  if (static_cast<Index>(index.size()) != numel(out_shape)) {
    throw std::invalid_argument("gather: index count does not match output shape");
  }
  Tensor<Scalar> out(std::move(out_shape));
  const auto& v = x.value().data;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= v.size()) throw std::out_of_range("gather: index out of range");
    out.data[static_cast<Index>(i)] = index[i] < 0 ? Scalar(0) : v[index[i]];
  }
  auto idx = std::make_shared<std::vector<Index>>(std::move(index));
  return make_result<Scalar>(std::move(out), {x}, [x, idx](const Node<Scalar>& self) {
    Tensor<Scalar> dx(x.shape());
    for (std::size_t i = 0; i < idx->size(); ++i) {
      const Index j = (*idx)[i];
      if (j >= 0) dx.data[j] += self.grad.data[static_cast<Index>(i)];
    }
    accumulate_grad(*x.node(), std::move(dx));
  });
}

template <typename Scalar>
Variable<Scalar> add_channel_bias(const Variable<Scalar>& x, const Variable<Scalar>& bias) {
  require_rank(x.shape(), 4, "add_channel_bias");
  const Index N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (bias.size() != C) throw std::invalid_argument("add_channel_bias: channel mismatch");
  Tensor<Scalar> out = x.value();
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) out.data.segment((n * C + c) * HW, HW) += bias.value().data[c];
  return make_result<Scalar>(std::move(out), {x, bias}, [x, bias, N, C, HW](const Node<Scalar>& self) {
    accumulate_grad(*x.node(), self.grad);
    if (bias.requires_grad()) {
      Tensor<Scalar> db(bias.shape());
      for (Index n = 0; n < N; ++n)
        for (Index c = 0; c < C; ++c) db.data[c] += self.grad.data.segment((n * C + c) * HW, HW).sum();
      accumulate_grad(*bias.node(), std::move(db));
    }
  });
}

template <typename Scalar>
Variable<Scalar> mul_channels(const Variable<Scalar>& x, const Variable<Scalar>& g) {
  require_rank(x.shape(), 4, "mul_channels");
  const Index N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  require_shape(g.shape(), {N, C}, "mul_channels gate");
  Tensor<Scalar> out = x.value();
  for (Index p = 0; p < N * C; ++p) out.data.segment(p * HW, HW) *= g.value().data[p];
  return make_result<Scalar>(std::move(out), {x, g}, [x, g, N, C, HW](const Node<Scalar>& self) {
    if (x.requires_grad()) {
      Tensor<Scalar> dx = self.grad;
      for (Index p = 0; p < N * C; ++p) dx.data.segment(p * HW, HW) *= g.value().data[p];
      accumulate_grad(*x.node(), std::move(dx));
    }
    if (g.requires_grad()) {
      Tensor<Scalar> dg(g.shape());
      for (Index p = 0; p < N * C; ++p)
        dg.data[p] = (self.grad.data.segment(p * HW, HW) * x.value().data.segment(p * HW, HW)).sum();
      accumulate_grad(*g.node(), std::move(dg));
    }
  });
}

template <typename Scalar>
Variable<Scalar> add_samples(const Variable<Scalar>& x, const Variable<Scalar>& b) {
  const Index N = x.dim(0), M = x.size() / N;
  if (b.size() != N) throw std::invalid_argument("add_samples: batch mismatch");
  Tensor<Scalar> out = x.value();
  for (Index n = 0; n < N; ++n) out.data.segment(n * M, M) += b.value().data[n];
  return make_result<Scalar>(std::move(out), {x, b}, [x, b, N, M](const Node<Scalar>& self) {
    accumulate_grad(*x.node(), self.grad);
    if (b.requires_grad()) {
      Tensor<Scalar> db(b.shape());
      for (Index n = 0; n < N; ++n) db.data[n] = self.grad.data.segment(n * M, M).sum();
      accumulate_grad(*b.node(), std::move(db));
    }
  });
}

template <typename Scalar>
Variable<Scalar> mul_samples(const Variable<Scalar>& x, const Variable<Scalar>& s) {
  const Index N = x.dim(0), M = x.size() / N;
  if (s.size() != N) throw std::invalid_argument("mul_samples: batch mismatch");
  Tensor<Scalar> out = x.value();
  for (Index n = 0; n < N; ++n) out.data.segment(n * M, M) *= s.value().data[n];
  return make_result<Scalar>(std::move(out), {x, s}, [x, s, N, M](const Node<Scalar>& self) {
    if (x.requires_grad()) {
      Tensor<Scalar> dx = self.grad;
      for (Index n = 0; n < N; ++n) dx.data.segment(n * M, M) *= s.value().data[n];
      accumulate_grad(*x.node(), std::move(dx));
    }
    if (s.requires_grad()) {
      Tensor<Scalar> ds(s.shape());
      for (Index n = 0; n < N; ++n)
        ds.data[n] = (self.grad.data.segment(n * M, M) * x.value().data.segment(n * M, M)).sum();
      accumulate_grad(*s.node(), std::move(ds));
    }
  });
}

template <typename Scalar>
Variable<Scalar> spatial_mean(const Variable<Scalar>& x) {
  require_rank(x.shape(), 4, "spatial_mean");
  const Index N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<Scalar> out({N, C});
  for (Index p = 0; p < N * C; ++p) out.data[p] = x.value().data.segment(p * HW, HW).mean();
  return make_result<Scalar>(std::move(out), {x}, [x, N, C, HW](const Node<Scalar>& self) {
    Tensor<Scalar> dx(x.shape());
    for (Index p = 0; p < N * C; ++p) dx.data.segment(p * HW, HW).setConstant(self.grad.data[p] / Scalar(HW));
    accumulate_grad(*x.node(), std::move(dx));
  });
}

template <typename Scalar>
Variable<Scalar> sample_mean(const Variable<Scalar>& x) {
  const Index N = x.dim(0), M = x.size() / N;
  Tensor<Scalar> out({N});
  for (Index n = 0; n < N; ++n) out.data[n] = x.value().data.segment(n * M, M).mean();
  return make_result<Scalar>(std::move(out), {x}, [x, N, M](const Node<Scalar>& self) {
    Tensor<Scalar> dx(x.shape());
    for (Index n = 0; n < N; ++n) dx.data.segment(n * M, M).setConstant(self.grad.data[n] / Scalar(M));
    accumulate_grad(*x.node(), std::move(dx));
  });
}

template <typename Scalar>
Variable<Scalar> concat_features(const std::vector<Variable<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_features: no inputs");
  const Index N = parts.front().dim(0);
  Index total = 0;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    require_rank(p.shape(), 2, "concat_features");
    if (p.dim(0) != N) throw std::invalid_argument("concat_features: batch mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  Tensor<Scalar> out({N, total});
  auto o = matrix_view(out);
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    o.middleCols(offset, widths[i]) = matrix_view(parts[i].value());
    offset += widths[i];
  }
  return make_result<Scalar>(std::move(out), parts, [parts, widths](const Node<Scalar>& self) {
    auto g = matrix_view(self.grad);
    Index offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (parts[i].requires_grad()) {
        Tensor<Scalar> d(parts[i].shape());
        matrix_view(d) = g.middleCols(offset, widths[i]);
        accumulate_grad(*parts[i].node(), std::move(d));
      }
      offset += widths[i];
    }
  });
}

template <typename Scalar>
Variable<Scalar> batch_norm(const Variable<Scalar>& x, const Variable<Scalar>& gamma, const Variable<Scalar>& beta,
                            Scalar eps) {
  require_rank(x.shape(), 2, "batch_norm");
  const Index N = x.dim(0), F = x.dim(1);
  if (N < 2) throw std::invalid_argument("batch-norm requires batch >= 2");
  auto xm = matrix_view(x.value());
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mu = xm.colwise().mean();
  RowMatrixX<Scalar> centered = xm.rowwise() - mu;
  Eigen::Array<Scalar, 1, Eigen::Dynamic> var = centered.array().square().colwise().sum() / Scalar(N);
  Eigen::Array<Scalar, 1, Eigen::Dynamic> inv_std = (var + eps).rsqrt();
  auto xhat = std::make_shared<RowMatrixX<Scalar>>((centered.array().rowwise() * inv_std).matrix());
  Tensor<Scalar> out({N, F});
  matrix_view(out) = ((xhat->array().rowwise() * gamma.value().data.transpose()).rowwise() +
                     beta.value().data.transpose()).matrix();
  return make_result<Scalar>(std::move(out), {x, gamma, beta},
                             [x, gamma, beta, xhat, inv_std, N, F](const Node<Scalar>& self) {
    auto g = matrix_view(self.grad).array();
    if (gamma.requires_grad()) {
      Tensor<Scalar> dg({F});
      dg.data = (g * xhat->array()).colwise().sum().transpose();
      accumulate_grad(*gamma.node(), std::move(dg));
    }
    if (beta.requires_grad()) {
      Tensor<Scalar> db({F});
      db.data = g.colwise().sum().transpose();
      accumulate_grad(*beta.node(), std::move(db));
    }
    if (x.requires_grad()) {
      Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dxhat =
          g.rowwise() * gamma.value().data.transpose();
      Eigen::Array<Scalar, 1, Eigen::Dynamic> s1 = dxhat.colwise().sum();
      Eigen::Array<Scalar, 1, Eigen::Dynamic> s2 = (dxhat * xhat->array()).colwise().sum();
      Tensor<Scalar> dx({N, F});
      matrix_view(dx) = (((dxhat * Scalar(N)).rowwise() - s1 - (xhat->array().rowwise() * s2)).rowwise() *
                         (inv_std / Scalar(N)))
                            .matrix();
      accumulate_grad(*x.node(), std::move(dx));
    }
  });
}

template <typename Scalar>
Variable<Scalar> batch_norm2d(const Variable<Scalar>& x, const Variable<Scalar>& gamma, const Variable<Scalar>& beta,
                              Scalar eps) {
  require_rank(x.shape(), 4, "batch_norm2d");
  const Index N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3), M = N * HW;
  if (M < 2) throw std::invalid_argument("batch-norm requires batch >= 2");
  require_shape(gamma.shape(), Shape{C}, "batch_norm2d gamma");
  require_shape(beta.shape(), Shape{C}, "batch_norm2d beta");
  const Scalar* xp = x.value().ptr();
  VectorX<Scalar> mu = VectorX<Scalar>::Zero(C);
  for (Index n = 0; n < N; ++n) mu += ConstRowMap<Scalar>(xp + n * C * HW, C, HW).rowwise().sum();
  mu /= static_cast<Scalar>(M);
  auto xhat = std::make_shared<Tensor<Scalar>>(x.shape());
  VectorX<Scalar> var = VectorX<Scalar>::Zero(C);
  for (Index n = 0; n < N; ++n) {
    RowMap<Scalar> h(xhat->ptr() + n * C * HW, C, HW);
    h = ConstRowMap<Scalar>(xp + n * C * HW, C, HW).colwise() - mu;
    var += h.array().square().matrix().rowwise().sum();
  }
  const VectorX<Scalar> inv_std = (var.array() / static_cast<Scalar>(M) + eps).rsqrt().matrix();
  Tensor<Scalar> out(x.shape());
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  for (Index n = 0; n < N; ++n) {
    RowMap<Scalar> h(xhat->ptr() + n * C * HW, C, HW);
    h = inv_std.asDiagonal() * h;
    RowMap<Scalar>(out.ptr() + n * C * HW, C, HW) =
        ((h.array().colwise() * gv).colwise() + bv).matrix();
  }
  return make_result<Scalar>(std::move(out), {x, gamma, beta},
                             [x, gamma, beta, xhat, inv_std, N, C, HW, M](const Node<Scalar>& self) {
    VectorX<Scalar> sg = VectorX<Scalar>::Zero(C), sgx = VectorX<Scalar>::Zero(C);
    for (Index n = 0; n < N; ++n) {
      ConstRowMap<Scalar> g(self.grad.ptr() + n * C * HW, C, HW);
      sg += g.rowwise().sum();
      sgx += g.cwiseProduct(ConstRowMap<Scalar>(xhat->ptr() + n * C * HW, C, HW)).rowwise().sum();
    }
    if (gamma.requires_grad()) accumulate_grad(*gamma.node(), Tensor<Scalar>({C}, sgx.array()));
    if (beta.requires_grad()) accumulate_grad(*beta.node(), Tensor<Scalar>({C}, sg.array()));
    if (x.requires_grad()) {
      const VectorX<Scalar> k = gamma.value().data.matrix().cwiseProduct(inv_std) / static_cast<Scalar>(M);
      const VectorX<Scalar> mean_g = sg, mean_gx = sgx;
      Tensor<Scalar> dx(x.shape());
      for (Index n = 0; n < N; ++n) {
        ConstRowMap<Scalar> g(self.grad.ptr() + n * C * HW, C, HW);
        ConstRowMap<Scalar> h(xhat->ptr() + n * C * HW, C, HW);
        RowMap<Scalar>(dx.ptr() + n * C * HW, C, HW) =
            k.asDiagonal() * ((g * static_cast<Scalar>(M)).colwise() - mean_g -
                              mean_gx.asDiagonal() * h);
      }
      accumulate_grad(*x.node(), std::move(dx));
    }
  });
}

template <typename Scalar>
Variable<Scalar> layer_norm(const Variable<Scalar>& x, Scalar eps) {
  require_rank(x.shape(), 2, "layer_norm");
  const Index M = x.dim(0), F = x.dim(1);
  auto xm = matrix_view(x.value());
  VectorX<Scalar> mu = xm.rowwise().mean();
  RowMatrixX<Scalar> centered = xm.colwise() - mu;
  ArrayX<Scalar> inv_std = (centered.array().square().rowwise().sum() / Scalar(F) + eps).rsqrt();
  Tensor<Scalar> out({M, F});
  matrix_view(out) = (centered.array().colwise() * inv_std).matrix();
  return make_result<Scalar>(std::move(out), {x}, [x, inv_std, F](const Node<Scalar>& self) {
    auto g = matrix_view(self.grad).array();
    auto y = matrix_view(self.value).array();
    ArrayX<Scalar> s1 = g.rowwise().sum();
    ArrayX<Scalar> s2 = (g * y).rowwise().sum();
    Tensor<Scalar> dx(x.shape());
    matrix_view(dx) = ((((g * Scalar(F)).colwise() - s1) - (y.colwise() * s2)).colwise() * (inv_std / Scalar(F)))
                          .matrix();
    accumulate_grad(*x.node(), std::move(dx));
  });
}

template <typename Scalar>
Variable<Scalar> softmax_rows(const Variable<Scalar>& x) {
  require_rank(x.shape(), 2, "softmax_rows");
  auto xm = matrix_view(x.value());
  Tensor<Scalar> out(x.shape());
  auto o = matrix_view(out);
  o = (xm.colwise() - xm.rowwise().maxCoeff()).array().exp().matrix();
  o.array().colwise() /= o.rowwise().sum().array();
  return make_result<Scalar>(std::move(out), {x}, [x](const Node<Scalar>& self) {
    auto g = matrix_view(self.grad).array();
    auto y = matrix_view(self.value).array();
    ArrayX<Scalar> dot = (g * y).rowwise().sum();
    Tensor<Scalar> dx(x.shape());
    matrix_view(dx) = (y * (g.colwise() - dot)).matrix();
    accumulate_grad(*x.node(), std::move(dx));
  });
}

#define HPGAN_INSTANTIATE_OPS(S)                                                                          \
  template Variable<S> add(const Variable<S>&, const Variable<S>&);                                       \
  template Variable<S> sub(const Variable<S>&, const Variable<S>&);                                       \
  template Variable<S> mul(const Variable<S>&, const Variable<S>&);                                       \
  template Variable<S> scale(const Variable<S>&, S);                                                      \
  template Variable<S> add_scalar(const Variable<S>&, S);                                                 \
  template Variable<S> square(const Variable<S>&);                                                        \
  template Variable<S> leaky_relu(const Variable<S>&, S);                                                 \
  template Variable<S> tanh(const Variable<S>&);                                                          \
  template Variable<S> sigmoid(const Variable<S>&);                                                       \
  template Variable<S> gelu(const Variable<S>&);                                                          \
  template Variable<S> sum(const Variable<S>&);                                                           \
  template Variable<S> mean(const Variable<S>&);                                                          \
  template Variable<S> reshape(const Variable<S>&, Shape);                                                \
  template Variable<S> matmul(const Variable<S>&, const Variable<S>&);                                    \
  template Variable<S> linear(const Variable<S>&, const Variable<S>&, const Variable<S>&);                \
  template Variable<S> bmm(const Variable<S>&, const Variable<S>&);                                       \
  template Variable<S> conv2d(const Variable<S>&, const Variable<S>&, const Variable<S>&, int, int);      \
  template Variable<S> separable(const Variable<S>&, const MatrixX<S>&, const MatrixX<S>&);               \
  template Variable<S> gather(const Variable<S>&, std::vector<Index>, Shape);                             \
  template Variable<S> add_channel_bias(const Variable<S>&, const Variable<S>&);                          \
  template Variable<S> mul_channels(const Variable<S>&, const Variable<S>&);                              \
  template Variable<S> add_samples(const Variable<S>&, const Variable<S>&);                               \
  template Variable<S> mul_samples(const Variable<S>&, const Variable<S>&);                               \
  template Variable<S> spatial_mean(const Variable<S>&);                                                  \
  template Variable<S> sample_mean(const Variable<S>&);                                                   \
  template Variable<S> concat_features(const std::vector<Variable<S>>&);                                  \
  template Variable<S> batch_norm(const Variable<S>&, const Variable<S>&, const Variable<S>&, S);         \
  template Variable<S> batch_norm2d(const Variable<S>&, const Variable<S>&, const Variable<S>&, S);       \
  template Variable<S> layer_norm(const Variable<S>&, S);                                                 \
  template Variable<S> softmax_rows(const Variable<S>&);

HPGAN_INSTANTIATE_OPS(float)
HPGAN_INSTANTIATE_OPS(double)

#undef HPGAN_INSTANTIATE_OPS

}  // namespace hpgan::ag
