#pragma once

#include "hpgan/autograd.hpp"

#include <vector>

// Differentiable free functions over ag::Variable. Instantiated for float and double.
namespace hpgan::ag {

template <typename Scalar>
Variable<Scalar> constant(Tensor<Scalar> value) {
  return Variable<Scalar>(std::move(value), false);
}

template <typename Scalar>
Variable<Scalar> parameter(Tensor<Scalar> value) {
  return Variable<Scalar>(std::move(value), true);
}

/// Same value, cut from the graph.
template <typename Scalar>
Variable<Scalar> detach(const Variable<Scalar>& x) {
  return Variable<Scalar>(x.value(), false);
}

// Elementwise, identical shapes.
template <typename Scalar> Variable<Scalar> add(const Variable<Scalar>& a, const Variable<Scalar>& b);
template <typename Scalar> Variable<Scalar> sub(const Variable<Scalar>& a, const Variable<Scalar>& b);
template <typename Scalar> Variable<Scalar> mul(const Variable<Scalar>& a, const Variable<Scalar>& b);
template <typename Scalar> Variable<Scalar> scale(const Variable<Scalar>& a, Scalar s);
template <typename Scalar> Variable<Scalar> add_scalar(const Variable<Scalar>& a, Scalar s);
template <typename Scalar> Variable<Scalar> square(const Variable<Scalar>& a);

template <typename Scalar> Variable<Scalar> leaky_relu(const Variable<Scalar>& x, Scalar slope);
template <typename Scalar> Variable<Scalar> relu(const Variable<Scalar>& x) { return leaky_relu(x, Scalar(0)); }
template <typename Scalar> Variable<Scalar> tanh(const Variable<Scalar>& x);
template <typename Scalar> Variable<Scalar> sigmoid(const Variable<Scalar>& x);
/// tanh approximation of the Gaussian error linear unit.
template <typename Scalar> Variable<Scalar> gelu(const Variable<Scalar>& x);

template <typename Scalar> Variable<Scalar> sum(const Variable<Scalar>& x);
template <typename Scalar> Variable<Scalar> mean(const Variable<Scalar>& x);
template <typename Scalar> Variable<Scalar> reshape(const Variable<Scalar>& x, Shape shape);

/// a [n, k] times b [k, m].
template <typename Scalar> Variable<Scalar> matmul(const Variable<Scalar>& a, const Variable<Scalar>& b);
/// x [n, k] times w[m, k] transposed, plus optional bias [m].
template <typename Scalar>
Variable<Scalar> linear(const Variable<Scalar>& x, const Variable<Scalar>& w, const Variable<Scalar>& bias);
/// Batched a [B, m, k] times b [B, k, n].
template <typename Scalar> Variable<Scalar> bmm(const Variable<Scalar>& a, const Variable<Scalar>& b);

/// NCHW convolution with zero padding; bias [O] optional (undefined Variable to skip).
template <typename Scalar>
Variable<Scalar> conv2d(const Variable<Scalar>& x, const Variable<Scalar>& w, const Variable<Scalar>& bias,
                        int stride, int pad);

/// Per-plane linear map Y = rows * X * cols^T on an NCHW batch. Covers resizing, pooling and
/// separable filtering with any boundary rule folded into the matrices.
template <typename Scalar>
Variable<Scalar> separable(const Variable<Scalar>& x, const MatrixX<Scalar>& rows, const MatrixX<Scalar>& cols);

/// out[i] = x[index[i]], or 0 where index[i] < 0.
template <typename Scalar>
Variable<Scalar> gather(const Variable<Scalar>& x, std::vector<Index> index, Shape out_shape);

template <typename Scalar> Variable<Scalar> add_channel_bias(const Variable<Scalar>& x, const Variable<Scalar>& bias);
/// x [N, C, H, W] scaled by g [N, C].
template <typename Scalar> Variable<Scalar> mul_channels(const Variable<Scalar>& x, const Variable<Scalar>& g);
/// x [N, ...] plus b [N] broadcast over each sample.
template <typename Scalar> Variable<Scalar> add_samples(const Variable<Scalar>& x, const Variable<Scalar>& b);
/// x [N, ...] times s [N] broadcast over each sample.
template <typename Scalar> Variable<Scalar> mul_samples(const Variable<Scalar>& x, const Variable<Scalar>& s);

/// [N, C, H, W] -> [N, C].
template <typename Scalar> Variable<Scalar> spatial_mean(const Variable<Scalar>& x);
/// [N, ...] -> [N].
template <typename Scalar> Variable<Scalar> sample_mean(const Variable<Scalar>& x);
/// Concatenates [N, F_i] blocks along the feature axis.
template <typename Scalar> Variable<Scalar> concat_features(const std::vector<Variable<Scalar>>& parts);

/// Batch normalization over the rows of x [N, F] with batch statistics (biased variance).
template <typename Scalar>
Variable<Scalar> batch_norm(const Variable<Scalar>& x, const Variable<Scalar>& gamma, const Variable<Scalar>& beta,
                            Scalar eps);
/// Per-channel batch normalization of x [N, C, H, W] over (N, H, W) with batch statistics.
template <typename Scalar>
Variable<Scalar> batch_norm2d(const Variable<Scalar>& x, const Variable<Scalar>& gamma, const Variable<Scalar>& beta,
                              Scalar eps);
/// Normalizes each row of x [M, F] to zero mean and unit variance.
template <typename Scalar> Variable<Scalar> layer_norm(const Variable<Scalar>& x, Scalar eps);
template <typename Scalar> Variable<Scalar> softmax_rows(const Variable<Scalar>& x);

template <typename Scalar>
Variable<Scalar> operator+(const Variable<Scalar>& a, const Variable<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Variable<Scalar> operator-(const Variable<Scalar>& a, const Variable<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Variable<Scalar> operator*(const Variable<Scalar>& a, const Variable<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Variable<Scalar> operator*(const Variable<Scalar>& a, Scalar s) { return scale(a, s); }
template <typename Scalar>
Variable<Scalar> operator*(Scalar s, const Variable<Scalar>& a) { return scale(a, s); }

}  // namespace hpgan::ag
