#pragma once

// Feedforward n-gram context encoder: h = tanh(F^T [E w_1; ...; E w_n] + bias).

#include <Eigen/Dense>

#include "ksoftmax/kernels.hpp"
#include "ksoftmax/rng.hpp"

namespace ksoftmax {

/// Token windows, one row per context, oldest token first.
using Windows = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EncoderParams {
  Matrix E;     // d_e x V input embeddings
  Matrix F;     // (n * d_e) x d
  Vector bias;  // d
  int n = 3;
  int d_e = 32;

  int V() const { return static_cast<int>(E.cols()); }
  int d() const { return static_cast<int>(F.cols()); }
  EncoderParams zeros_like() const;
};

/// E ~ U(-1/sqrt(d_e), 1/sqrt(d_e)), F ~ U(-1/sqrt(n d_e), 1/sqrt(n d_e)), bias 0.
EncoderParams init_encoder_params(int V, int n, int d_e, int d, Rng& rng);

/// B x d contexts. Throws TokenOutOfRange or DimensionMismatch (wrong window width).
Matrix encode(const EncoderParams& params, const Windows& windows);

/// Accumulates gradients for E, F and bias given dL/dH and the forward output H.
void encode_backward(const EncoderParams& params, const Windows& windows, const Matrix& H,
                     const Matrix& d_H, EncoderParams& grads);

}  // namespace ksoftmax
