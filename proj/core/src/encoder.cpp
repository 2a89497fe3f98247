#include "ksoftmax/encoder.hpp"

#include <cmath>
#include <sstream>

#include "ksoftmax/error.hpp"

namespace ksoftmax {
namespace {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  }
  return m;
}

Matrix gather(const EncoderParams& params, const Windows& windows) {
  if (windows.cols() != params.n) {
    std::ostringstream msg;
    msg << "windows have width " << windows.cols() << ", encoder expects " << params.n;
    throw Error(Errc::DimensionMismatch, msg.str());
  }
  Matrix X(windows.rows(), static_cast<Eigen::Index>(params.n) * params.d_e);
  for (Eigen::Index b = 0; b < windows.rows(); ++b) {
    for (int j = 0; j < params.n; ++j) {
      const int id = windows(b, j);
      if (id < 0 || id >= params.V()) {
        std::ostringstream msg;
        msg << "token id " << id << " outside [0, " << params.V() << ")";
        throw Error(Errc::TokenOutOfRange, msg.str());
      }
      X.block(b, static_cast<Eigen::Index>(j) * params.d_e, 1, params.d_e) =
          params.E.col(id).transpose();
    }
  }
  return X;
}

}  // namespace

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z;
  z.E = Matrix::Zero(E.rows(), E.cols());
  z.F = Matrix::Zero(F.rows(), F.cols());
  z.bias = Vector::Zero(bias.size());
  z.n = n;
  z.d_e = d_e;
  return z;
}

EncoderParams init_encoder_params(int V, int n, int d_e, int d, Rng& rng) {
  if (n < 1 || d_e < 1 || d < 1 || V < 1) {
    throw Error(Errc::InvalidConfig, "encoder sizes must be positive");
  }
  EncoderParams p;
  p.n = n;
  p.d_e = d_e;
  p.E = uniform_matrix(d_e, V, 1.0 / std::sqrt(static_cast<double>(d_e)), rng);
  p.F = uniform_matrix(static_cast<Eigen::Index>(n) * d_e, d,
                       1.0 / std::sqrt(static_cast<double>(n) * d_e), rng);
  p.bias = Vector::Zero(d);
  return p;
}

Matrix encode(const EncoderParams& params, const Windows& windows) {
  const Matrix X = gather(params, windows);
  Matrix pre = X * params.F;
  pre.rowwise() += params.bias.transpose();
  return pre.array().tanh().matrix();
}

void encode_backward(const EncoderParams& params, const Windows& windows, const Matrix& H,
                     const Matrix& d_H, EncoderParams& grads) {
  const Matrix X = gather(params, windows);
  const Matrix d_pre = (d_H.array() * (1.0 - H.array().square())).matrix();
  grads.F.noalias() += X.transpose() * d_pre;
  grads.bias += d_pre.colwise().sum().transpose();
  const Matrix d_X = d_pre * params.F.transpose();
  for (Eigen::Index b = 0; b < windows.rows(); ++b) {
    for (int j = 0; j < params.n; ++j) {
      grads.E.col(windows(b, j)) +=
          d_X.block(b, static_cast<Eigen::Index>(j) * params.d_e, 1, params.d_e).transpose();
    }
  }
}

}  // namespace ksoftmax
