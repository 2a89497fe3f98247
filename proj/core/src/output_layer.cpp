#include "ksoftmax/output_layer.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "ksoftmax/error.hpp"

namespace ksoftmax {
namespace {

// Contexts feeding an hpb component are scaled into the ball: every entry of
// a tanh output lies in (-1, 1), so dividing by sqrt(d) bounds the norm by 1.
double context_scale(const MixtureConfig& config, int k) {
  if (config.components[static_cast<std::size_t>(k)].kind != KernelKind::hpb) return 1.0;
  return kBallRadius / std::sqrt(static_cast<double>(config.d));
}

// Row-wise log-softmax with max subtraction.
Matrix log_softmax_rows(const Matrix& z) {
  const Vector top = z.rowwise().maxCoeff();
  Matrix shifted = z.colwise() - top;
  const Vector lse = shifted.array().exp().rowwise().sum().log().matrix();
  shifted.colwise() -= lse;
  return shifted;
}

void check_contexts(const MixtureConfig& config, const OutputParams& params, const Matrix& H) {
  if (H.cols() != config.d || params.W.rows() != config.d || params.W.cols() != config.V) {
    std::ostringstream msg;
    msg << "expected H with " << config.d << " columns and W " << config.d << "x" << config.V
        << ", got H " << H.rows() << "x" << H.cols() << " and W " << params.W.rows() << "x"
        << params.W.cols();
    throw Error(Errc::DimensionMismatch, msg.str());
  }
}

double log_var_or_zero(const Vector& v, int k) {
  return v.size() == 0 ? 0.0 : v[k];
}

}  // namespace

bool MixtureConfig::has_gaussian() const {
  for (const auto& c : components) {
    if (is_gaussian_kernel(c.kind)) return true;
  }
  return false;
}

bool MixtureConfig::has_hpb() const {
  for (const auto& c : components) {
    if (c.kind == KernelKind::hpb) return true;
  }
  return false;
}

void MixtureConfig::validate() const {
  if (components.empty()) throw Error(Errc::InvalidConfig, "mixture needs at least one kernel");
  if (d < 1) throw Error(Errc::InvalidConfig, "d must be positive");
  if (V < 2) throw Error(Errc::InvalidConfig, "V must be at least 2");
  if (!tie_projection) throw Error(Errc::InvalidConfig, "untied projections are not supported");
  if (!(rho >= 0.0) || !std::isfinite(rho)) {
    throw Error(Errc::InvalidConfig, "rho must be a nonnegative number");
  }
  for (const auto& c : components) c.validate();
}

OutputParams OutputParams::zeros_like() const {
  OutputParams z;
  z.W = Matrix::Zero(W.rows(), W.cols());
  z.word_log_vars = Vector::Zero(word_log_vars.size());
  z.M = Matrix::Zero(M.rows(), M.cols());
  for (const auto& c : C) z.C.push_back(Matrix::Zero(c.rows(), c.cols()));
  z.component_log_vars = Vector::Zero(component_log_vars.size());
  return z;
}

OutputParams init_output_params(const MixtureConfig& config, Rng& rng) {
  config.validate();
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.d));
  auto uniform = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
    }
    return m;
  };

  OutputParams p;
  p.W = uniform(config.d, config.V);
  if (config.transform_contexts()) {
    p.M = uniform(config.d, config.K());
    for (int k = 0; k < config.K(); ++k) p.C.push_back(uniform(config.d, config.d));
  }
  if (config.has_gaussian()) {
    p.word_log_vars = Vector::Zero(config.V);
    p.component_log_vars = Vector::Zero(config.K());
  }
  project_to_ball(config, p);
  return p;
}

void project_to_ball(const MixtureConfig& config, OutputParams& params) {
  if (!config.has_hpb()) return;
  for (Eigen::Index v = 0; v < params.W.cols(); ++v) {
    const double norm = params.W.col(v).norm();
    if (norm > kBallRadius) params.W.col(v) *= kBallRadius / norm;
  }
}

Matrix mixture_weights(const Matrix& M, const Matrix& H) {
  if (M.rows() != H.cols()) throw Error(Errc::DimensionMismatch, "M rows must equal H columns");
  return log_softmax_rows(H * M).array().exp().matrix();
}

std::vector<Matrix> transform_contexts(const std::vector<Matrix>& C, const Matrix& H) {
  std::vector<Matrix> out;
  out.reserve(C.size());
  for (const auto& Ck : C) {
    if (Ck.rows() != H.cols()) throw Error(Errc::DimensionMismatch, "C_k must be d x d");
    out.push_back((H * Ck).array().tanh().matrix());
  }
  return out;
}

Posterior posterior(const MixtureConfig& config, const OutputParams& params, const Matrix& H) {
  check_contexts(config, params, H);
  const int K = config.K();
  Posterior out;
  ForwardCache& cache = out.cache;
  cache.H = H;

  if (config.transform_contexts()) {
    cache.contexts = transform_contexts(params.C, H);
    cache.log_pi = log_softmax_rows(H * params.M);
    cache.pi = cache.log_pi.array().exp().matrix();
  } else {
    cache.contexts = {H};
    cache.log_pi = Matrix::Zero(H.rows(), 1);
    cache.pi = Matrix::Ones(H.rows(), 1);
  }

  for (int k = 0; k < K; ++k) {
    const auto& spec = config.components[static_cast<std::size_t>(k)];
    const double scale = context_scale(config, k);
    if (scale != 1.0) cache.contexts[static_cast<std::size_t>(k)] *= scale;
    try {
      cache.logits.push_back(batch_logits(spec, params.W, cache.contexts[static_cast<std::size_t>(k)],
                                          params.word_log_vars,
                                          log_var_or_zero(params.component_log_vars, k)));
    } catch (const Error& e) {
      throw Error(e.code(), "component " + std::to_string(k + 1) + " (" +
                                std::string(to_string(spec.kind)) + "): " + e.detail());
    }
    cache.log_softmax.push_back(log_softmax_rows(cache.logits.back()));
  }

  if (K == 1) {
    cache.log_posterior = cache.log_softmax.front();
  } else {
    const Eigen::Index B = H.rows();
    const Eigen::Index V = params.W.cols();
    Matrix top = Matrix::Constant(B, V, -std::numeric_limits<double>::infinity());
    for (int k = 0; k < K; ++k) {
      top = top.cwiseMax((cache.log_softmax[static_cast<std::size_t>(k)].colwise() +
                          cache.log_pi.col(k)));
    }
    Matrix acc = Matrix::Zero(B, V);
    for (int k = 0; k < K; ++k) {
      acc.array() += ((cache.log_softmax[static_cast<std::size_t>(k)].colwise() +
                       cache.log_pi.col(k)) - top).array().exp();
    }
    cache.log_posterior = (top.array() + acc.array().log()).matrix();
  }
  out.probs = cache.log_posterior.array().exp().matrix();
  return out;
}

double mean_weight_variance(const Matrix& pi) {
  if (pi.rows() == 0) return 0.0;
  const Vector mean = pi.rowwise().mean();
  return ((pi.colwise() - mean).array().square().rowwise().mean()).mean();
}

double variance_regularizer(const MixtureConfig& config, const Matrix& pi) {
  if (config.rho == 0.0 || pi.cols() < 2 || pi.rows() == 0) return 0.0;
  if (config.variance_mode == VarianceMode::per_datum) {
    return config.rho * mean_weight_variance(pi);
  }
  const Eigen::RowVectorXd mean = pi.colwise().mean();
  return config.rho * ((pi.rowwise() - mean).array().square().colwise().mean()).mean();
}

LossValue loss(const MixtureConfig& config, const OutputParams& params, const Matrix& H,
               std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != H.rows()) {
    throw Error(Errc::DimensionMismatch, "one target per context is required");
  }
  for (std::size_t b = 0; b < targets.size(); ++b) {
    if (targets[b] < 0 || targets[b] >= config.V) {
      std::ostringstream msg;
      msg << "target " << targets[b] << " at position " << b << " outside [0, " << config.V << ")";
      throw Error(Errc::TargetOutOfRange, msg.str());
    }
  }
  LossValue out;
  Posterior post = posterior(config, params, H);
  double nll = 0.0;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    nll -= post.cache.log_posterior(static_cast<Eigen::Index>(b), targets[b]);
  }
  out.cross_entropy = targets.empty() ? 0.0 : nll / static_cast<double>(targets.size());
  out.regularizer = variance_regularizer(config, post.cache.pi);
  out.value = out.cross_entropy + out.regularizer;
  out.cache = std::move(post.cache);
  return out;
}

OutputGrads backward(const MixtureConfig& config, const OutputParams& params,
                     const ForwardCache& cache, std::span<const int> targets) {
  const int K = config.K();
  const Eigen::Index B = cache.H.rows();
  const double inv_B = B > 0 ? 1.0 / static_cast<double>(B) : 0.0;

  OutputGrads out;
  out.d_params = params.zeros_like();
  out.d_H = Matrix::Zero(B, config.d);

  // Responsibilities r_bk = pi_bk softmax_k(target) / p(target).
  Matrix resp(B, K);
  for (Eigen::Index b = 0; b < B; ++b) {
    const int t = targets[static_cast<std::size_t>(b)];
    for (int k = 0; k < K; ++k) {
      resp(b, k) = std::exp(cache.log_pi(b, k) + cache.log_softmax[static_cast<std::size_t>(k)](b, t) -
                            cache.log_posterior(b, t));
    }
  }

  for (int k = 0; k < K; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const auto& spec = config.components[ks];
    // dL/dz_k = r_k (softmax_k - onehot) / B
    Matrix d_logits = cache.log_softmax[ks].array().exp().matrix();
    for (Eigen::Index b = 0; b < B; ++b) d_logits(b, targets[static_cast<std::size_t>(b)]) -= 1.0;
    d_logits = (d_logits.array().colwise() * (resp.col(k).array() * inv_B)).matrix();

    const double ctx_log_var = log_var_or_zero(params.component_log_vars, k);
    BatchGrad g = batch_backward(spec, params.W, cache.contexts[ks], params.word_log_vars,
                                 ctx_log_var, d_logits);
    out.d_params.W += g.d_W;
    if (is_gaussian_kernel(spec.kind) && spec.learn_variances) {
      out.d_params.word_log_vars += g.d_word_log_vars;
      out.d_params.component_log_vars[k] += g.d_context_log_var;
    }

    Matrix d_base = g.d_H * context_scale(config, k);
    if (config.transform_contexts()) {
      const Matrix base = cache.contexts[ks] / context_scale(config, k);
      const Matrix d_pre = (d_base.array() * (1.0 - base.array().square())).matrix();
      out.d_params.C[ks].noalias() += cache.H.transpose() * d_pre;
      out.d_H.noalias() += d_pre * params.C[ks].transpose();
    } else {
      out.d_H += d_base;
    }
  }

  if (config.transform_contexts()) {
    // Cross-entropy through log pi: dL/du = (pi - r) / B.
    Matrix d_u = (cache.pi - resp) * inv_B;
    if (config.rho != 0.0 && B > 0) {
      Matrix d_pi;
      if (config.variance_mode == VarianceMode::per_datum) {
        d_pi = (cache.pi.array() - 1.0 / K) * (2.0 * config.rho * inv_B / K);
      } else {
        const Eigen::RowVectorXd mean = cache.pi.colwise().mean();
        d_pi = ((cache.pi.rowwise() - mean) * (2.0 * config.rho * inv_B / K));
      }
      const Vector inner = (d_pi.array() * cache.pi.array()).rowwise().sum();
      d_u += ((d_pi.colwise() - inner).array() * cache.pi.array()).matrix();
    }
    out.d_params.M.noalias() += cache.H.transpose() * d_u;
    out.d_H.noalias() += d_u * params.M.transpose();
  }
  return out;
}

}  // namespace ksoftmax
