#pragma once

// Mixture-of-kernels softmax:
//
//   p(v | h) = sum_k pi_k(h) * softmax_v(S_k(W_v, ht_k))
//   pi(h)    = softmax(M^T h)
//   ht_k     = tanh(C_k^T h)            (only when K > 1)
//
// with one projection matrix W shared by every component. Mixing happens in
// probability space: log p = logsumexp_k(log pi_k + log_softmax_k).

#include <span>
#include <vector>

#include "ksoftmax/kernels.hpp"
#include "ksoftmax/rng.hpp"

namespace ksoftmax {

/// How the mixture-weight penalty measures spread.
enum class VarianceMode {
  per_datum,      // variance over the K weights of each datum, averaged over the batch
  per_component,  // variance of each component's weight over the batch, averaged over K
};

struct MixtureConfig {
  std::vector<KernelSpec> components;
  int d = 32;
  int V = 0;
  bool tie_projection = true;
  double rho = 0.1;
  VarianceMode variance_mode = VarianceMode::per_datum;

  int K() const { return static_cast<int>(components.size()); }
  bool transform_contexts() const { return K() > 1; }
  bool has_gaussian() const;
  bool has_hpb() const;
  void validate() const;
};

struct OutputParams {
  Matrix W;                   // d x V, shared by every component
  Vector word_log_vars;       // V, only when a component is ssg/mog
  Matrix M;                   // d x K, empty when K = 1
  std::vector<Matrix> C;      // K of d x d, empty when K = 1
  Vector component_log_vars;  // K, only when a component is ssg/mog

  /// Same shapes, all zeros.
  OutputParams zeros_like() const;
};

/// hpb operands are kept at norm <= 1 - 1e-5.
inline constexpr double kBallRadius = 1.0 - 1e-5;

/// W, M, C ~ U(-1/sqrt(d), 1/sqrt(d)), log-variances 0. W columns are then
/// projected into the ball when an hpb component is present.
OutputParams init_output_params(const MixtureConfig& config, Rng& rng);

/// Rescales W columns to norm <= kBallRadius. No-op without hpb components.
void project_to_ball(const MixtureConfig& config, OutputParams& params);

struct ForwardCache {
  Matrix H;                        // B x d input contexts
  std::vector<Matrix> contexts;    // per component: the kernel's context input (B x d)
  std::vector<Matrix> logits;      // per component: B x V
  std::vector<Matrix> log_softmax; // per component: B x V
  Matrix pi;                       // B x K
  Matrix log_pi;                   // B x K
  Matrix log_posterior;            // B x V
};

/// Row b is softmax_k(M_k . h_b).
Matrix mixture_weights(const Matrix& M, const Matrix& H);

/// tanh(H C_k) for each k, i.e. ht_k = tanh(C_k^T h) per row.
std::vector<Matrix> transform_contexts(const std::vector<Matrix>& C, const Matrix& H);

struct Posterior {
  Matrix probs;  // B x V
  ForwardCache cache;
};

/// Throws DimensionMismatch, or NonFiniteScore tagged with the component index.
Posterior posterior(const MixtureConfig& config, const OutputParams& params, const Matrix& H);

struct LossValue {
  double value = 0.0;          // cross_entropy + regularizer
  double cross_entropy = 0.0;  // mean -log p(target)
  double regularizer = 0.0;
  ForwardCache cache;
};

/// Throws TargetOutOfRange for a target outside [0, V).
LossValue loss(const MixtureConfig& config, const OutputParams& params, const Matrix& H,
               std::span<const int> targets);

/// The mixture-weight penalty rho/N * sum Var(pi) for weights pi (B x K).
double variance_regularizer(const MixtureConfig& config, const Matrix& pi);

/// Mean over rows of the population variance of each row of pi.
double mean_weight_variance(const Matrix& pi);

struct OutputGrads {
  OutputParams d_params;
  Matrix d_H;  // B x d
};

OutputGrads backward(const MixtureConfig& config, const OutputParams& params,
                     const ForwardCache& cache, std::span<const int> targets);

}  // namespace ksoftmax
