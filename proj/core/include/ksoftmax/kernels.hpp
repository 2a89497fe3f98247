#pragma once

// Kernel scoring functions S(w, h) used as softmax logits, their analytic
// gradients, and the batched (B x V) evaluation used by the output layer.
//
// Distance-based kernels are functions of the squared distance
// x = ||w - h||^2. The batched path never forms difference vectors: it gets
// x from ||w||^2 + ||h||^2 - 2 w.h, clamped at zero.

#include <Eigen/Dense>

#include <array>
#include <string_view>

namespace ksoftmax {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

enum class KernelKind { lin, log, pow, pol, rbf, ssg, mog, hpb, wav };

inline constexpr std::array<KernelKind, 9> kAllKernels = {
    KernelKind::lin, KernelKind::log, KernelKind::pow, KernelKind::pol, KernelKind::rbf,
    KernelKind::ssg, KernelKind::mog, KernelKind::hpb, KernelKind::wav};

std::string_view to_string(KernelKind kind);
KernelKind parse_kernel_kind(std::string_view name);

/// log, pow, rbf, wav and hpb: kernels whose only dependence on (w, h) is via
/// the difference norm (plus the two norms, for hpb).
bool is_distance_kernel(KernelKind kind);
/// ssg and mog carry a variance on each side.
bool is_gaussian_kernel(KernelKind kind);

struct KernelSpec {
  KernelKind kind = KernelKind::lin;
  double p = 2.0;      // exponent: log, pow, pol (pol requires an integer)
  double alpha = 1.0;  // pol scale
  double c = 1.0;      // pol offset
  double gamma = 1.0;  // rbf width
  double a = 1.0;      // wav cosine scale
  double b = 1.0;      // wav decay scale
  int num_gauss = 2;   // mog Gaussians per word and per context
  bool learn_variances = true;
  bool mog_log_of_sum = false;  // log of the mixture integral instead of sum of logs

  /// Defaults scaled for hidden size d: alpha = gamma = 1/d.
  static KernelSpec with_defaults(KernelKind kind, int d);

  /// Throws Error(InvalidSpec) on a nonpositive p/gamma/a/b, a non-integer pol
  /// degree or num_gauss < 1. Fields unused by `kind` are not inspected.
  void validate() const;
};

/// Spherical Gaussian: variance exp(log_var) * I.
struct GaussianParams {
  Vector mean;
  double log_var = 0.0;
};

struct Score {
  double value = 0.0;
  bool finite = true;

  operator double() const { return value; }
};

/// Derivatives with respect to the continuous hyperparameters. Entries that do
/// not apply to the kernel are zero; the pol degree is integral and has none.
struct HyperGrad {
  double p = 0.0;
  double alpha = 0.0;
  double c = 0.0;
  double gamma = 0.0;
  double a = 0.0;
  double b = 0.0;
};

struct KernelGrad {
  Vector d_w;
  Vector d_h;
  double d_w_log_var = 0.0;
  double d_h_log_var = 0.0;
  HyperGrad d_hyper;
  // Set at a non-differentiable point (log/pow with p < 2 or hpb at w == h);
  // the returned gradient is then the zero subgradient.
  bool singular = false;
};

/// S(w, h). Gaussian kernels read the variances from the GaussianParams; the
/// vector overload gives them unit variance on both sides.
///
/// Throws DimensionMismatch, HpbOutsideBall (either norm >= 1), InvalidSpec
/// or NonFiniteScore.
Score score(const KernelSpec& spec, const GaussianParams& w, const GaussianParams& h);
Score score(const KernelSpec& spec, const VectorRef& w, const VectorRef& h);

/// Distance kernels evaluated from (||w||^2, ||h||^2, w.h) alone.
/// Throws WrongKernelKind for lin, pol, ssg and mog.
Score score_via_trick(const KernelSpec& spec, double w_norm_sq, double h_norm_sq, double dot);

KernelGrad grad(const KernelSpec& spec, const GaussianParams& w, const GaussianParams& h);
KernelGrad grad(const KernelSpec& spec, const VectorRef& w, const VectorRef& h);

/// Value and slope dS/dx of a distance kernel as a function of the squared
/// distance x. Defined for log, pow, rbf and wav. For pow/log with p < 2 the
/// slope at x = 0 is reported as zero.
struct RadialPoint {
  double value = 0.0;
  double slope = 0.0;
};
RadialPoint radial_profile(const KernelSpec& spec, double sq_dist);

/// Logits for every (context, word) pair: result(b, v) = S(W.col(v), H.row(b)).
///
/// W is d x V, H is B x d. `word_log_vars` (size V) and `context_log_var`
/// are read by ssg/mog only; an empty `word_log_vars` means all zeros.
/// Throws NonFiniteScore naming the first offending (b, v).
Matrix batch_logits(const KernelSpec& spec, const Matrix& W, const Matrix& H,
                    const Vector& word_log_vars = Vector(), double context_log_var = 0.0);

struct BatchGrad {
  Matrix d_W;               // d x V
  Matrix d_H;               // B x d
  Vector d_word_log_vars;   // V, zeros for non-Gaussian kernels
  double d_context_log_var = 0.0;
};

/// Pulls d_logits (B x V, the loss gradient w.r.t. batch_logits) back to W, H
/// and the variances. Singular pairs contribute the zero subgradient.
BatchGrad batch_backward(const KernelSpec& spec, const Matrix& W, const Matrix& H,
                         const Vector& word_log_vars, double context_log_var,
                         const Matrix& d_logits);

}  // namespace ksoftmax
