#include "ksoftmax/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "ksoftmax/error.hpp"

namespace ksoftmax {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // ln(2*pi)

bool is_integer(double v) { return std::isfinite(v) && std::floor(v) == v; }

void check_dims(const VectorRef& w, const VectorRef& h) {
  if (w.size() != h.size() || w.size() < 1) {
    std::ostringstream msg;
    msg << "word vector has dimension " << w.size() << ", context vector " << h.size();
    throw Error(Errc::DimensionMismatch, msg.str());
  }
}

Score checked(double value, KernelKind kind) {
  if (!std::isfinite(value)) {
    throw Error(Errc::NonFiniteScore, std::string(to_string(kind)) + " score is not finite");
  }
  return Score{value, true};
}

// -arcosh(1 + z) written with log1p so it stays accurate for small z.
double hpb_value(double z) { return -std::log1p(z + std::sqrt(z * (z + 2.0))); }

// Conformal factors 1 - ||.||^2 of the Poincare ball; throws outside it.
double ball_factor(double norm_sq, const char* which) {
  if (!(norm_sq < 1.0)) {
    std::ostringstream msg;
    msg << which << " vector has squared norm " << norm_sq << " (must be < 1)";
    throw Error(Errc::HpbOutsideBall, msg.str());
  }
  return 1.0 - norm_sq;
}

// x^(p/2) with the x = 0 edge handled for every p > 0.
double half_power(double x, double p) { return x > 0.0 ? std::pow(x, 0.5 * p) : 0.0; }

// d/dx of x^(p/2); zero where it is singular (x = 0, p < 2).
double half_power_slope(double x, double p) {
  if (x > 0.0) return 0.5 * p * std::pow(x, 0.5 * p - 1.0);
  return p == 2.0 ? 1.0 : 0.0;
}

bool radial_singular(const KernelSpec& spec, double x) {
  if (x > 0.0) return false;
  if (spec.kind == KernelKind::hpb) return true;
  return (spec.kind == KernelKind::pow || spec.kind == KernelKind::log) && spec.p < 2.0;
}

HyperGrad radial_hyper_grad(const KernelSpec& spec, double x) {
  HyperGrad g;
  switch (spec.kind) {
    case KernelKind::pow:
      if (x > 0.0) g.p = -half_power(x, spec.p) * 0.5 * std::log(x);
      break;
    case KernelKind::log:
      if (x > 0.0) {
        const double xp = half_power(x, spec.p);
        g.p = -xp * 0.5 * std::log(x) / (1.0 + xp);
      }
      break;
    case KernelKind::rbf:
      g.gamma = -x * std::exp(-spec.gamma * x);
      break;
    case KernelKind::wav: {
      const double decay = std::exp(-x / spec.b);
      g.a = std::sin(x / spec.a) * x / (spec.a * spec.a) * decay;
      g.b = std::cos(x / spec.a) * decay * x / (spec.b * spec.b);
      break;
    }
    default:
      break;
  }
  return g;
}

int mog_chunk_dim(int d, int num_gauss) { return (d + num_gauss - 1) / num_gauss; }

// Coordinate t of Gaussian i when the d-vector is cut into num_gauss
// consecutive blocks of size m; positions past d read as zero.
double chunk_at(const VectorRef& v, int i, int t, int m) {
  const Eigen::Index k = static_cast<Eigen::Index>(i) * m + t;
  return k < v.size() ? v[k] : 0.0;
}

// Zero-pads rows (for a d x V matrix) to num_gauss * m.
Matrix pad_rows(const Matrix& W, int padded) {
  Matrix out = Matrix::Zero(padded, W.cols());
  out.topRows(W.rows()) = W;
  return out;
}

Matrix pad_cols(const Matrix& H, int padded) {
  Matrix out = Matrix::Zero(H.rows(), padded);
  out.leftCols(H.cols()) = H;
  return out;
}

// Sums the num_gauss blocks of a padded dimension into one block of size m.
Matrix fold_rows(const Matrix& Wp, int num_gauss, int m) {
  Matrix out = Matrix::Zero(m, Wp.cols());
  for (int i = 0; i < num_gauss; ++i) out += Wp.middleRows(i * m, m);
  return out;
}

Matrix fold_cols(const Matrix& Hp, int num_gauss, int m) {
  Matrix out = Matrix::Zero(Hp.rows(), m);
  for (int i = 0; i < num_gauss; ++i) out += Hp.middleCols(i * m, m);
  return out;
}

struct PairGeometry {
  Matrix dots;     // B x V
  Vector w_norm;   // V, squared norms
  Vector h_norm;   // B, squared norms
  Matrix sq_dist;  // B x V, clamped at zero
};

PairGeometry pair_geometry(const Matrix& W, const Matrix& H) {
  PairGeometry g;
  g.dots.noalias() = H * W;
  g.w_norm = W.colwise().squaredNorm().transpose();
  g.h_norm = H.rowwise().squaredNorm();
  g.sq_dist = (((-2.0 * g.dots).colwise() + g.h_norm).rowwise() + g.w_norm.transpose())
                  .cwiseMax(0.0);
  return g;
}

void check_batch_shapes(const KernelSpec& spec, const Matrix& W, const Matrix& H,
                        const Vector& word_log_vars) {
  if (W.rows() != H.cols() || W.rows() < 1) {
    std::ostringstream msg;
    msg << "W is " << W.rows() << "x" << W.cols() << " but H is " << H.rows() << "x" << H.cols();
    throw Error(Errc::DimensionMismatch, msg.str());
  }
  if (is_gaussian_kernel(spec.kind) && word_log_vars.size() != 0 &&
      word_log_vars.size() != W.cols()) {
    throw Error(Errc::DimensionMismatch, "word_log_vars must have one entry per word");
  }
}

Vector word_variances(const Vector& word_log_vars, Eigen::Index V) {
  if (word_log_vars.size() == 0) return Vector::Ones(V);
  return word_log_vars.array().exp().matrix();
}

void check_finite(const Matrix& logits, KernelKind kind) {
  if (logits.allFinite()) return;
  for (Eigen::Index v = 0; v < logits.cols(); ++v) {
    for (Eigen::Index b = 0; b < logits.rows(); ++b) {
      if (!std::isfinite(logits(b, v))) {
        std::ostringstream msg;
        msg << to_string(kind) << " logit for context " << b << ", word " << v << " is "
            << logits(b, v);
        throw Error(Errc::NonFiniteScore, msg.str());
      }
    }
  }
}

// Pulls T = dL/dx (B x V) through x = ||w||^2 + ||h||^2 - 2 h.w.
void radial_backward(const Matrix& W, const Matrix& H, const Matrix& T, Matrix& d_W,
                     Matrix& d_H) {
  const Vector row_sum = T.rowwise().sum();
  const Eigen::RowVectorXd col_sum = T.colwise().sum();
  d_H = 2.0 * (H.array().colwise() * row_sum.array()).matrix();
  d_H.noalias() -= 2.0 * T * W.transpose();
  d_W = 2.0 * (W.array().rowwise() * col_sum.array()).matrix();
  d_W.noalias() -= 2.0 * H.transpose() * T;
}

// Per-pair mog terms l_ij = log N(mu_i(w) - mu_j(h); 0, s I) over the m-dim blocks.
std::vector<double> mog_pair_logs(const KernelSpec& spec, const VectorRef& w, const VectorRef& h,
                                  double s, std::vector<double>* sq_dists) {
  const int G = spec.num_gauss;
  const int m = mog_chunk_dim(static_cast<int>(w.size()), G);
  std::vector<double> logs;
  logs.reserve(static_cast<std::size_t>(G) * G);
  for (int i = 0; i < G; ++i) {
    for (int j = 0; j < G; ++j) {
      double x = 0.0;
      for (int t = 0; t < m; ++t) {
        const double diff = chunk_at(w, i, t, m) - chunk_at(h, j, t, m);
        x += diff * diff;
      }
      if (sq_dists) sq_dists->push_back(x);
      logs.push_back(-0.5 * m * (kLog2Pi + std::log(s)) - x / (2.0 * s));
    }
  }
  return logs;
}

double log_sum_exp(const std::vector<double>& values) {
  const double top = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - top);
  return top + std::log(sum);
}

}  // namespace

std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::lin: return "lin";
    case KernelKind::log: return "log";
    case KernelKind::pow: return "pow";
    case KernelKind::pol: return "pol";
    case KernelKind::rbf: return "rbf";
    case KernelKind::ssg: return "ssg";
    case KernelKind::mog: return "mog";
    case KernelKind::hpb: return "hpb";
    case KernelKind::wav: return "wav";
  }
  return "?";
}

KernelKind parse_kernel_kind(std::string_view name) {
  for (auto kind : kAllKernels) {
    if (to_string(kind) == name) return kind;
  }
  throw Error(Errc::InvalidSpec, "unknown kernel '" + std::string(name) + "'");
}

bool is_distance_kernel(KernelKind kind) {
  return kind == KernelKind::log || kind == KernelKind::pow || kind == KernelKind::rbf ||
         kind == KernelKind::wav || kind == KernelKind::hpb;
}

bool is_gaussian_kernel(KernelKind kind) {
  return kind == KernelKind::ssg || kind == KernelKind::mog;
}

KernelSpec KernelSpec::with_defaults(KernelKind kind, int d) {
  KernelSpec spec;
  spec.kind = kind;
  spec.alpha = 1.0 / d;
  spec.gamma = 1.0 / d;
  return spec;
}

void KernelSpec::validate() const {
  auto fail = [this](const std::string& what) {
    throw Error(Errc::InvalidSpec, std::string(to_string(kind)) + ": " + what);
  };
  switch (kind) {
    case KernelKind::log:
    case KernelKind::pow:
      if (!(p > 0.0) || !std::isfinite(p)) fail("p must be positive");
      break;
    case KernelKind::pol:
      if (!(p > 0.0) || !is_integer(p)) fail("p must be a positive integer");
      if (!std::isfinite(alpha) || !std::isfinite(c)) fail("alpha and c must be finite");
      break;
    case KernelKind::rbf:
      if (!(gamma > 0.0) || !std::isfinite(gamma)) fail("gamma must be positive");
      break;
    case KernelKind::wav:
      if (!(a > 0.0) || !std::isfinite(a)) fail("a must be positive");
      if (!(b > 0.0) || !std::isfinite(b)) fail("b must be positive");
      break;
    case KernelKind::mog:
      if (num_gauss < 1) fail("num_gauss must be at least 1");
      break;
    default:
      break;
  }
}

RadialPoint radial_profile(const KernelSpec& spec, double x) {
  switch (spec.kind) {
    case KernelKind::pow:
      return {-half_power(x, spec.p), -half_power_slope(x, spec.p)};
    case KernelKind::log: {
      const double xp = half_power(x, spec.p);
      return {-std::log1p(xp), -half_power_slope(x, spec.p) / (1.0 + xp)};
    }
    case KernelKind::rbf: {
      const double v = std::exp(-spec.gamma * x);
      return {v, -spec.gamma * v};
    }
    case KernelKind::wav: {
      const double decay = std::exp(-x / spec.b);
      const double cosine = std::cos(x / spec.a);
      return {cosine * decay, -std::sin(x / spec.a) / spec.a * decay - cosine * decay / spec.b};
    }
    default:
      throw Error(Errc::WrongKernelKind,
                  std::string(to_string(spec.kind)) + " has no single-argument radial profile");
  }
}

Score score(const KernelSpec& spec, const GaussianParams& wg, const GaussianParams& hg) {
  spec.validate();
  const VectorRef w = wg.mean;
  const VectorRef h = hg.mean;
  check_dims(w, h);
  const auto d = static_cast<double>(w.size());

  switch (spec.kind) {
    case KernelKind::lin:
      return checked(w.dot(h), spec.kind);
    case KernelKind::pol:
      return checked(std::pow(spec.alpha * w.dot(h) + spec.c, spec.p), spec.kind);
    case KernelKind::log:
    case KernelKind::pow:
    case KernelKind::rbf:
    case KernelKind::wav:
      return checked(radial_profile(spec, (w - h).squaredNorm()).value, spec.kind);
    case KernelKind::hpb: {
      const double aw = ball_factor(w.squaredNorm(), "word");
      const double ah = ball_factor(h.squaredNorm(), "context");
      return checked(hpb_value(2.0 * (w - h).squaredNorm() / (aw * ah)), spec.kind);
    }
    case KernelKind::ssg: {
      const double s = std::exp(wg.log_var) + std::exp(hg.log_var);
      const double x = (w - h).squaredNorm();
      return checked(-0.5 * d * (kLog2Pi + std::log(s)) - x / (2.0 * s), spec.kind);
    }
    case KernelKind::mog: {
      const double s = std::exp(wg.log_var) + std::exp(hg.log_var);
      const auto logs = mog_pair_logs(spec, w, h, s, nullptr);
      if (spec.mog_log_of_sum) {
        const double G = spec.num_gauss;
        return checked(log_sum_exp(logs) - std::log(G * G), spec.kind);
      }
      double total = 0.0;
      for (double l : logs) total += l;
      return checked(total, spec.kind);
    }
  }
  throw Error(Errc::InvalidSpec, "unhandled kernel");
}

Score score(const KernelSpec& spec, const VectorRef& w, const VectorRef& h) {
  return score(spec, GaussianParams{w, 0.0}, GaussianParams{h, 0.0});
}

Score score_via_trick(const KernelSpec& spec, double w_norm_sq, double h_norm_sq, double dot) {
  if (!is_distance_kernel(spec.kind)) {
    throw Error(Errc::WrongKernelKind,
                std::string(to_string(spec.kind)) + " is not a distance-based kernel");
  }
  spec.validate();
  const double x = std::max(0.0, w_norm_sq + h_norm_sq - 2.0 * dot);
  if (spec.kind == KernelKind::hpb) {
    const double aw = ball_factor(w_norm_sq, "word");
    const double ah = ball_factor(h_norm_sq, "context");
    return checked(hpb_value(2.0 * x / (aw * ah)), spec.kind);
  }
  return checked(radial_profile(spec, x).value, spec.kind);
}

KernelGrad grad(const KernelSpec& spec, const GaussianParams& wg, const GaussianParams& hg) {
  spec.validate();
  const VectorRef w = wg.mean;
  const VectorRef h = hg.mean;
  check_dims(w, h);
  const Eigen::Index n = w.size();

  KernelGrad g;
  g.d_w = Vector::Zero(n);
  g.d_h = Vector::Zero(n);

  switch (spec.kind) {
    case KernelKind::lin:
      g.d_w = h;
      g.d_h = w;
      break;
    case KernelKind::pol: {
      const double dot = w.dot(h);
      const double base = spec.alpha * dot + spec.c;
      const double outer = spec.p * std::pow(base, spec.p - 1.0);
      g.d_w = outer * spec.alpha * h;
      g.d_h = outer * spec.alpha * w;
      g.d_hyper.alpha = outer * dot;
      g.d_hyper.c = outer;
      break;
    }
    case KernelKind::log:
    case KernelKind::pow:
    case KernelKind::rbf:
    case KernelKind::wav: {
      const Vector diff = w - h;
      const double x = diff.squaredNorm();
      g.d_hyper = radial_hyper_grad(spec, x);
      if (radial_singular(spec, x)) {
        g.singular = true;
        break;
      }
      const double slope = radial_profile(spec, x).slope;
      g.d_w = 2.0 * slope * diff;
      g.d_h = -g.d_w;
      break;
    }
    case KernelKind::hpb: {
      const Vector diff = w - h;
      const double x = diff.squaredNorm();
      const double aw = ball_factor(w.squaredNorm(), "word");
      const double ah = ball_factor(h.squaredNorm(), "context");
      if (radial_singular(spec, x)) {
        g.singular = true;
        break;
      }
      const double z = 2.0 * x / (aw * ah);
      const double dS_dz = -1.0 / std::sqrt(z * (z + 2.0));
      g.d_w = dS_dz * (4.0 / (aw * ah) * diff + 2.0 * z / aw * w);
      g.d_h = dS_dz * (-4.0 / (aw * ah) * diff + 2.0 * z / ah * h);
      break;
    }
    case KernelKind::ssg: {
      const double vw = std::exp(wg.log_var);
      const double vh = std::exp(hg.log_var);
      const double s = vw + vh;
      const Vector diff = w - h;
      const double x = diff.squaredNorm();
      g.d_w = -diff / s;
      g.d_h = diff / s;
      const double dS_ds = -0.5 * static_cast<double>(n) / s + x / (2.0 * s * s);
      g.d_w_log_var = dS_ds * vw;
      g.d_h_log_var = dS_ds * vh;
      break;
    }
    case KernelKind::mog: {
      const int G = spec.num_gauss;
      const int m = mog_chunk_dim(static_cast<int>(n), G);
      const double vw = std::exp(wg.log_var);
      const double vh = std::exp(hg.log_var);
      const double s = vw + vh;
      std::vector<double> sq;
      const auto logs = mog_pair_logs(spec, w, h, s, &sq);
      // Weight of each (i, j) term: 1 for the sum of logs, the posterior over
      // pairs for the log of the sum.
      std::vector<double> weight(logs.size(), 1.0);
      if (spec.mog_log_of_sum) {
        const double lse = log_sum_exp(logs);
        for (std::size_t q = 0; q < logs.size(); ++q) weight[q] = std::exp(logs[q] - lse);
      }
      double dS_ds = 0.0;
      for (int i = 0; i < G; ++i) {
        for (int j = 0; j < G; ++j) {
          const std::size_t q = static_cast<std::size_t>(i) * G + j;
          dS_ds += weight[q] * (-0.5 * m / s + sq[q] / (2.0 * s * s));
          for (int t = 0; t < m; ++t) {
            const double diff = chunk_at(w, i, t, m) - chunk_at(h, j, t, m);
            const Eigen::Index kw = static_cast<Eigen::Index>(i) * m + t;
            const Eigen::Index kh = static_cast<Eigen::Index>(j) * m + t;
            if (kw < n) g.d_w[kw] -= weight[q] * diff / s;
            if (kh < n) g.d_h[kh] += weight[q] * diff / s;
          }
        }
      }
      g.d_w_log_var = dS_ds * vw;
      g.d_h_log_var = dS_ds * vh;
      break;
    }
  }
  return g;
}

KernelGrad grad(const KernelSpec& spec, const VectorRef& w, const VectorRef& h) {
  return grad(spec, GaussianParams{w, 0.0}, GaussianParams{h, 0.0});
}

Matrix batch_logits(const KernelSpec& spec, const Matrix& W, const Matrix& H,
                    const Vector& word_log_vars, double context_log_var) {
  spec.validate();
  check_batch_shapes(spec, W, H, word_log_vars);
  const auto d = static_cast<double>(W.rows());
  Matrix out;

  switch (spec.kind) {
    case KernelKind::lin:
      out.noalias() = H * W;
      break;
    case KernelKind::pol:
      out.noalias() = H * W;
      out = (spec.alpha * out.array() + spec.c).unaryExpr([&](double base) {
        return std::pow(base, spec.p);
      });
      break;
    case KernelKind::log:
    case KernelKind::pow:
    case KernelKind::rbf:
    case KernelKind::wav: {
      out = pair_geometry(W, H).sq_dist;
      out = out.unaryExpr([&](double x) { return radial_profile(spec, x).value; });
      break;
    }
    case KernelKind::hpb: {
      PairGeometry g = pair_geometry(W, H);
      Vector aw(g.w_norm.size());
      Vector ah(g.h_norm.size());
      for (Eigen::Index v = 0; v < aw.size(); ++v) aw[v] = ball_factor(g.w_norm[v], "word");
      for (Eigen::Index b = 0; b < ah.size(); ++b) ah[b] = ball_factor(g.h_norm[b], "context");
      out.resize(g.sq_dist.rows(), g.sq_dist.cols());
      for (Eigen::Index v = 0; v < out.cols(); ++v) {
        for (Eigen::Index b = 0; b < out.rows(); ++b) {
          out(b, v) = hpb_value(2.0 * g.sq_dist(b, v) / (aw[v] * ah[b]));
        }
      }
      break;
    }
    case KernelKind::ssg: {
      PairGeometry g = pair_geometry(W, H);
      const Vector s = (word_variances(word_log_vars, W.cols()).array() +
                        std::exp(context_log_var)).matrix();
      out.resize(g.sq_dist.rows(), g.sq_dist.cols());
      for (Eigen::Index v = 0; v < out.cols(); ++v) {
        const double offset = -0.5 * d * (kLog2Pi + std::log(s[v]));
        out.col(v) = (offset - g.sq_dist.col(v).array() / (2.0 * s[v])).matrix();
      }
      break;
    }
    case KernelKind::mog: {
      const int G = spec.num_gauss;
      const int m = mog_chunk_dim(static_cast<int>(W.rows()), G);
      const Matrix Wp = pad_rows(W, G * m);
      const Matrix Hp = pad_cols(H, G * m);
      const Vector s = (word_variances(word_log_vars, W.cols()).array() +
                        std::exp(context_log_var)).matrix();
      const Eigen::RowVectorXd log_norm =
          (-0.5 * m * (kLog2Pi + s.array().log())).matrix().transpose();
      const Eigen::RowVectorXd inv_2s = (0.5 / s.array()).matrix().transpose();
      if (!spec.mog_log_of_sum) {
        // Sum over pairs of squared block distances collapses to folded norms:
        // G ||w||^2 + G ||h||^2 - 2 fold(w).fold(h).
        const Matrix Fw = fold_rows(Wp, G, m);
        const Matrix Fh = fold_cols(Hp, G, m);
        const Vector wn = W.colwise().squaredNorm().transpose();
        const Vector hn = H.rowwise().squaredNorm();
        Matrix sum_sq = -2.0 * Fh * Fw;
        sum_sq = ((sum_sq.colwise() + G * hn).rowwise() + G * wn.transpose()).cwiseMax(0.0);
        out = ((-sum_sq.array()).rowwise() * inv_2s.array()).rowwise() +
              static_cast<double>(G) * G * log_norm.array();
      } else {
        std::vector<Matrix> terms;
        for (int i = 0; i < G; ++i) {
          const Matrix Wc = Wp.middleRows(i * m, m);
          const Vector wn = Wc.colwise().squaredNorm().transpose();
          for (int j = 0; j < G; ++j) {
            const Matrix Hc = Hp.middleCols(j * m, m);
            Matrix x = -2.0 * Hc * Wc;
            x = ((x.colwise() + Hc.rowwise().squaredNorm()).rowwise() + wn.transpose())
                    .cwiseMax(0.0);
            terms.push_back(((-x.array()).rowwise() * inv_2s.array()).rowwise() +
                            log_norm.array());
          }
        }
        Matrix top = terms.front();
        for (const auto& t : terms) top = top.cwiseMax(t);
        Matrix acc = Matrix::Zero(top.rows(), top.cols());
        for (const auto& t : terms) acc.array() += (t - top).array().exp();
        out = (top.array() + acc.array().log() - std::log(static_cast<double>(G) * G)).matrix();
      }
      break;
    }
  }
  check_finite(out, spec.kind);
  return out;
}

BatchGrad batch_backward(const KernelSpec& spec, const Matrix& W, const Matrix& H,
                         const Vector& word_log_vars, double context_log_var,
                         const Matrix& d_logits) {
  spec.validate();
  check_batch_shapes(spec, W, H, word_log_vars);
  if (d_logits.rows() != H.rows() || d_logits.cols() != W.cols()) {
    throw Error(Errc::DimensionMismatch, "d_logits must be B x V");
  }
  const auto d = static_cast<double>(W.rows());
  BatchGrad out;
  out.d_word_log_vars = Vector::Zero(W.cols());

  switch (spec.kind) {
    case KernelKind::lin:
      out.d_H.noalias() = d_logits * W.transpose();
      out.d_W.noalias() = H.transpose() * d_logits;
      break;
    case KernelKind::pol: {
      Matrix T = H * W;
      T = (spec.alpha * T.array() + spec.c).unaryExpr([&](double base) {
        return spec.p * spec.alpha * std::pow(base, spec.p - 1.0);
      });
      T.array() *= d_logits.array();
      out.d_H.noalias() = T * W.transpose();
      out.d_W.noalias() = H.transpose() * T;
      break;
    }
    case KernelKind::log:
    case KernelKind::pow:
    case KernelKind::rbf:
    case KernelKind::wav: {
      Matrix T = pair_geometry(W, H).sq_dist.unaryExpr(
          [&](double x) { return radial_singular(spec, x) ? 0.0 : radial_profile(spec, x).slope; });
      T.array() *= d_logits.array();
      radial_backward(W, H, T, out.d_W, out.d_H);
      break;
    }
    case KernelKind::hpb: {
      PairGeometry g = pair_geometry(W, H);
      Vector aw(g.w_norm.size());
      Vector ah(g.h_norm.size());
      for (Eigen::Index v = 0; v < aw.size(); ++v) aw[v] = ball_factor(g.w_norm[v], "word");
      for (Eigen::Index b = 0; b < ah.size(); ++b) ah[b] = ball_factor(g.h_norm[b], "context");
      // P = dL/dz, A = P / (aw ah), PZ = P * z.
      Matrix A(g.sq_dist.rows(), g.sq_dist.cols());
      Matrix PZ(g.sq_dist.rows(), g.sq_dist.cols());
      for (Eigen::Index v = 0; v < A.cols(); ++v) {
        for (Eigen::Index b = 0; b < A.rows(); ++b) {
          const double x = g.sq_dist(b, v);
          if (x <= 0.0) {
            A(b, v) = 0.0;
            PZ(b, v) = 0.0;
            continue;
          }
          const double z = 2.0 * x / (aw[v] * ah[b]);
          const double P = -d_logits(b, v) / std::sqrt(z * (z + 2.0));
          A(b, v) = P / (aw[v] * ah[b]);
          PZ(b, v) = P * z;
        }
      }
      radial_backward(W, H, A, out.d_W, out.d_H);
      out.d_W *= 2.0;
      out.d_H *= 2.0;
      const Vector h_scale = (2.0 * PZ.rowwise().sum().array() / ah.array()).matrix();
      const Eigen::RowVectorXd w_scale =
          (2.0 * PZ.colwise().sum().transpose().array() / aw.array()).matrix().transpose();
      out.d_H += (H.array().colwise() * h_scale.array()).matrix();
      out.d_W += (W.array().rowwise() * w_scale.array()).matrix();
      break;
    }
    case KernelKind::ssg: {
      PairGeometry g = pair_geometry(W, H);
      const Vector vw = word_variances(word_log_vars, W.cols());
      const double vh = std::exp(context_log_var);
      const Vector s = (vw.array() + vh).matrix();
      Matrix T(g.sq_dist.rows(), g.sq_dist.cols());
      double d_ctx = 0.0;
      for (Eigen::Index v = 0; v < T.cols(); ++v) {
        T.col(v) = d_logits.col(v) * (-0.5 / s[v]);
        double d_s = 0.0;
        for (Eigen::Index b = 0; b < T.rows(); ++b) {
          d_s += d_logits(b, v) * (-0.5 * d / s[v] + g.sq_dist(b, v) / (2.0 * s[v] * s[v]));
        }
        out.d_word_log_vars[v] = d_s * vw[v];
        d_ctx += d_s * vh;
      }
      out.d_context_log_var = d_ctx;
      radial_backward(W, H, T, out.d_W, out.d_H);
      break;
    }
    case KernelKind::mog: {
      const int G = spec.num_gauss;
      const int m = mog_chunk_dim(static_cast<int>(W.rows()), G);
      const Matrix Wp = pad_rows(W, G * m);
      const Matrix Hp = pad_cols(H, G * m);
      const Vector vw = word_variances(word_log_vars, W.cols());
      const double vh = std::exp(context_log_var);
      const Vector s = (vw.array() + vh).matrix();
      const Eigen::RowVectorXd neg_inv_2s = (-0.5 / s.array()).matrix().transpose();
      Matrix dWp = Matrix::Zero(Wp.rows(), Wp.cols());
      Matrix dHp = Matrix::Zero(Hp.rows(), Hp.cols());
      Matrix d_s;  // B x V, dS/ds weighted by d_logits

      if (!spec.mog_log_of_sum) {
        const Matrix Fw = fold_rows(Wp, G, m);
        const Matrix Fh = fold_cols(Hp, G, m);
        const Vector wn = W.colwise().squaredNorm().transpose();
        const Vector hn = H.rowwise().squaredNorm();
        Matrix sum_sq = -2.0 * Fh * Fw;
        sum_sq = (sum_sq.colwise() + G * hn).rowwise() + G * wn.transpose();
        Matrix T = (d_logits.array().rowwise() * neg_inv_2s.array()).matrix();
        for (Eigen::Index v = 0; v < T.cols(); ++v) {
          for (Eigen::Index b = 0; b < T.rows(); ++b) {
            if (sum_sq(b, v) < 0.0) T(b, v) = 0.0;
          }
        }
        sum_sq = sum_sq.cwiseMax(0.0);
        // x = G||w||^2 + G||h||^2 - 2 fold(h).fold(w)
        const Vector row_sum = T.rowwise().sum();
        const Eigen::RowVectorXd col_sum = T.colwise().sum();
        const Matrix TFw = T * Fw.transpose();    // B x m
        const Matrix FhT = Fh.transpose() * T;    // m x V
        dHp = 2.0 * G * (Hp.array().colwise() * row_sum.array()).matrix();
        dWp = 2.0 * G * (Wp.array().rowwise() * col_sum.array()).matrix();
        for (int i = 0; i < G; ++i) {
          dHp.middleCols(i * m, m) -= 2.0 * TFw;
          dWp.middleRows(i * m, m) -= 2.0 * FhT;
        }
        const double pairs = static_cast<double>(G) * G;
        d_s = sum_sq;
        for (Eigen::Index v = 0; v < d_s.cols(); ++v) {
          d_s.col(v) = (-0.5 * m * pairs / s[v] + sum_sq.col(v).array() / (2.0 * s[v] * s[v]))
                           .matrix();
        }
        d_s.array() *= d_logits.array();
      } else {
        const Eigen::RowVectorXd log_norm =
            (-0.5 * m * (kLog2Pi + s.array().log())).matrix().transpose();
        std::vector<Matrix> x_terms;
        std::vector<Matrix> l_terms;
        for (int i = 0; i < G; ++i) {
          const Matrix Wc = Wp.middleRows(i * m, m);
          const Vector wn = Wc.colwise().squaredNorm().transpose();
          for (int j = 0; j < G; ++j) {
            const Matrix Hc = Hp.middleCols(j * m, m);
            Matrix x = -2.0 * Hc * Wc;
            x = ((x.colwise() + Hc.rowwise().squaredNorm()).rowwise() + wn.transpose())
                    .cwiseMax(0.0);
            l_terms.push_back(((-x.array()).rowwise() * (-neg_inv_2s).array()).rowwise() +
                              log_norm.array());
            x_terms.push_back(std::move(x));
          }
        }
        Matrix top = l_terms.front();
        for (const auto& t : l_terms) top = top.cwiseMax(t);
        Matrix acc = Matrix::Zero(top.rows(), top.cols());
        for (const auto& t : l_terms) acc.array() += (t - top).array().exp();
        const Matrix lse = (top.array() + acc.array().log()).matrix();
        d_s = Matrix::Zero(top.rows(), top.cols());
        for (int i = 0; i < G; ++i) {
          const Matrix Wc = Wp.middleRows(i * m, m);
          for (int j = 0; j < G; ++j) {
            const std::size_t q = static_cast<std::size_t>(i) * G + j;
            const Matrix Hc = Hp.middleCols(j * m, m);
            const Matrix R = (l_terms[q] - lse).array().exp().matrix();
            const Matrix T =
                (R.array() * d_logits.array()).rowwise() * neg_inv_2s.array();
            Matrix dWc;
            Matrix dHc;
            radial_backward(Wc, Hc, T, dWc, dHc);
            dWp.middleRows(i * m, m) += dWc;
            dHp.middleCols(j * m, m) += dHc;
            for (Eigen::Index v = 0; v < d_s.cols(); ++v) {
              d_s.col(v).array() += R.col(v).array() * d_logits.col(v).array() *
                                    (-0.5 * m / s[v] + x_terms[q].col(v).array() /
                                                           (2.0 * s[v] * s[v]));
            }
          }
        }
      }
      out.d_W = dWp.topRows(W.rows());
      out.d_H = dHp.leftCols(H.cols());
      const Vector d_s_word = d_s.colwise().sum().transpose();
      out.d_word_log_vars = (d_s_word.array() * vw.array()).matrix();
      out.d_context_log_var = d_s.sum() * vh;
      break;
    }
  }
  return out;
}

}  // namespace ksoftmax
