#include "ksoftmax/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "ksoftmax/error.hpp"
#include "ksoftmax/output_layer.hpp"
#include "ksoftmax/rng.hpp"

namespace ksoftmax {
namespace {

void record(AuditReport& report, const Tolerance& tol, double analytic, double numeric,
            const std::string& entry) {
  ++report.checks;
  const double err = tol.error(analytic, numeric);
  if (!tol.accepts(analytic, numeric)) ++report.failures;
  if (err > report.worst_error || report.worst_entry.empty()) {
    report.worst_error = err;
    report.worst_entry = entry;
  }
}

double central(const std::function<double(double)>& f, double x0, double step) {
  return (f(x0 + step) - f(x0 - step)) / (2.0 * step);
}

KernelSpec random_spec(KernelKind kind, int dim, Rng& rng) {
  KernelSpec s = KernelSpec::with_defaults(kind, dim);
  switch (kind) {
    case KernelKind::log:
    case KernelKind::pow:
      s.p = rng.uniform(0.5, 3.0);
      break;
    case KernelKind::pol:
      s.p = static_cast<double>(1 + rng.below(4));
      s.alpha = rng.uniform(0.05, 1.0);
      s.c = rng.uniform(0.0, 2.0);
      break;
    case KernelKind::rbf:
      s.gamma = rng.uniform(0.05, 1.0);
      break;
    case KernelKind::wav:
      s.a = rng.uniform(0.5, 3.0);
      s.b = rng.uniform(0.5, 3.0);
      break;
    case KernelKind::mog:
      s.num_gauss = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(dim, 3))));
      s.mog_log_of_sum = rng.below(2) == 1;
      break;
    default:
      break;
  }
  s.learn_variances = true;
  return s;
}

Vector random_vector(KernelKind kind, int dim, Rng& rng) {
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.uniform(-1.0, 1.0);
  if (kind == KernelKind::hpb) {
    const double n = v.norm();
    if (n > 0.0) v *= rng.uniform(0.0, 0.9) / n;
  } else {
    v *= 2.0 / std::sqrt(static_cast<double>(dim));
  }
  return v;
}

std::string indexed(const char* name, Eigen::Index i) {
  return std::string(name) + "[" + std::to_string(i) + "]";
}

}  // namespace

double Tolerance::error(double analytic, double numeric) const {
  const double diff = std::abs(analytic - numeric);
  return std::abs(analytic) < cutoff ? diff : diff / std::abs(analytic);
}

bool Tolerance::accepts(double analytic, double numeric) const {
  const double err = error(analytic, numeric);
  return std::abs(analytic) < cutoff ? err < abs : err < rel;
}

AuditReport audit_kernel(KernelKind kind, int dim, int trials, std::uint64_t seed,
                         const Tolerance& tol) {
  AuditReport report;
  report.label = std::string(to_string(kind)) + " d=" + std::to_string(dim);
  Rng rng{seed, static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(dim)};
  const bool gaussian = is_gaussian_kernel(kind);

  for (int t = 0; t < trials; ++t) {
    ++report.trials;
    const KernelSpec spec = random_spec(kind, dim, rng);
    GaussianParams w{random_vector(kind, dim, rng), 0.0};
    GaussianParams h{random_vector(kind, dim, rng), 0.0};
    if (gaussian) {
      w.log_var = rng.uniform(-1.0, 1.0);
      h.log_var = rng.uniform(-1.0, 1.0);
    }
    const KernelGrad g = grad(spec, w, h);
    if (g.singular) {
      ++report.singular;
      continue;
    }

    for (Eigen::Index i = 0; i < dim; ++i) {
      GaussianParams wp = w;
      const double nw = central(
          [&](double x) {
            wp.mean[i] = x;
            return score(spec, wp, h).value;
          },
          w.mean[i], tol.step);
      record(report, tol, g.d_w[i], nw, indexed("d_w", i));

      GaussianParams hp = h;
      const double nh = central(
          [&](double x) {
            hp.mean[i] = x;
            return score(spec, w, hp).value;
          },
          h.mean[i], tol.step);
      record(report, tol, g.d_h[i], nh, indexed("d_h", i));
    }

    if (gaussian) {
      GaussianParams wp = w;
      record(report, tol, g.d_w_log_var,
             central(
                 [&](double x) {
                   wp.log_var = x;
                   return score(spec, wp, h).value;
                 },
                 w.log_var, tol.step),
             "d_w_log_var");
      GaussianParams hp = h;
      record(report, tol, g.d_h_log_var,
             central(
                 [&](double x) {
                   hp.log_var = x;
                   return score(spec, w, hp).value;
                 },
                 h.log_var, tol.step),
             "d_h_log_var");
    }

    auto hyper = [&](double KernelSpec::*field, double analytic, const char* name) {
      KernelSpec sp = spec;
      const double n = central(
          [&](double x) {
            sp.*field = x;
            return score(sp, w, h).value;
          },
          spec.*field, tol.step);
      record(report, tol, analytic, n, name);
    };
    switch (kind) {
      case KernelKind::log:
      case KernelKind::pow:
        hyper(&KernelSpec::p, g.d_hyper.p, "d_p");
        break;
      case KernelKind::pol:
        hyper(&KernelSpec::alpha, g.d_hyper.alpha, "d_alpha");
        hyper(&KernelSpec::c, g.d_hyper.c, "d_c");
        break;
      case KernelKind::rbf:
        hyper(&KernelSpec::gamma, g.d_hyper.gamma, "d_gamma");
        break;
      case KernelKind::wav:
        hyper(&KernelSpec::a, g.d_hyper.a, "d_a");
        hyper(&KernelSpec::b, g.d_hyper.b, "d_b");
        break;
      default:
        break;
    }
  }
  return report;
}

std::vector<AuditReport> audit_pipeline(int trials, std::uint64_t seed, int B, int V, int d,
                                        const Tolerance& tol) {
  std::vector<std::vector<KernelKind>> mixtures;
  const int n = static_cast<int>(kAllKernels.size());
  for (int K = 1; K <= 3; ++K) {
    for (int i = 0; i < n; ++i) {
      std::vector<KernelKind> kinds;
      for (int k = 0; k < K; ++k) kinds.push_back(kAllKernels[static_cast<std::size_t>((i + k) % n)]);
      mixtures.push_back(kinds);
    }
  }

  std::vector<AuditReport> reports;
  Rng rng{seed, 0x91e3u};
  for (const auto& kinds : mixtures) {
    AuditReport report;
    report.label = "K=" + std::to_string(kinds.size()) + " [";
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      report.label += (k ? "," : "") + std::string(to_string(kinds[k]));
    }
    report.label += "]";

    for (int t = 0; t < trials; ++t) {
      ++report.trials;
      MixtureConfig config;
      config.d = d;
      config.V = V;
      config.rho = rng.uniform(0.0, 1.0);
      config.variance_mode = rng.below(2) ? VarianceMode::per_component : VarianceMode::per_datum;
      for (KernelKind kind : kinds) config.components.push_back(random_spec(kind, d, rng));
      config.validate();

      OutputParams params = init_output_params(config, rng);
      if (config.has_hpb()) params.W *= 0.5;
      for (Eigen::Index v = 0; v < params.word_log_vars.size(); ++v) {
        params.word_log_vars[v] = rng.uniform(-0.5, 0.5);
      }
      for (Eigen::Index k = 0; k < params.component_log_vars.size(); ++k) {
        params.component_log_vars[k] = rng.uniform(-0.5, 0.5);
      }
      Matrix H(B, d);
      for (Eigen::Index i = 0; i < H.size(); ++i) H.data()[i] = rng.uniform(-1.0, 1.0);
      std::vector<int> targets(static_cast<std::size_t>(B));
      for (auto& y : targets) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(V)));

      const LossValue lv = loss(config, params, H, targets);
      const OutputGrads g = backward(config, params, lv.cache, targets);

      auto check = [&](const std::string& name, double* data, const double* analytic,
                       Eigen::Index size) {
        for (Eigen::Index i = 0; i < size; ++i) {
          const double x0 = data[i];
          const double num = central(
              [&](double x) {
                data[i] = x;
                return loss(config, params, H, targets).value;
              },
              x0, tol.step);
          data[i] = x0;
          record(report, tol, analytic[i], num, name + "[" + std::to_string(i) + "]");
        }
      };
      check("W", params.W.data(), g.d_params.W.data(), params.W.size());
      check("word_log_vars", params.word_log_vars.data(), g.d_params.word_log_vars.data(),
            params.word_log_vars.size());
      check("M", params.M.data(), g.d_params.M.data(), params.M.size());
      for (std::size_t k = 0; k < params.C.size(); ++k) {
        check("C" + std::to_string(k + 1), params.C[k].data(), g.d_params.C[k].data(),
              params.C[k].size());
      }
      check("component_log_vars", params.component_log_vars.data(),
            g.d_params.component_log_vars.data(), params.component_log_vars.size());
      check("H", H.data(), g.d_H.data(), H.size());
    }
    reports.push_back(std::move(report));
  }
  return reports;
}

std::string format_report(const AuditReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%-24s trials=%d checks=%ld failures=%ld singular=%d worst=%.3e (%s)",
                r.label.c_str(), r.trials, r.checks, r.failures, r.singular, r.worst_error,
                r.worst_entry.c_str());
  return buf;
}

}  // namespace ksoftmax
