#pragma once

// Central finite-difference audits of the analytic kernel and loss gradients.

#include <cstdint>
#include <string>
#include <vector>

#include "ksoftmax/kernels.hpp"

namespace ksoftmax {

struct Tolerance {
  double step = 1e-5;
  double rel = 1e-4;
  double abs = 1e-7;       // used instead of rel when |analytic| < cutoff
  double cutoff = 1e-6;

  bool accepts(double analytic, double numeric) const;
  double error(double analytic, double numeric) const;  // the quantity compared
};

struct AuditReport {
  std::string label;
  int trials = 0;
  long checks = 0;
  long failures = 0;
  int singular = 0;          // draws that hit a non-differentiable point
  double worst_error = 0.0;  // largest relative (or absolute) error seen
  std::string worst_entry;

  bool passed() const { return failures == 0; }
};

/// Random (w, h, variances, hyperparameters) draws in dimension `dim`; checks
/// d/dw, d/dh, the log-variances (ssg, mog) and the kernel's continuous
/// hyperparameters against central differences of score().
AuditReport audit_kernel(KernelKind kind, int dim, int trials, std::uint64_t seed,
                         const Tolerance& tol = {});

/// Random mixtures (B = 2, V = 5, d = 3 by default): every parameter of the
/// output layer and the contexts, against central differences of loss().
/// K = 1 covers each kernel alone; K = 2 and 3 rotate through all kinds.
std::vector<AuditReport> audit_pipeline(int trials, std::uint64_t seed, int B = 2, int V = 5,
                                        int d = 3, const Tolerance& tol = {});

std::string format_report(const AuditReport& report);

}  // namespace ksoftmax
