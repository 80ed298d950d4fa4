#pragma once

#include "vaevar/types.hpp"

#include <functional>
#include <string>

namespace vaevar {

struct LbfgsConfig {
  int memory = 10;
  int max_iters = 200;
  double grad_tol = 1e-6;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_line_search_steps = 25;

  void validate() const;
};

enum class Termination {
  GradientTolerance,
  MaxIterations,
  /// No step satisfying the strong Wolfe conditions was found; the best iterate is returned.
  LineSearchFailed,
  /// The objective stopped changing at machine precision.
  NoProgress,
};

std::string to_string(Termination t);

struct SolverReport {
  int iterations = 0;
  int function_evals = 0;
  double final_value = 0.0;
  double grad_norm = 0.0;
  Termination reason = Termination::MaxIterations;

  bool flagged() const noexcept { return reason == Termination::LineSearchFailed; }
};

struct MinimizeResult {
  Vector z;
  SolverReport report;
};

/// Objective: returns f(z) and writes the gradient into `grad` (resized by the callee).
using Objective = std::function<double(const Vector& z, Vector& grad)>;

/// Limited-memory BFGS (two-loop recursion, gamma = s'y / y'y scaling) with a strong
/// Wolfe line search. Never throws on line-search failure; the report is flagged instead.
MinimizeResult minimize(const Objective& f, const Vector& z0, const LbfgsConfig& cfg = {});

}  // namespace vaevar
