#pragma once

#include "vaevar/cost.hpp"
#include "vaevar/solver.hpp"

#include <cstdint>
#include <optional>

namespace vaevar {

struct AssimilationOptions {
  LbfgsConfig lbfgs;
  /// Extra random starts z ~ N(0, I) besides z = 0; the lowest final cost wins.
  int extra_starts = 0;
  std::uint64_t start_seed = 0;
};

struct AssimilationResult {
  StateVector x_a;
  /// Absent for the naive substitute.
  std::optional<Vector> z_star;
  CostEval cost;
  SolverReport report;
};

/// Minimizes `1/2 |z|^2 + L_o(L z + x_b)` from z = 0.
AssimilationResult assimilate_traditional(const CostSpec& spec, const AssimilationOptions& opts = {});

/// Minimizes the latent cost from z = 0 and maps back with `x_a = D(z*) + x_b`.
AssimilationResult assimilate_vae(const CostSpec& spec, const AssimilationOptions& opts = {});

/// Dispatches on the cost spec's control variant.
AssimilationResult assimilate(const CostSpec& spec, const AssimilationOptions& opts = {});

/// Overwrites the observed coordinates of x_b with y. Identity operators only.
AssimilationResult assimilate_naive(const StateVector& x_b, const ObservationOperator& h, const Vector& y);

}  // namespace vaevar
