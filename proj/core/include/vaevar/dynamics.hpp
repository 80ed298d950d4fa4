#pragma once

#include "vaevar/types.hpp"

#include <string>
#include <variant>
#include <vector>

namespace vaevar {

struct Lorenz63Params {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;

  void validate() const;
};

struct Lorenz96Params {
  /// Uniform forcing `F` over `dim` equations.
  static Lorenz96Params uniform(Eigen::Index dim, double forcing);

  Eigen::Index dim = 0;
  Vector forcing;

  void validate() const;
};

struct IntegratorConfig {
  double step_size = 0.01;
  int n_steps = 10;

  void validate() const;
};

StateVector rhs_lorenz63(const Lorenz63Params& p, const StateVector& x);
StateVector rhs_lorenz96(const Lorenz96Params& p, const StateVector& x);

Matrix rhs_jacobian_lorenz63(const Lorenz63Params& p, const StateVector& x);
Matrix rhs_jacobian_lorenz96(const Lorenz96Params& p, const StateVector& x);

enum class SystemFamily { Lorenz63, Lorenz96 };

/// One of the two supported ODE systems, with closed-form right-hand side and Jacobian.
class DynamicalSystem {
 public:
  using Params = std::variant<Lorenz63Params, Lorenz96Params>;

  explicit DynamicalSystem(Lorenz63Params p);
  explicit DynamicalSystem(Lorenz96Params p);

  SystemFamily family() const noexcept;
  Eigen::Index dim() const noexcept;
  const Params& params() const noexcept { return params_; }

  StateVector rhs(const StateVector& x) const;
  Matrix rhs_jacobian(const StateVector& x) const;

  std::string describe() const;

 private:
  Params params_;
};

namespace detail {
[[noreturn]] void throw_diverged(const char* stage);
}

/// Classical four-stage Runge-Kutta step. Throws IntegrationDiverged on a non-finite stage.
template <typename Rhs>
StateVector rk4_step(const Rhs& rhs, const StateVector& x, double h) {
  const StateVector k1 = rhs(x);
  if (!k1.allFinite()) detail::throw_diverged("k1");
  const StateVector k2 = rhs(x + 0.5 * h * k1);
  if (!k2.allFinite()) detail::throw_diverged("k2");
  const StateVector k3 = rhs(x + 0.5 * h * k2);
  if (!k3.allFinite()) detail::throw_diverged("k3");
  const StateVector k4 = rhs(x + h * k3);
  if (!k4.allFinite()) detail::throw_diverged("k4");
  StateVector next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) detail::throw_diverged("update");
  return next;
}

/// Returns the trajectory `[x0, x1, ..., x_n]`, length `n_steps + 1`.
template <typename Rhs>
std::vector<StateVector> integrate(const Rhs& rhs, const StateVector& x0, const IntegratorConfig& cfg) {
  cfg.validate();
  std::vector<StateVector> traj;
  traj.reserve(static_cast<std::size_t>(cfg.n_steps) + 1);
  traj.push_back(x0);
  for (int k = 0; k < cfg.n_steps; ++k) traj.push_back(rk4_step(rhs, traj.back(), cfg.step_size));
  return traj;
}

/// Final state only.
template <typename Rhs>
StateVector propagate(const Rhs& rhs, const StateVector& x0, double h, int n_steps) {
  StateVector x = x0;
  for (int k = 0; k < n_steps; ++k) x = rk4_step(rhs, x, h);
  return x;
}

inline StateVector rk4_step(const DynamicalSystem& sys, const StateVector& x, double h) {
  return rk4_step([&sys](const StateVector& s) { return sys.rhs(s); }, x, h);
}

inline std::vector<StateVector> integrate(const DynamicalSystem& sys, const StateVector& x0,
                                          const IntegratorConfig& cfg) {
  require_dim(x0.size(), sys.dim(), "integrate");
  return integrate([&sys](const StateVector& s) { return sys.rhs(s); }, x0, cfg);
}

inline StateVector propagate(const DynamicalSystem& sys, const StateVector& x0, double h, int n_steps) {
  require_dim(x0.size(), sys.dim(), "propagate");
  return propagate([&sys](const StateVector& s) { return sys.rhs(s); }, x0, h, n_steps);
}

/// Vector-Jacobian product `v^T (d rk4_step / dx)` at `x`, by a reverse sweep through the
/// four stages. `jac(s)` must return the Jacobian of `rhs` at `s`.
template <typename Rhs, typename Jac>
StateVector adjoint_step(const Rhs& rhs, const Jac& jac, const StateVector& x, double h,
                         const StateVector& grad_out) {
  const StateVector s1 = x;
  const StateVector k1 = rhs(s1);
  const StateVector s2 = x + 0.5 * h * k1;
  const StateVector k2 = rhs(s2);
  const StateVector s3 = x + 0.5 * h * k2;
  const StateVector k3 = rhs(s3);
  const StateVector s4 = x + h * k3;

  const StateVector lam_k4 = (h / 6.0) * grad_out;
  const StateVector g4 = jac(s4).transpose() * lam_k4;
  const StateVector lam_k3 = (h / 3.0) * grad_out + h * g4;
  const StateVector g3 = jac(s3).transpose() * lam_k3;
  const StateVector lam_k2 = (h / 3.0) * grad_out + 0.5 * h * g3;
  const StateVector g2 = jac(s2).transpose() * lam_k2;
  const StateVector lam_k1 = (h / 6.0) * grad_out + 0.5 * h * g2;
  const StateVector g1 = jac(s1).transpose() * lam_k1;
  return grad_out + g1 + g2 + g3 + g4;
}

inline StateVector adjoint_step(const DynamicalSystem& sys, const StateVector& x, double h,
                                const StateVector& grad_out) {
  require_dim(x.size(), sys.dim(), "adjoint_step");
  require_dim(grad_out.size(), sys.dim(), "adjoint_step");
  return adjoint_step([&sys](const StateVector& s) { return sys.rhs(s); },
                      [&sys](const StateVector& s) { return sys.rhs_jacobian(s); }, x, h, grad_out);
}

}  // namespace vaevar
