#include "vaevar/dynamics.hpp"

#include <cmath>
#include <sstream>

namespace vaevar {

namespace detail {
void throw_diverged(const char* stage) {
  throw IntegrationDiverged(std::string("integration diverged: non-finite value at RK4 stage ") + stage);
}
}  // namespace detail

void Lorenz63Params::validate() const {
  if (!std::isfinite(sigma) || !std::isfinite(rho) || !std::isfinite(beta)) {
    throw ConfigError("Lorenz63Params: parameters must be finite");
  }
  if (beta <= 0.0) throw ConfigError("Lorenz63Params: beta must be positive");
}

Lorenz96Params Lorenz96Params::uniform(Eigen::Index dim, double forcing) {
  Lorenz96Params p;
  p.dim = dim;
  p.forcing = Vector::Constant(dim, forcing);
  return p;
}

void Lorenz96Params::validate() const {
  if (dim < 4) throw ConfigError("Lorenz96Params: dim must be at least 4");
  if (forcing.size() != dim) throw ConfigError("Lorenz96Params: forcing length must equal dim");
  if (!forcing.allFinite()) throw ConfigError("Lorenz96Params: forcing must be finite");
}

void IntegratorConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) {
    throw ConfigError("IntegratorConfig: step_size must be positive");
  }
  if (n_steps < 0) throw ConfigError("IntegratorConfig: n_steps must be non-negative");
}

StateVector rhs_lorenz63(const Lorenz63Params& p, const StateVector& x) {
  require_dim(x.size(), 3, "rhs_lorenz63");
  StateVector dx(3);
  dx[0] = p.sigma * (x[1] - x[0]);
  dx[1] = x[0] * (p.rho - x[2]) - x[1];
  dx[2] = x[0] * x[1] - p.beta * x[2];
  return dx;
}

Matrix rhs_jacobian_lorenz63(const Lorenz63Params& p, const StateVector& x) {
  require_dim(x.size(), 3, "rhs_jacobian_lorenz63");
  Matrix j(3, 3);
  j << -p.sigma, p.sigma, 0.0,
       p.rho - x[2], -1.0, -x[0],
       x[1], x[0], -p.beta;
  return j;
}

StateVector rhs_lorenz96(const Lorenz96Params& p, const StateVector& x) {
  const Eigen::Index d = p.dim;
  require_dim(x.size(), d, "rhs_lorenz96");
  StateVector dx(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double xp1 = x[(i + 1) % d];
    const double xm1 = x[(i + d - 1) % d];
    const double xm2 = x[(i + d - 2) % d];
    dx[i] = (xp1 - xm2) * xm1 - x[i] + p.forcing[i];
  }
  return dx;
}

Matrix rhs_jacobian_lorenz96(const Lorenz96Params& p, const StateVector& x) {
  const Eigen::Index d = p.dim;
  require_dim(x.size(), d, "rhs_jacobian_lorenz96");
  Matrix j = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const Eigen::Index ip1 = (i + 1) % d;
    const Eigen::Index im1 = (i + d - 1) % d;
    const Eigen::Index im2 = (i + d - 2) % d;
    j(i, ip1) += x[im1];
    j(i, im2) -= x[im1];
    j(i, im1) += x[ip1] - x[im2];
    j(i, i) -= 1.0;
  }
  return j;
}

DynamicalSystem::DynamicalSystem(Lorenz63Params p) : params_(p) { p.validate(); }

DynamicalSystem::DynamicalSystem(Lorenz96Params p) : params_(std::move(p)) {
  std::get<Lorenz96Params>(params_).validate();
}

SystemFamily DynamicalSystem::family() const noexcept {
  return std::holds_alternative<Lorenz63Params>(params_) ? SystemFamily::Lorenz63 : SystemFamily::Lorenz96;
}

Eigen::Index DynamicalSystem::dim() const noexcept {
  if (const auto* p = std::get_if<Lorenz96Params>(&params_)) return p->dim;
  return 3;
}

StateVector DynamicalSystem::rhs(const StateVector& x) const {
  return std::visit(
      [&x](const auto& p) -> StateVector {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, Lorenz63Params>) {
          return rhs_lorenz63(p, x);
        } else {
          return rhs_lorenz96(p, x);
        }
      },
      params_);
}

Matrix DynamicalSystem::rhs_jacobian(const StateVector& x) const {
  return std::visit(
      [&x](const auto& p) -> Matrix {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, Lorenz63Params>) {
          return rhs_jacobian_lorenz63(p, x);
        } else {
          return rhs_jacobian_lorenz96(p, x);
        }
      },
      params_);
}

std::string DynamicalSystem::describe() const {
  std::ostringstream os;
  os.precision(17);
  if (const auto* p = std::get_if<Lorenz63Params>(&params_)) {
    os << "lorenz63(sigma=" << p->sigma << ",rho=" << p->rho << ",beta=" << p->beta << ")";
  } else {
    const auto& q = std::get<Lorenz96Params>(params_);
    os << "lorenz96(dim=" << q.dim << ",F=[";
    for (Eigen::Index i = 0; i < q.dim; ++i) os << (i ? "," : "") << q.forcing[i];
    os << "])";
  }
  return os.str();
}

}  // namespace vaevar
