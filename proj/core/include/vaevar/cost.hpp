#pragma once

#include "vaevar/dynamics.hpp"
#include "vaevar/observation.hpp"
#include "vaevar/tinynn.hpp"

#include <memory>
#include <optional>
#include <variant>

namespace vaevar {

struct TermValue {
  double value = 0.0;
  Vector gradient;
};

/// `1/2 (y - H(x))^T R^{-1} (y - H(x))` with `R = r_std^2 I`, gradient with respect to x.
TermValue obs_term_3d(const StateVector& x, const ObservationOperator& h, const Vector& y, double r_std);

/// Sum of the single-time observation term over the window, each evaluated at the
/// forecast `M(0->n)(x)` of the prediction model. Gradient by adjoint sweep.
TermValue obs_term_4d(const StateVector& x, const ObservationOperator& h, const ObservationBatch& batch,
                      const DynamicalSystem& model, double step_size);

/// `1/2 z^T z`.
TermValue bg_term_traditional(const Vector& z);

struct LogDet {
  double value = 0.0;
  double epsilon_used = 0.0;
  int epsilon_doublings = 0;
};

/// `1/2 log det(J^T J + eps I)` by Cholesky of the Gram matrix. If the Gram matrix is
/// numerically not positive definite, eps is doubled until it is.
LogDet half_log_det_gram(const Matrix& jacobian, double epsilon);

struct VaeBackgroundTerm {
  double value = 0.0;
  double reg = 0.0;
  double det = 0.0;
  Vector grad_reg;
  Vector grad_det;
  Vector gradient;
  int epsilon_doublings = 0;
};

/// `1/2 z^T z + 1/2 log det(J^T J + eps I)` with `J = dD/dz`. The det gradient uses
/// central differences over z.
VaeBackgroundTerm bg_term_vae(const Vector& z, const nn::MlpParams& decoder, double epsilon,
                              bool with_det_gradient = true);

struct Ablation {
  bool use_reg = true;
  bool use_det = true;
};

/// Gaussian control `x = L z + x_b` with `L L^T = B`.
struct TraditionalControl {
  Matrix transform;
};

/// Latent control `x = D(z) + x_b`.
struct VaeControl {
  std::shared_ptr<const nn::MlpParams> decoder;
  double epsilon = 1e-2;
  Ablation ablation;
};

struct CostSpec {
  std::variant<TraditionalControl, VaeControl> control;
  StateVector x_b;
  std::optional<ObservationOperator> op;
  ObservationBatch batch;
  /// Forecast model for windows longer than one time.
  std::shared_ptr<const DynamicalSystem> model;
  double step_size = 0.01;

  bool is_vae() const noexcept { return std::holds_alternative<VaeControl>(control); }
  Eigen::Index control_dim() const;
  /// Maps a control vector to physical state.
  StateVector to_state(const Vector& z) const;
  void validate() const;
};

struct CostEval {
  double total = 0.0;
  double obs_term = 0.0;
  double reg_term = 0.0;
  double det_term = 0.0;
  Vector gradient;
  int epsilon_doublings = 0;
};

/// Observation term for the cost spec's window at physical state x (zero if the batch is empty).
TermValue observation_term(const StateVector& x, const CostSpec& spec);

CostEval total_cost(const Vector& z, const CostSpec& spec);

}  // namespace vaevar
