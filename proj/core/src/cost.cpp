#include "vaevar/cost.hpp"

#include <cmath>

namespace vaevar {

TermValue obs_term_3d(const StateVector& x, const ObservationOperator& h, const Vector& y, double r_std) {
  if (!(r_std > 0.0)) throw ConfigError("obs_term_3d: r_std must be positive");
  require_dim(y.size(), h.obs_dim(), "obs_term_3d");
  const Vector innovation = y - h.apply(x);
  const double inv_r = 1.0 / (r_std * r_std);
  TermValue t;
  t.value = 0.5 * inv_r * innovation.squaredNorm();
  t.gradient = -inv_r * (h.jacobian(x).transpose() * innovation);
  return t;
}

TermValue obs_term_4d(const StateVector& x, const ObservationOperator& h, const ObservationBatch& batch,
                      const DynamicalSystem& model, double step_size) {
  batch.validate(h.obs_dim());
  require_dim(x.size(), model.dim(), "obs_term_4d");
  TermValue t;
  t.gradient = Vector::Zero(x.size());
  if (batch.windows.empty()) return t;

  const int last = batch.last_time_index();
  IntegratorConfig cfg{step_size, last};
  const std::vector<StateVector> traj = integrate(model, x, cfg);

  std::vector<Vector> state_grad(static_cast<std::size_t>(last) + 1);
  for (const auto& w : batch.windows) {
    TermValue term = obs_term_3d(traj[static_cast<std::size_t>(w.time_index)], h, w.y, batch.r_std);
    t.value += term.value;
    state_grad[static_cast<std::size_t>(w.time_index)] = std::move(term.gradient);
  }
  Vector lambda = Vector::Zero(x.size());
  for (int k = last; k >= 1; --k) {
    if (state_grad[static_cast<std::size_t>(k)].size()) lambda += state_grad[static_cast<std::size_t>(k)];
    lambda = adjoint_step(model, traj[static_cast<std::size_t>(k - 1)], step_size, lambda);
  }
  if (state_grad[0].size()) lambda += state_grad[0];
  t.gradient = std::move(lambda);
  return t;
}

TermValue bg_term_traditional(const Vector& z) { return {0.5 * z.squaredNorm(), z}; }

LogDet half_log_det_gram(const Matrix& jacobian, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("log-det term: epsilon must be positive");
  if (!jacobian.allFinite()) throw CostSingular("log-det term: decoder Jacobian is not finite");
  const Matrix gram = jacobian.transpose() * jacobian;
  const Eigen::Index n = gram.rows();
  LogDet out;
  double eps = epsilon;
  for (int attempt = 0; attempt < 64; ++attempt) {
    Eigen::LLT<Matrix> llt(gram + eps * Matrix::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      const auto diag = llt.matrixLLT().diagonal();
      if (diag.allFinite() && (diag.array() > 0.0).all()) {
        out.value = diag.array().log().sum();
        out.epsilon_used = eps;
        if (!std::isfinite(out.value)) throw CostSingular("log-det term is not finite");
        return out;
      }
    }
    eps *= 2.0;
    ++out.epsilon_doublings;
  }
  throw CostSingular("log-det term: Gram matrix not positive definite even after stabilizer doubling");
}

VaeBackgroundTerm bg_term_vae(const Vector& z, const nn::MlpParams& decoder, double epsilon,
                              bool with_det_gradient) {
  require_dim(z.size(), decoder.A1.cols(), "bg_term_vae");
  VaeBackgroundTerm t;
  t.reg = 0.5 * z.squaredNorm();
  t.grad_reg = z;
  const LogDet ld = half_log_det_gram(nn::mlp_input_jacobian(decoder, z), epsilon);
  t.det = ld.value;
  t.epsilon_doublings = ld.epsilon_doublings;
  t.grad_det = Vector::Zero(z.size());
  if (with_det_gradient) {
    Vector zp = z;
    for (Eigen::Index k = 0; k < z.size(); ++k) {
      const double step = 1e-5 * std::max(1.0, std::abs(z[k]));
      zp[k] = z[k] + step;
      const LogDet up = half_log_det_gram(nn::mlp_input_jacobian(decoder, zp), epsilon);
      zp[k] = z[k] - step;
      const LogDet down = half_log_det_gram(nn::mlp_input_jacobian(decoder, zp), epsilon);
      zp[k] = z[k];
      t.grad_det[k] = (up.value - down.value) / (2.0 * step);
      t.epsilon_doublings += up.epsilon_doublings + down.epsilon_doublings;
    }
  }
  t.value = t.reg + t.det;
  t.gradient = t.grad_reg + t.grad_det;
  return t;
}

Eigen::Index CostSpec::control_dim() const {
  if (const auto* v = std::get_if<VaeControl>(&control)) return v->decoder->A1.cols();
  return std::get<TraditionalControl>(control).transform.cols();
}

StateVector CostSpec::to_state(const Vector& z) const {
  require_dim(z.size(), control_dim(), "CostSpec::to_state");
  if (const auto* v = std::get_if<VaeControl>(&control)) return nn::mlp_forward(*v->decoder, z) + x_b;
  return std::get<TraditionalControl>(control).transform * z + x_b;
}

void CostSpec::validate() const {
  if (const auto* v = std::get_if<VaeControl>(&control)) {
    if (!v->decoder) throw ConfigError("CostSpec: VAE control needs a decoder");
    v->decoder->validate();
    if (!(v->epsilon > 0.0)) throw ConfigError("CostSpec: epsilon must be positive");
    require_dim(v->decoder->A3.rows(), x_b.size(), "CostSpec decoder output");
  } else {
    const auto& t = std::get<TraditionalControl>(control);
    require_dim(t.transform.rows(), x_b.size(), "CostSpec transform rows");
  }
  if (!batch.windows.empty()) {
    if (!op) throw ConfigError("CostSpec: observations given without an operator");
    require_dim(op->state_dim(), x_b.size(), "CostSpec operator");
    batch.validate(op->obs_dim());
    if (batch.windows.size() > 1 || batch.last_time_index() > 0) {
      if (!model) throw ConfigError("CostSpec: multi-time window needs a forecast model");
      if (!(step_size > 0.0)) throw ConfigError("CostSpec: step_size must be positive");
    }
  }
}

TermValue observation_term(const StateVector& x, const CostSpec& spec) {
  if (spec.batch.windows.empty()) return {0.0, Vector::Zero(x.size())};
  if (spec.batch.windows.size() == 1 && spec.batch.windows.front().time_index == 0) {
    return obs_term_3d(x, *spec.op, spec.batch.windows.front().y, spec.batch.r_std);
  }
  return obs_term_4d(x, *spec.op, spec.batch, *spec.model, spec.step_size);
}

CostEval total_cost(const Vector& z, const CostSpec& spec) {
  require_dim(z.size(), spec.control_dim(), "total_cost");
  CostEval e;
  if (const auto* v = std::get_if<VaeControl>(&spec.control)) {
    const nn::MlpTrace trace = nn::mlp_trace(*v->decoder, z);
    const StateVector x = trace.out + spec.x_b;
    const TermValue obs = observation_term(x, spec);
    const Matrix jac = nn::mlp_input_jacobian(*v->decoder, trace);
    e.obs_term = obs.value;
    e.gradient = jac.transpose() * obs.gradient;
    if (v->ablation.use_reg) {
      e.reg_term = 0.5 * z.squaredNorm();
      e.gradient += z;
    }
    if (v->ablation.use_det) {
      const VaeBackgroundTerm bg = bg_term_vae(z, *v->decoder, v->epsilon, true);
      e.det_term = bg.det;
      e.gradient += bg.grad_det;
      e.epsilon_doublings = bg.epsilon_doublings;
    }
  } else {
    const Matrix& l = std::get<TraditionalControl>(spec.control).transform;
    const StateVector x = l * z + spec.x_b;
    const TermValue obs = observation_term(x, spec);
    const TermValue bg = bg_term_traditional(z);
    e.obs_term = obs.value;
    e.reg_term = bg.value;
    e.gradient = l.transpose() * obs.gradient + bg.gradient;
  }
  e.total = e.obs_term + e.reg_term + e.det_term;
  return e;
}

}  // namespace vaevar
