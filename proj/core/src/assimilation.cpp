#include "vaevar/assimilation.hpp"

#include "vaevar/rng.hpp"

namespace vaevar {

namespace {

AssimilationResult run(const CostSpec& spec, const AssimilationOptions& opts) {
  spec.validate();
  const Eigen::Index n = spec.control_dim();
  const Objective f = [&spec](const Vector& z, Vector& grad) {
    CostEval e = total_cost(z, spec);
    grad = std::move(e.gradient);
    return e.total;
  };

  std::optional<MinimizeResult> best;
  for (int start = 0; start <= opts.extra_starts; ++start) {
    Vector z0 = Vector::Zero(n);
    if (start > 0) {
      Rng rng(derive_seed(opts.start_seed, {static_cast<std::uint64_t>(start)}));
      z0 = standard_normal(rng, n);
    }
    MinimizeResult r = minimize(f, z0, opts.lbfgs);
    if (!best || r.report.final_value < best->report.final_value) best = std::move(r);
  }

  AssimilationResult out;
  out.cost = total_cost(best->z, spec);
  out.x_a = spec.to_state(best->z);
  out.z_star = std::move(best->z);
  out.report = best->report;
  if (!out.x_a.allFinite()) throw Error("assimilation produced a non-finite analysis");
  return out;
}

}  // namespace

AssimilationResult assimilate_traditional(const CostSpec& spec, const AssimilationOptions& opts) {
  if (spec.is_vae()) throw ConfigError("assimilate_traditional: spec carries a VAE control");
  return run(spec, opts);
}

AssimilationResult assimilate_vae(const CostSpec& spec, const AssimilationOptions& opts) {
  if (!spec.is_vae()) throw ConfigError("assimilate_vae: spec carries a Gaussian control");
  return run(spec, opts);
}

AssimilationResult assimilate(const CostSpec& spec, const AssimilationOptions& opts) { return run(spec, opts); }

AssimilationResult assimilate_naive(const StateVector& x_b, const ObservationOperator& h, const Vector& y) {
  if (h.nonlinearity() != Nonlinearity::Identity) {
    throw UnsupportedOperator("naive substitute requires an identity observation operator, got " +
                              to_string(h.nonlinearity()));
  }
  require_dim(x_b.size(), h.state_dim(), "assimilate_naive");
  require_dim(y.size(), h.obs_dim(), "assimilate_naive");
  AssimilationResult out;
  out.x_a = x_b;
  for (Eigen::Index r = 0; r < y.size(); ++r) out.x_a[h.observed()[static_cast<std::size_t>(r)]] = y[r];
  out.cost.gradient = Vector();
  out.report.reason = Termination::GradientTolerance;
  return out;
}

}  // namespace vaevar
