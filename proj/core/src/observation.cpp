#include "vaevar/observation.hpp"

#include "vaevar/rng.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace vaevar {

namespace {
// R must stay invertible when observations are noise free.
constexpr double kMinObservationStd = 1e-3;
}  // namespace

std::string to_string(Nonlinearity n) {
  switch (n) {
    case Nonlinearity::Identity: return "identity";
    case Nonlinearity::Absolute: return "absolute";
    case Nonlinearity::Saturated: return "saturated";
  }
  return "identity";
}

Nonlinearity nonlinearity_from_string(const std::string& s) {
  if (s == "identity" || s == "id") return Nonlinearity::Identity;
  if (s == "absolute" || s == "abs") return Nonlinearity::Absolute;
  if (s == "saturated" || s == "sat") return Nonlinearity::Saturated;
  throw ConfigError("unknown observation nonlinearity '" + s + "'");
}

ObservationOperator::ObservationOperator(std::vector<bool> mask, Nonlinearity nonlinearity)
    : mask_(std::move(mask)), nonlinearity_(nonlinearity) {
  for (std::size_t i = 0; i < mask_.size(); ++i) {
    if (mask_[i]) observed_.push_back(static_cast<Eigen::Index>(i));
  }
  if (observed_.empty()) throw ConfigError("ObservationOperator: at least one coordinate must be observed");
}

ObservationOperator ObservationOperator::full(Eigen::Index dim, Nonlinearity nonlinearity) {
  return ObservationOperator(std::vector<bool>(static_cast<std::size_t>(dim), true), nonlinearity);
}

Vector ObservationOperator::apply(const StateVector& x) const {
  require_dim(x.size(), state_dim(), "apply_operator");
  Vector out(obs_dim());
  for (Eigen::Index r = 0; r < obs_dim(); ++r) {
    const double v = x[observed_[static_cast<std::size_t>(r)]];
    switch (nonlinearity_) {
      case Nonlinearity::Identity: out[r] = v; break;
      case Nonlinearity::Absolute: out[r] = std::abs(v); break;
      case Nonlinearity::Saturated: out[r] = v / (1.0 + std::abs(v)); break;
    }
  }
  return out;
}

Matrix ObservationOperator::jacobian(const StateVector& x) const {
  require_dim(x.size(), state_dim(), "operator_jacobian");
  Matrix j = Matrix::Zero(obs_dim(), state_dim());
  for (Eigen::Index r = 0; r < obs_dim(); ++r) {
    const Eigen::Index c = observed_[static_cast<std::size_t>(r)];
    const double v = x[c];
    switch (nonlinearity_) {
      case Nonlinearity::Identity: j(r, c) = 1.0; break;
      // sign(0) := 0
      case Nonlinearity::Absolute: j(r, c) = (v > 0.0) - (v < 0.0); break;
      case Nonlinearity::Saturated: {
        const double d = 1.0 + std::abs(v);
        j(r, c) = 1.0 / (d * d);
        break;
      }
    }
  }
  return j;
}

void ObservationBatch::validate(Eigen::Index obs_dim) const {
  if (!(r_std > 0.0)) throw ConfigError("ObservationBatch: r_std must be positive");
  for (std::size_t k = 0; k < windows.size(); ++k) {
    if (k == 0 && windows[k].time_index != 0) throw ConfigError("ObservationBatch: window must start at 0");
    if (k > 0 && windows[k].time_index <= windows[k - 1].time_index) {
      throw ConfigError("ObservationBatch: time indices must be strictly increasing");
    }
    require_dim(windows[k].y.size(), obs_dim, "ObservationBatch");
  }
}

ObservationBatch simulate_observations(const TwinModelPair& pair, const StateVector& x_gt,
                                       const ObservationOperator& h, const std::vector<int>& window,
                                       double sigma_noise, std::uint64_t seed) {
  if (window.empty() || window.front() != 0) throw ConfigError("simulate_observations: window must start at 0");
  if (sigma_noise < 0.0) throw ConfigError("simulate_observations: sigma_noise must be non-negative");
  require_dim(x_gt.size(), pair.truth.dim(), "simulate_observations");
  Rng rng(seed);
  ObservationBatch batch;
  batch.noise_std = sigma_noise;
  batch.r_std = std::max(sigma_noise, kMinObservationStd);
  StateVector x = x_gt;
  int t = 0;
  for (int target : window) {
    if (target < t) throw ConfigError("simulate_observations: window must be increasing");
    x = propagate(pair.truth, x, pair.integrator.step_size, target - t);
    t = target;
    Vector y = h.apply(x);
    if (sigma_noise > 0.0) y += sigma_noise * standard_normal(rng, y.size());
    batch.windows.push_back({target, std::move(y)});
  }
  batch.validate(h.obs_dim());
  return batch;
}

void write_observation_rows(std::ostream& os, std::size_t trial, const ObservationOperator& h,
                            const ObservationBatch& batch) {
  char buf[40];
  for (std::size_t w = 0; w < batch.windows.size(); ++w) {
    const auto& win = batch.windows[w];
    for (Eigen::Index r = 0; r < win.y.size(); ++r) {
      std::snprintf(buf, sizeof buf, "%.17g", win.y[r]);
      os << trial << ',' << w << ',' << win.time_index << ',' << h.observed()[static_cast<std::size_t>(r)] << ','
         << buf << '\n';
    }
  }
}

}  // namespace vaevar
