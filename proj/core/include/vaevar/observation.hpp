#pragma once

#include "vaevar/background.hpp"
#include "vaevar/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace vaevar {

enum class Nonlinearity { Identity, Absolute, Saturated };

std::string to_string(Nonlinearity n);
Nonlinearity nonlinearity_from_string(const std::string& s);

/// Mask selection followed by an elementwise nonlinearity.
class ObservationOperator {
 public:
  ObservationOperator(std::vector<bool> mask, Nonlinearity nonlinearity = Nonlinearity::Identity);

  static ObservationOperator full(Eigen::Index dim, Nonlinearity nonlinearity = Nonlinearity::Identity);

  const std::vector<bool>& mask() const noexcept { return mask_; }
  Nonlinearity nonlinearity() const noexcept { return nonlinearity_; }
  Eigen::Index state_dim() const noexcept { return static_cast<Eigen::Index>(mask_.size()); }
  Eigen::Index obs_dim() const noexcept { return static_cast<Eigen::Index>(observed_.size()); }
  /// State indices of the observed coordinates, ascending.
  const std::vector<Eigen::Index>& observed() const noexcept { return observed_; }

  Vector apply(const StateVector& x) const;
  /// Rows = observed coordinates, columns = state coordinates.
  Matrix jacobian(const StateVector& x) const;

 private:
  std::vector<bool> mask_;
  Nonlinearity nonlinearity_;
  std::vector<Eigen::Index> observed_;
};

inline Vector apply_operator(const ObservationOperator& h, const StateVector& x) { return h.apply(x); }
inline Matrix operator_jacobian(const ObservationOperator& h, const StateVector& x) { return h.jacobian(x); }

struct ObservationWindow {
  int time_index = 0;
  Vector y;
};

/// Observations over an assimilation window, `R = r_std^2 I`.
struct ObservationBatch {
  std::vector<ObservationWindow> windows;
  double noise_std = 0.0;
  double r_std = 1.0;

  void validate(Eigen::Index obs_dim) const;
  int last_time_index() const { return windows.empty() ? 0 : windows.back().time_index; }
};

/// `y_n = H(Mgt(0->n)(x_gt)) + eps`, eps ~ N(0, sigma_noise^2 I); R uses sigma_noise.
ObservationBatch simulate_observations(const TwinModelPair& pair, const StateVector& x_gt,
                                       const ObservationOperator& h, const std::vector<int>& window,
                                       double sigma_noise, std::uint64_t seed);

/// Rows `trial,window_index,time_index,coord,value`; `coord` is the state index.
void write_observation_rows(std::ostream& os, std::size_t trial, const ObservationOperator& h,
                            const ObservationBatch& batch);

}  // namespace vaevar
