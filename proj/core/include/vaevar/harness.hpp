#pragma once

#include "vaevar/assimilation.hpp"
#include "vaevar/background.hpp"
#include "vaevar/dynamics.hpp"
#include "vaevar/observation.hpp"
#include "vaevar/solver.hpp"
#include "vaevar/vae.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vaevar {

double rmse(const StateVector& a, const StateVector& b);

/// Relative gain of the VAE analysis over the traditional one,
/// `(r_bg - r_vae) / (r_bg - r_trad) - 1`.
/// Absent when `|r_bg - r_trad| < floor`; zero when either analysis is worse than the
/// background.
std::optional<double> imp_metric(double r_bg, double r_vae, double r_trad, double floor);

enum class Method { Traditional, Vae, VaeObsOnly, VaeObsReg, Naive };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// System family plus the truth and prediction parameters.
struct SystemConfig {
  SystemFamily family = SystemFamily::Lorenz63;
  Lorenz63Params truth63;
  Lorenz63Params prediction63{11.0, 28.0, 8.0 / 3.0};
  Eigen::Index dim96 = 20;
  double forcing96 = 8.0;
  /// Forcing of the first equation in the prediction model.
  double prediction_forcing1 = 13.0;

  Eigen::Index dim() const { return family == SystemFamily::Lorenz63 ? 3 : dim96; }
  DynamicalSystem truth() const;
  DynamicalSystem prediction() const;
};

struct VaeTrainingConfig {
  Eigen::Index h1 = 8;
  Eigen::Index h2 = 8;
  Eigen::Index latent = 3;
  double sigma0 = 0.3;
  nn::AdamWConfig adamw;
  /// Determinant stabilizer in the latent background term.
  double epsilon = 1e-2;
};

struct ExperimentConfig {
  std::string scenario = "l63_sigma";
  SystemConfig system;
  IntegratorConfig integrator{0.01, 10};
  std::size_t n_train = 4000;
  std::size_t n_val = 1000;
  std::vector<std::string> masks{"XYZ", "XY", "X"};
  Nonlinearity nonlinearity = Nonlinearity::Identity;
  std::vector<double> sigma_noise{0.1, 0.3, 0.5};
  int repeats = 10;
  /// Observation times in integration steps; `[0]` is 3D, longer windows are 4D.
  std::vector<int> window{0};
  std::vector<Method> methods{Method::Traditional, Method::Vae, Method::VaeObsOnly, Method::VaeObsReg,
                              Method::Naive};
  VaeTrainingConfig vae;
  LbfgsConfig lbfgs;
  std::uint64_t seed = 20240501;
  int threads = 1;
  bool truth_full_horizon = false;
  /// Load a trained model instead of training one.
  std::string model_path;
  /// Imp is suppressed when `|R_bg - R_trad| < imp_floor_rel * R_bg`.
  double imp_floor_rel = 1e-3;
  /// Optional CSV of every simulated observation.
  std::string observations_path;

  void validate() const;
};

/// Named scenario presets: `l63_sigma`, `l63_rho`, `l96_F`.
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// The 41-point noise grid 0.1, 0.11, ..., 0.5.
std::vector<double> full_noise_grid();

/// Every non-empty mask over the three Lorenz 63 variables, or over the first three
/// Lorenz 96 variables.
std::vector<std::string> all_masks(SystemFamily family);

/// `XYZ` letters for Lorenz 63; `x1x2...` (1-based) or `all` for Lorenz 96.
std::vector<bool> parse_mask(const std::string& name, SystemFamily family, Eigen::Index dim);

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Overlays the keys present in `j` onto `c`. Throws ConfigError on bad values.
void apply_json(ExperimentConfig& c, const nlohmann::json& j);

struct MetricRow {
  Method method = Method::Traditional;
  std::string mask;
  Nonlinearity nonlinearity = Nonlinearity::Identity;
  double sigma_noise = 0.0;
  int repeat = 0;
  double rmse_bg = 0.0;
  double rmse_method = 0.0;
  std::optional<double> imp;
};

struct SummaryRow {
  Method method = Method::Traditional;
  std::string mask;
  Nonlinearity nonlinearity = Nonlinearity::Identity;
  double sigma_noise = 0.0;
  double rmse_bg_mean = 0.0;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  std::optional<double> imp_mean;
  std::optional<double> imp_std;
  int imp_count = 0;
};

/// Mean and sample standard deviation over repeats for every (method, mask, sigma) cell.
std::vector<SummaryRow> summarize(const std::vector<MetricRow>& rows);

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows);
void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);

/// Truth, background and warm-up origin of one validation case.
struct ValidationCase {
  StateVector x_gt;
  StateVector x_b;
};

/// Validation case `index`: a standard-normal draw warmed up with the truth model for
/// tau steps, then advanced tau steps by each model.
ValidationCase make_validation_case(const TwinModelPair& pair, std::uint64_t seed, std::uint64_t index);

/// Everything `run_experiment` needs that is independent of masks and noise levels.
struct ExperimentContext {
  TwinModelPair pair;
  ErrorSampleSet samples;
  BackgroundCovariance covariance;
  VaeModel model;
  std::vector<EpochLoss> loss_trace;
  std::size_t samples_resampled = 0;
  std::shared_ptr<const nn::MlpParams> decoder;
  std::shared_ptr<const DynamicalSystem> forecast_model;
};

ExperimentContext prepare_experiment(const ExperimentConfig& cfg);

struct ExperimentResult {
  std::vector<MetricRow> rows;
  nlohmann::json manifest;
  std::vector<EpochLoss> loss_trace;
  std::size_t failed_trials = 0;
  std::size_t total_trials = 0;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Runs the full sweep. Throws Error if more than 1% of trials fail.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress = {});
ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentContext& ctx,
                                const ProgressFn& progress = {});

/// Builds the cost specification for one method on one case.
CostSpec make_cost_spec(Method method, const ExperimentConfig& cfg, const ExperimentContext& ctx,
                        const StateVector& x_b, const ObservationOperator& op, ObservationBatch batch);

}  // namespace vaevar
