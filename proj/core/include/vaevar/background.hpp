#pragma once

#include "vaevar/dynamics.hpp"
#include "vaevar/vae.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

namespace vaevar {

/// Ground-truth model and the perturbed forecast model that stands in for it.
struct TwinModelPair {
  DynamicalSystem truth;
  DynamicalSystem prediction;
  IntegratorConfig integrator;

  void validate() const;
};

struct SampleGenerationOptions {
  /// Run the truth branch with the ground-truth model for both legs instead of
  /// switching to the prediction model for the second leg.
  bool truth_full_horizon = false;
  int threads = 1;
  int max_attempts = 100;
};

struct SampleGenerationReport {
  std::size_t resampled = 0;
};

/// Random initial state for draw `index` of a run seeded with `seed`.
StateVector initial_state(Eigen::Index dim, std::uint64_t seed, std::uint64_t index, std::uint64_t attempt = 0);

/// NMC-style error samples: for each draw x0, the difference between
/// `M(tau->2tau) o Mgt(0->tau)(x0)` and `M(tau->2tau) o M(0->tau)(x0)`.
ErrorSampleSet generate_error_samples(const TwinModelPair& pair, std::size_t n_samples, std::uint64_t seed,
                                      const SampleGenerationOptions& opts = {},
                                      SampleGenerationReport* report = nullptr);

/// Gaussian background model with `B + ridge I = U^T U`, U upper triangular.
struct BackgroundCovariance {
  Matrix B;
  Matrix U;
  double ridge = 0.0;

  Matrix regularized() const { return B + ridge * Matrix::Identity(B.rows(), B.cols()); }
  /// Lower factor `L = U^T`; the control transform is `x = L z + x_b`, so that
  /// `cov(L z) = U^T U`.
  Matrix control_transform() const { return U.transpose(); }
};

/// Default ridge: `1e-6 * trace(B) / dim`, floored at 1e-12.
double default_ridge(const Matrix& B);

/// Unbiased sample covariance about the sample mean plus an upper Cholesky factor.
BackgroundCovariance estimate_covariance(const ErrorSampleSet& samples, std::optional<double> ridge = std::nullopt);

/// Factorizes a given covariance.
BackgroundCovariance make_covariance(const Matrix& B, double ridge);

// Sample-set file: `VAEVAR-SAMPLES v1 dim=<d> n=<n>` then one CSV row per sample.
void write_samples(std::ostream& os, const ErrorSampleSet& s);
ErrorSampleSet read_samples(std::istream& is);
void write_samples(const std::filesystem::path& path, const ErrorSampleSet& s);
ErrorSampleSet read_samples(const std::filesystem::path& path);

}  // namespace vaevar
