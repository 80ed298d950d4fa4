#pragma once

#include "vaevar/tinynn.hpp"
#include "vaevar/types.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace vaevar {

/// Background-error samples `delta = x - x_b`, all of one dimension.
struct ErrorSampleSet {
  Eigen::Index dim = 0;
  std::vector<Vector> samples;

  void validate() const;
  std::size_t size() const noexcept { return samples.size(); }
};

/// Layer widths of the encoder/decoder pair. The encoder runs `dim -> h1 -> h2 -> 2*latent`
/// and the decoder `latent -> h1 -> h2 -> dim`.
struct VaeShape {
  Eigen::Index dim = 3;
  Eigen::Index h1 = 8;
  Eigen::Index h2 = 8;
  Eigen::Index latent = 3;

  void validate() const;
};

struct VaeModel {
  /// Shared two-layer SiLU trunk; its final linear layer stacks the mean head (first
  /// `latent_dim` rows) over the log-variance head (last `latent_dim` rows).
  nn::MlpParams encoder;
  nn::MlpParams decoder;
  double sigma0 = 0.3;
  Eigen::Index latent_dim = 3;
  /// Free-form provenance (seed, training config, ...). Round-trips through save/load.
  std::map<std::string, std::string> manifest;

  static VaeModel zeros(const VaeShape& shape, double sigma0);
  static VaeModel init(const VaeShape& shape, double sigma0, Rng& rng);

  Eigen::Index dim() const noexcept { return decoder.A3.rows(); }
  VaeShape shape() const;
  void validate() const;
};

struct Encoding {
  Vector mu;
  Vector logvar;
};

Encoding encode(const VaeModel& m, const Vector& delta);
Vector decode(const VaeModel& m, const Vector& z);

struct ElboTerms {
  double loss = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

/// `||delta - D(mu + exp(logvar/2) * noise)||^2 / (2 sigma0^2) + KL(q || N(0, I))`.
ElboTerms elbo_loss(const VaeModel& m, const Vector& delta, const Vector& noise);

struct ElboGradient {
  ElboTerms terms;
  nn::MlpGrads encoder;
  nn::MlpGrads decoder;
};

ElboGradient elbo_gradient(const VaeModel& m, const Vector& delta, const Vector& noise);

struct EpochLoss {
  int epoch = 0;
  double mean_loss = 0.0;
  double recon = 0.0;
  double kl = 0.0;
};

struct TrainResult {
  VaeModel model;
  std::vector<EpochLoss> trace;
};

/// Mini-batch AdamW on the ELBO with one reparameterized latent draw per sample per step.
/// Bitwise reproducible for a fixed seed.
TrainResult train_vae(const ErrorSampleSet& samples, const VaeShape& shape, const nn::AdamWConfig& cfg,
                      double sigma0, std::uint64_t seed);

void write_loss_trace_csv(std::ostream& os, const std::vector<EpochLoss>& trace);

// Model file: ASCII magic line, `key=value` header lines, an `end` line, then each
// tensor as little-endian float64 in header order.
inline constexpr const char* kModelMagic = "VAEVAR-MODEL v1";

void save_model(std::ostream& os, const VaeModel& m);
VaeModel load_model(std::istream& is);
void save_model(const std::filesystem::path& path, const VaeModel& m);
VaeModel load_model(const std::filesystem::path& path);
/// Loads and checks the model's state dimension against `expected_dim`.
VaeModel load_model(const std::filesystem::path& path, Eigen::Index expected_dim);

}  // namespace vaevar
