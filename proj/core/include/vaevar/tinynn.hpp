#pragma once

#include "vaevar/rng.hpp"
#include "vaevar/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace vaevar::nn {

enum class Activation { SiLU, Identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

double sigmoid(double x);
/// x * sigmoid(x)
double silu(double x);
/// sigmoid(x) * (1 + x * (1 - sigmoid(x)))
double silu_prime(double x);

struct MlpShape {
  Eigen::Index n_in = 1;
  Eigen::Index h1 = 1;
  Eigen::Index h2 = 1;
  Eigen::Index n_out = 1;

  void validate() const;
  bool operator==(const MlpShape&) const = default;
};

/// Three linear layers with two elementwise activations in between:
/// `out = A3 act2(A2 act1(A1 z + b1) + b2) + b3`.
struct MlpParams {
  Matrix A1, A2, A3;
  Vector b1, b2, b3;
  Activation act1 = Activation::SiLU;
  Activation act2 = Activation::SiLU;

  static MlpParams zeros(const MlpShape& shape, Activation act = Activation::SiLU);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias of a layer.
  static MlpParams init_uniform(const MlpShape& shape, Rng& rng, Activation act = Activation::SiLU);

  MlpShape shape() const;
  /// Throws DimensionError if the layer shapes do not chain.
  void validate() const;

  /// Views over every tensor in declared order: A1, b1, A2, b2, A3, b3.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  static std::vector<std::string> tensor_names();
};

/// Parameter-shaped gradient container.
using MlpGrads = MlpParams;

/// Intermediate values of one forward pass.
struct MlpTrace {
  Vector pre1, post1, pre2, post2, out;
};

MlpTrace mlp_trace(const MlpParams& p, const Vector& z);
Vector mlp_forward(const MlpParams& p, const Vector& z);

/// `A3 diag(act2'(pre2)) A2 diag(act1'(pre1)) A1`, shape n_out x n_in.
Matrix mlp_input_jacobian(const MlpParams& p, const Vector& z);
Matrix mlp_input_jacobian(const MlpParams& p, const MlpTrace& trace);

struct MlpBackward {
  MlpGrads params;
  Vector input;
};

/// Reverse-mode gradients of `<grad_out, mlp_forward(p, z)>`.
MlpBackward mlp_backward(const MlpParams& p, const Vector& z, const Vector& grad_out);
MlpBackward mlp_backward(const MlpParams& p, const Vector& z, const MlpTrace& trace, const Vector& grad_out);

/// Accumulates `src` into `dst` (same shapes).
void accumulate(MlpGrads& dst, const MlpGrads& src, double scale = 1.0);

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int batch_size = 32;
  int epochs = 300;

  void validate() const;
};

/// Decoupled-weight-decay Adam with bias correction. Owns its moment buffers; one
/// trainer at a time.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  /// One update of `params` along `grads` (parallel lists of equally sized tensors).
  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads);

  long step_count() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return cfg_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace vaevar::nn
