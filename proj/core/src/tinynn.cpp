#include "vaevar/tinynn.hpp"

#include <cmath>

namespace vaevar::nn {

std::string to_string(Activation a) { return a == Activation::SiLU ? "silu" : "identity"; }

Activation activation_from_string(const std::string& s) {
  if (s == "silu") return Activation::SiLU;
  if (s == "identity") return Activation::Identity;
  throw FormatError("unknown activation '" + s + "'");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double silu_prime(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

namespace {

Vector activate(Activation a, const Vector& x) {
  if (a == Activation::Identity) return x;
  return x.unaryExpr([](double v) { return silu(v); });
}

Vector activate_prime(Activation a, const Vector& x) {
  if (a == Activation::Identity) return Vector::Ones(x.size());
  return x.unaryExpr([](double v) { return silu_prime(v); });
}

void fill_uniform(Rng& rng, double bound, double* data, Eigen::Index n) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < n; ++i) data[i] = u(rng);
}

}  // namespace

void MlpShape::validate() const {
  if (n_in < 1 || h1 < 1 || h2 < 1 || n_out < 1) throw ConfigError("MlpShape: all sizes must be >= 1");
}

MlpParams MlpParams::zeros(const MlpShape& s, Activation act) {
  s.validate();
  MlpParams p;
  p.A1 = Matrix::Zero(s.h1, s.n_in);
  p.b1 = Vector::Zero(s.h1);
  p.A2 = Matrix::Zero(s.h2, s.h1);
  p.b2 = Vector::Zero(s.h2);
  p.A3 = Matrix::Zero(s.n_out, s.h2);
  p.b3 = Vector::Zero(s.n_out);
  p.act1 = act;
  p.act2 = act;
  return p;
}

MlpParams MlpParams::init_uniform(const MlpShape& s, Rng& rng, Activation act) {
  MlpParams p = zeros(s, act);
  auto layer = [&rng](Matrix& a, Vector& b) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(a.cols()));
    fill_uniform(rng, bound, a.data(), a.size());
    fill_uniform(rng, bound, b.data(), b.size());
  };
  layer(p.A1, p.b1);
  layer(p.A2, p.b2);
  layer(p.A3, p.b3);
  return p;
}

MlpShape MlpParams::shape() const { return {A1.cols(), A1.rows(), A2.rows(), A3.rows()}; }

void MlpParams::validate() const {
  if (A2.cols() != A1.rows() || A3.cols() != A2.rows() || b1.size() != A1.rows() || b2.size() != A2.rows() ||
      b3.size() != A3.rows() || A1.size() == 0 || A3.size() == 0) {
    throw DimensionError("MlpParams: layer shapes do not chain");
  }
}

std::vector<std::span<double>> MlpParams::tensors() {
  auto sp = [](auto& t) { return std::span<double>(t.data(), static_cast<std::size_t>(t.size())); };
  return {sp(A1), sp(b1), sp(A2), sp(b2), sp(A3), sp(b3)};
}

std::vector<std::span<const double>> MlpParams::tensors() const {
  auto sp = [](const auto& t) { return std::span<const double>(t.data(), static_cast<std::size_t>(t.size())); };
  return {sp(A1), sp(b1), sp(A2), sp(b2), sp(A3), sp(b3)};
}

std::vector<std::string> MlpParams::tensor_names() { return {"A1", "b1", "A2", "b2", "A3", "b3"}; }

MlpTrace mlp_trace(const MlpParams& p, const Vector& z) {
  require_dim(z.size(), p.A1.cols(), "mlp_forward");
  MlpTrace t;
  t.pre1 = p.A1 * z + p.b1;
  t.post1 = activate(p.act1, t.pre1);
  t.pre2 = p.A2 * t.post1 + p.b2;
  t.post2 = activate(p.act2, t.pre2);
  t.out = p.A3 * t.post2 + p.b3;
  return t;
}

Vector mlp_forward(const MlpParams& p, const Vector& z) { return mlp_trace(p, z).out; }

Matrix mlp_input_jacobian(const MlpParams& p, const MlpTrace& t) {
  const Vector d1 = activate_prime(p.act1, t.pre1);
  const Vector d2 = activate_prime(p.act2, t.pre2);
  const Matrix inner = d1.asDiagonal() * p.A1;
  const Matrix middle = d2.asDiagonal() * (p.A2 * inner);
  return p.A3 * middle;
}

Matrix mlp_input_jacobian(const MlpParams& p, const Vector& z) { return mlp_input_jacobian(p, mlp_trace(p, z)); }

MlpBackward mlp_backward(const MlpParams& p, const Vector& z, const MlpTrace& t, const Vector& grad_out) {
  require_dim(grad_out.size(), p.A3.rows(), "mlp_backward");
  MlpBackward r;
  MlpGrads& g = r.params;
  g.act1 = p.act1;
  g.act2 = p.act2;

  g.b3 = grad_out;
  g.A3 = grad_out * t.post2.transpose();
  const Vector d_pre2 = (p.A3.transpose() * grad_out).cwiseProduct(activate_prime(p.act2, t.pre2));
  g.b2 = d_pre2;
  g.A2 = d_pre2 * t.post1.transpose();
  const Vector d_pre1 = (p.A2.transpose() * d_pre2).cwiseProduct(activate_prime(p.act1, t.pre1));
  g.b1 = d_pre1;
  g.A1 = d_pre1 * z.transpose();
  r.input = p.A1.transpose() * d_pre1;
  return r;
}

MlpBackward mlp_backward(const MlpParams& p, const Vector& z, const Vector& grad_out) {
  return mlp_backward(p, z, mlp_trace(p, z), grad_out);
}

void accumulate(MlpGrads& dst, const MlpGrads& src, double scale) {
  dst.A1 += scale * src.A1;
  dst.b1 += scale * src.b1;
  dst.A2 += scale * src.A2;
  dst.b2 += scale * src.b2;
  dst.A3 += scale * src.A3;
  dst.b3 += scale * src.b3;
}

void AdamWConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("AdamW: learning_rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("AdamW: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("AdamW: eps must be positive");
  if (weight_decay < 0.0) throw ConfigError("AdamW: weight_decay must be non-negative");
  if (batch_size < 1 || epochs < 0) throw ConfigError("AdamW: batch_size >= 1 and epochs >= 0 required");
}

void AdamW::step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads) {
  if (params.size() != grads.size()) throw DimensionError("AdamW: params/grads tensor count mismatch");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].size(), 0.0);
      v_[i].assign(params[i].size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw DimensionError("AdamW: tensor count changed between steps");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double lr = cfg_.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i];
    auto g = grads[i];
    if (w.size() != g.size() || w.size() != m_[i].size()) throw DimensionError("AdamW: tensor size mismatch");
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      w[k] -= lr * cfg_.weight_decay * w[k];
      w[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

}  // namespace vaevar::nn
