#include "vaevar/vae.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace vaevar {

void ErrorSampleSet::validate() const {
  for (const auto& s : samples) {
    if (s.size() != dim) throw DimensionError("ErrorSampleSet: non-uniform sample dimension");
    if (!s.allFinite()) throw Error("ErrorSampleSet: non-finite sample");
  }
}

void VaeShape::validate() const {
  if (dim < 1 || h1 < 1 || h2 < 1 || latent < 1) throw ConfigError("VaeShape: all sizes must be >= 1");
}

namespace {

nn::MlpShape encoder_shape(const VaeShape& s) { return {s.dim, s.h1, s.h2, 2 * s.latent}; }
nn::MlpShape decoder_shape(const VaeShape& s) { return {s.latent, s.h1, s.h2, s.dim}; }

}  // namespace

VaeModel VaeModel::zeros(const VaeShape& shape, double sigma0) {
  shape.validate();
  VaeModel m;
  m.encoder = nn::MlpParams::zeros(encoder_shape(shape));
  m.decoder = nn::MlpParams::zeros(decoder_shape(shape));
  m.sigma0 = sigma0;
  m.latent_dim = shape.latent;
  m.validate();
  return m;
}

VaeModel VaeModel::init(const VaeShape& shape, double sigma0, Rng& rng) {
  shape.validate();
  VaeModel m;
  m.encoder = nn::MlpParams::init_uniform(encoder_shape(shape), rng);
  m.decoder = nn::MlpParams::init_uniform(decoder_shape(shape), rng);
  m.sigma0 = sigma0;
  m.latent_dim = shape.latent;
  m.validate();
  return m;
}

VaeShape VaeModel::shape() const { return {dim(), decoder.A1.rows(), decoder.A2.rows(), latent_dim}; }

void VaeModel::validate() const {
  encoder.validate();
  decoder.validate();
  if (!(sigma0 > 0.0) || !std::isfinite(sigma0)) throw ConfigError("VaeModel: sigma0 must be positive");
  if (decoder.A1.cols() != latent_dim) throw DimensionError("VaeModel: decoder input != latent_dim");
  if (encoder.A3.rows() != 2 * latent_dim) throw DimensionError("VaeModel: encoder heads != 2*latent_dim");
  if (encoder.A1.cols() != decoder.A3.rows()) throw DimensionError("VaeModel: encoder input != decoder output");
}

Encoding encode(const VaeModel& m, const Vector& delta) {
  require_dim(delta.size(), m.dim(), "encode");
  const Vector out = nn::mlp_forward(m.encoder, delta);
  return {out.head(m.latent_dim), out.tail(m.latent_dim)};
}

Vector decode(const VaeModel& m, const Vector& z) {
  require_dim(z.size(), m.latent_dim, "decode");
  return nn::mlp_forward(m.decoder, z);
}

namespace {

struct ElboForward {
  nn::MlpTrace enc;
  Vector mu, logvar, std_dev, z;
  nn::MlpTrace dec;
  Vector residual;
  ElboTerms terms;
};

ElboForward elbo_forward(const VaeModel& m, const Vector& delta, const Vector& noise) {
  require_dim(delta.size(), m.dim(), "elbo_loss");
  require_dim(noise.size(), m.latent_dim, "elbo_loss");
  ElboForward f;
  f.enc = nn::mlp_trace(m.encoder, delta);
  f.mu = f.enc.out.head(m.latent_dim);
  f.logvar = f.enc.out.tail(m.latent_dim);
  f.std_dev = (0.5 * f.logvar.array()).exp().matrix();
  f.z = f.mu + f.std_dev.cwiseProduct(noise);
  f.dec = nn::mlp_trace(m.decoder, f.z);
  f.residual = delta - f.dec.out;
  const double inv2s2 = 1.0 / (2.0 * m.sigma0 * m.sigma0);
  f.terms.recon = f.residual.squaredNorm() * inv2s2;
  f.terms.kl = 0.5 * (f.logvar.array().exp() + f.mu.array().square() - 1.0 - f.logvar.array()).sum();
  f.terms.loss = f.terms.recon + f.terms.kl;
  if (!std::isfinite(f.terms.loss)) throw TrainingDiverged("ELBO loss is not finite");
  return f;
}

}  // namespace

ElboTerms elbo_loss(const VaeModel& m, const Vector& delta, const Vector& noise) {
  return elbo_forward(m, delta, noise).terms;
}

ElboGradient elbo_gradient(const VaeModel& m, const Vector& delta, const Vector& noise) {
  const ElboForward f = elbo_forward(m, delta, noise);
  ElboGradient g;
  g.terms = f.terms;

  const Vector d_dec_out = -f.residual / (m.sigma0 * m.sigma0);
  nn::MlpBackward dec = nn::mlp_backward(m.decoder, f.z, f.dec, d_dec_out);
  g.decoder = std::move(dec.params);

  const Vector& dz = dec.input;
  Vector d_enc_out(2 * m.latent_dim);
  d_enc_out.head(m.latent_dim) = dz + f.mu;
  d_enc_out.tail(m.latent_dim) =
      (0.5 * dz.cwiseProduct(f.std_dev).cwiseProduct(noise).array() + 0.5 * (f.logvar.array().exp() - 1.0)).matrix();
  g.encoder = nn::mlp_backward(m.encoder, delta, f.enc, d_enc_out).params;
  return g;
}

namespace {

nn::MlpGrads zero_like(const nn::MlpParams& p) {
  nn::MlpGrads g = nn::MlpParams::zeros(p.shape(), p.act1);
  g.act2 = p.act2;
  return g;
}

void scale(nn::MlpGrads& g, double s) {
  g.A1 *= s;
  g.b1 *= s;
  g.A2 *= s;
  g.b2 *= s;
  g.A3 *= s;
  g.b3 *= s;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainResult train_vae(const ErrorSampleSet& samples, const VaeShape& shape_in, const nn::AdamWConfig& cfg,
                      double sigma0, std::uint64_t seed) {
  if (samples.samples.empty()) throw ConfigError("train_vae: sample set is empty");
  samples.validate();
  cfg.validate();
  VaeShape shape = shape_in;
  shape.dim = samples.dim;

  Rng rng(seed);
  TrainResult result{VaeModel::init(shape, sigma0, rng), {}};
  VaeModel& model = result.model;
  nn::AdamW opt(cfg);

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLoss el{epoch, 0.0, 0.0, 0.0};
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      nn::MlpGrads g_enc = zero_like(model.encoder);
      nn::MlpGrads g_dec = zero_like(model.decoder);
      for (std::size_t k = start; k < end; ++k) {
        const Vector noise = standard_normal(rng, model.latent_dim);
        const ElboGradient g = elbo_gradient(model, samples.samples[order[k]], noise);
        nn::accumulate(g_enc, g.encoder);
        nn::accumulate(g_dec, g.decoder);
        el.mean_loss += g.terms.loss;
        el.recon += g.terms.recon;
        el.kl += g.terms.kl;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      scale(g_enc, inv);
      scale(g_dec, inv);

      auto params = model.encoder.tensors();
      auto dparams = model.decoder.tensors();
      params.insert(params.end(), dparams.begin(), dparams.end());
      const nn::MlpGrads& ce = g_enc;
      const nn::MlpGrads& cd = g_dec;
      auto grads = ce.tensors();
      auto dgrads = cd.tensors();
      grads.insert(grads.end(), dgrads.begin(), dgrads.end());
      opt.step(params, grads);
    }
    const double n = static_cast<double>(samples.size());
    el.mean_loss /= n;
    el.recon /= n;
    el.kl /= n;
    if (!std::isfinite(el.mean_loss)) throw TrainingDiverged("epoch mean loss is not finite");
    result.trace.push_back(el);
  }

  model.manifest["train.seed"] = std::to_string(seed);
  model.manifest["train.epochs"] = std::to_string(cfg.epochs);
  model.manifest["train.batch_size"] = std::to_string(cfg.batch_size);
  model.manifest["train.learning_rate"] = fmt_double(cfg.learning_rate);
  model.manifest["train.beta1"] = fmt_double(cfg.beta1);
  model.manifest["train.beta2"] = fmt_double(cfg.beta2);
  model.manifest["train.eps"] = fmt_double(cfg.eps);
  model.manifest["train.weight_decay"] = fmt_double(cfg.weight_decay);
  model.manifest["train.n_samples"] = std::to_string(samples.size());
  model.manifest["train.input_normalization"] = "none";
  model.manifest["train.init"] = "uniform_fan_in";
  return result;
}

void write_loss_trace_csv(std::ostream& os, const std::vector<EpochLoss>& trace) {
  os << "epoch,mean_loss,recon,kl\n";
  for (const auto& e : trace) {
    os << e.epoch << ',' << fmt_double(e.mean_loss) << ',' << fmt_double(e.recon) << ',' << fmt_double(e.kl)
       << '\n';
  }
}

// ---- serialization ---------------------------------------------------------

namespace {

struct TensorSlot {
  std::string name;
  std::string dims;
  std::span<double> data;
};

std::string dims_of(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }
std::string dims_of(const Vector& v) { return std::to_string(v.size()); }

std::vector<TensorSlot> slots(VaeModel& m) {
  std::vector<TensorSlot> out;
  auto add = [&out](const std::string& prefix, nn::MlpParams& p) {
    auto names = nn::MlpParams::tensor_names();
    auto views = p.tensors();
    const std::string dims[] = {dims_of(p.A1), dims_of(p.b1), dims_of(p.A2),
                                dims_of(p.b2), dims_of(p.A3), dims_of(p.b3)};
    for (std::size_t i = 0; i < views.size(); ++i) out.push_back({prefix + names[i], dims[i], views[i]});
  };
  add("encoder.", m.encoder);
  add("decoder.", m.decoder);
  return out;
}

void put_f64(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  os.write(bytes, 8);
}

bool get_f64(std::istream& is, double& v) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) return false;
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  v = std::bit_cast<double>(bits);
  return true;
}

Eigen::Index parse_index(const std::map<std::string, std::string>& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError("model file: missing header key '" + key + "'");
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size() || v < 1) throw FormatError("");
    return static_cast<Eigen::Index>(v);
  } catch (const std::exception&) {
    throw FormatError("model file: bad integer for '" + key + "'");
  }
}

}  // namespace

void save_model(std::ostream& os, const VaeModel& m_in) {
  m_in.validate();
  VaeModel m = m_in;
  os << kModelMagic << '\n';
  os << "dim=" << m.dim() << '\n';
  os << "latent=" << m.latent_dim << '\n';
  os << "h1=" << m.decoder.A1.rows() << '\n';
  os << "h2=" << m.decoder.A2.rows() << '\n';
  os << "sigma0=" << fmt_double(m.sigma0) << '\n';
  os << "encoder.act1=" << nn::to_string(m.encoder.act1) << '\n';
  os << "encoder.act2=" << nn::to_string(m.encoder.act2) << '\n';
  os << "decoder.act1=" << nn::to_string(m.decoder.act1) << '\n';
  os << "decoder.act2=" << nn::to_string(m.decoder.act2) << '\n';
  const auto ts = slots(m);
  os << "tensors=";
  for (std::size_t i = 0; i < ts.size(); ++i) os << (i ? "," : "") << ts[i].name << ':' << ts[i].dims;
  os << '\n';
  for (const auto& [k, v] : m.manifest) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw FormatError("model manifest entries may not contain '=' in keys or newlines");
    }
    os << "manifest." << k << '=' << v << '\n';
  }
  os << "end\n";
  for (const auto& t : ts) {
    for (double v : t.data) put_f64(os, v);
  }
  if (!os) throw FormatError("model file: write failed");
}

VaeModel load_model(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kModelMagic) {
    throw FormatError("model file: bad magic line (expected '" + std::string(kModelMagic) + "')");
  }
  std::map<std::string, std::string> kv;
  std::map<std::string, std::string> manifest;
  bool ended = false;
  while (std::getline(is, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("model file: malformed header line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key.rfind("manifest.", 0) == 0) {
      manifest[key.substr(9)] = std::move(value);
    } else {
      kv[std::move(key)] = std::move(value);
    }
  }
  if (!ended) throw FormatError("model file: truncated header");

  VaeShape shape;
  shape.dim = parse_index(kv, "dim");
  shape.latent = parse_index(kv, "latent");
  shape.h1 = parse_index(kv, "h1");
  shape.h2 = parse_index(kv, "h2");
  auto sig = kv.find("sigma0");
  if (sig == kv.end()) throw FormatError("model file: missing sigma0");
  double sigma0 = 0.0;
  try {
    sigma0 = std::stod(sig->second);
  } catch (const std::exception&) {
    throw FormatError("model file: bad sigma0");
  }
  if (!(sigma0 > 0.0)) throw FormatError("model file: sigma0 must be positive");

  VaeModel m = VaeModel::zeros(shape, sigma0);
  auto act = [&kv](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("model file: missing '" + key + "'");
    return nn::activation_from_string(it->second);
  };
  m.encoder.act1 = act("encoder.act1");
  m.encoder.act2 = act("encoder.act2");
  m.decoder.act1 = act("decoder.act1");
  m.decoder.act2 = act("decoder.act2");
  m.manifest = std::move(manifest);

  auto ts = slots(m);
  std::string expected;
  for (std::size_t i = 0; i < ts.size(); ++i) expected += (i ? "," : "") + ts[i].name + ":" + ts[i].dims;
  auto listed = kv.find("tensors");
  if (listed == kv.end() || listed->second != expected) {
    throw FormatError("model file: tensor list inconsistent with declared shapes");
  }
  for (auto& t : ts) {
    for (double& v : t.data) {
      if (!get_f64(is, v)) throw FormatError("model file: truncated tensor data in " + t.name);
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("model file: trailing bytes after tensors");
  m.validate();
  return m;
}

void save_model(const std::filesystem::path& path, const VaeModel& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  save_model(os, m);
}

VaeModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path.string() + "'");
  return load_model(is);
}

VaeModel load_model(const std::filesystem::path& path, Eigen::Index expected_dim) {
  VaeModel m = load_model(path);
  if (m.dim() != expected_dim) {
    throw DimensionError("model '" + path.string() + "' has state dimension " + std::to_string(m.dim()) +
                         ", assimilation needs " + std::to_string(expected_dim));
  }
  return m;
}

}  // namespace vaevar
