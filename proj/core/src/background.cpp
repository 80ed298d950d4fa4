#include "vaevar/background.hpp"

#include "vaevar/parallel.hpp"
#include "vaevar/rng.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace vaevar {

void TwinModelPair::validate() const {
  integrator.validate();
  if (truth.family() != prediction.family() || truth.dim() != prediction.dim()) {
    throw ConfigError("TwinModelPair: truth and prediction models must share family and dimension");
  }
}

StateVector initial_state(Eigen::Index dim, std::uint64_t seed, std::uint64_t index, std::uint64_t attempt) {
  Rng rng(derive_seed(seed, {0x1d0ULL, index, attempt}));
  return standard_normal(rng, dim);
}

ErrorSampleSet generate_error_samples(const TwinModelPair& pair, std::size_t n_samples, std::uint64_t seed,
                                      const SampleGenerationOptions& opts, SampleGenerationReport* report) {
  pair.validate();
  if (n_samples < 1) throw ConfigError("generate_error_samples: n_samples must be >= 1");
  const Eigen::Index dim = pair.truth.dim();
  const double h = pair.integrator.step_size;
  const int tau = pair.integrator.n_steps;

  ErrorSampleSet out;
  out.dim = dim;
  out.samples.resize(n_samples);
  std::atomic<std::size_t> resampled{0};

  parallel_for(n_samples, opts.threads, [&](std::size_t i) {
    for (int attempt = 0; attempt < opts.max_attempts; ++attempt) {
      try {
        const StateVector x0 = initial_state(dim, seed, i, static_cast<std::uint64_t>(attempt));
        const StateVector truth_mid = propagate(pair.truth, x0, h, tau);
        const StateVector pred_mid = propagate(pair.prediction, x0, h, tau);
        const DynamicalSystem& second_leg = opts.truth_full_horizon ? pair.truth : pair.prediction;
        const StateVector x1 = propagate(second_leg, truth_mid, h, tau);
        const StateVector x2 = propagate(pair.prediction, pred_mid, h, tau);
        out.samples[i] = x1 - x2;
        return;
      } catch (const IntegrationDiverged&) {
        resampled.fetch_add(1);
      }
    }
    throw IntegrationDiverged("generate_error_samples: too many divergent draws for sample " + std::to_string(i));
  });
  if (report) report->resampled = resampled.load();
  return out;
}

double default_ridge(const Matrix& B) {
  const double r = 1e-6 * B.trace() / static_cast<double>(B.rows());
  return std::max(r, 1e-12);
}

BackgroundCovariance make_covariance(const Matrix& B, double ridge) {
  if (B.rows() != B.cols()) throw DimensionError("make_covariance: B must be square");
  if (!(ridge > 0.0)) throw ConfigError("make_covariance: ridge must be positive");
  BackgroundCovariance c;
  c.B = 0.5 * (B + B.transpose());
  c.ridge = ridge;
  const Matrix reg = c.regularized();
  Eigen::LLT<Matrix> llt(reg);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(reg, Eigen::EigenvaluesOnly);
    const double min_ev = eig.eigenvalues().minCoeff();
    throw FactorizationError("background covariance is not positive definite after ridge (min eigenvalue " +
                                 std::to_string(min_ev) + ")",
                             min_ev);
  }
  c.U = llt.matrixU();
  return c;
}

BackgroundCovariance estimate_covariance(const ErrorSampleSet& samples, std::optional<double> ridge) {
  samples.validate();
  const std::size_t n = samples.size();
  if (n < 2) throw ConfigError("estimate_covariance: need at least 2 samples");
  const Eigen::Index d = samples.dim;
  Vector mean = Vector::Zero(d);
  for (const auto& s : samples.samples) mean += s;
  mean /= static_cast<double>(n);
  Matrix B = Matrix::Zero(d, d);
  for (const auto& s : samples.samples) {
    const Vector c = s - mean;
    B.noalias() += c * c.transpose();
  }
  B /= static_cast<double>(n - 1);
  return make_covariance(B, ridge.value_or(default_ridge(B)));
}

void write_samples(std::ostream& os, const ErrorSampleSet& s) {
  s.validate();
  os << "VAEVAR-SAMPLES v1 dim=" << s.dim << " n=" << s.size() << '\n';
  char buf[40];
  for (const auto& v : s.samples) {
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", v[j]);
      if (j) os << ',';
      os << buf;
    }
    os << '\n';
  }
  if (!os) throw FormatError("sample file: write failed");
}

ErrorSampleSet read_samples(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("sample file: empty");
  long long dim = 0, n = 0;
  char tail = 0;
  if (std::sscanf(line.c_str(), "VAEVAR-SAMPLES v1 dim=%lld n=%lld%c", &dim, &n, &tail) != 2 || dim < 1 || n < 0) {
    throw FormatError("sample file: bad header '" + line + "'");
  }
  ErrorSampleSet s;
  s.dim = static_cast<Eigen::Index>(dim);
  s.samples.reserve(static_cast<std::size_t>(n));
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Vector v(s.dim);
    std::istringstream row(line);
    std::string cell;
    Eigen::Index j = 0;
    while (std::getline(row, cell, ',')) {
      if (j >= s.dim) throw FormatError("sample file: row has more than dim values");
      try {
        std::size_t pos = 0;
        v[j] = std::stod(cell, &pos);
        if (pos != cell.size()) throw FormatError("");
      } catch (const std::exception&) {
        throw FormatError("sample file: bad number '" + cell + "'");
      }
      ++j;
    }
    if (j != s.dim) throw FormatError("sample file: row has fewer than dim values");
    s.samples.push_back(std::move(v));
  }
  if (static_cast<long long>(s.samples.size()) != n) throw FormatError("sample file: row count != header n");
  s.validate();
  return s;
}

void write_samples(const std::filesystem::path& path, const ErrorSampleSet& s) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  write_samples(os, s);
}

ErrorSampleSet read_samples(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open '" + path.string() + "'");
  return read_samples(is);
}

}  // namespace vaevar
