// End-to-end acceptance checks. One PASS/FAIL line per criterion; nonzero exit if any fails.

#include "oracles.hpp"

#include "vaevar/assimilation.hpp"
#include "vaevar/cost.hpp"
#include "vaevar/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

using namespace vaevar;
using namespace vaevar::testing;

namespace {

int g_threads = 1;
int g_failures = 0;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void report(int id, bool ok, const std::string& what, const std::string& detail, double secs) {
  std::printf("%s %d %s: %s (%.1f s)\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str(), secs);
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

void note(const std::string& s) {
  std::printf("  %s\n", s.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- 1
struct GradCheck {
  std::string name;
  double tol;
  double worst = 0.0;
  int count = 0;
  void add(double e) {
    worst = std::max(worst, e);
    ++count;
  }
  bool ok() const { return count >= 20 && worst < tol; }
};

ObservationBatch batch_of(const std::vector<std::pair<int, Vector>>& w, double r_std) {
  ObservationBatch b;
  for (const auto& [t, y] : w) b.windows.push_back({t, y});
  b.r_std = r_std;
  b.noise_std = r_std;
  return b;
}

Vector flatten(const nn::MlpParams& p) {
  std::vector<double> all;
  for (auto t : p.tensors()) all.insert(all.end(), t.begin(), t.end());
  return Eigen::Map<Vector>(all.data(), static_cast<Eigen::Index>(all.size()));
}

nn::MlpParams unflatten(nn::MlpParams p, const Vector& v) {
  Eigen::Index k = 0;
  for (auto t : p.tensors()) {
    for (double& x : t) x = v[k++];
  }
  return p;
}

void criterion_gradients() {
  const Stopwatch sw;
  Rng rng(101);
  auto l63 = std::make_shared<const DynamicalSystem>(Lorenz63Params{11.0, 28.0, 8.0 / 3.0});
  auto p96 = Lorenz96Params::uniform(20, 8.0);
  p96.forcing[0] = 13.0;
  auto l96 = std::make_shared<const DynamicalSystem>(p96);
  const Nonlinearity nls[] = {Nonlinearity::Identity, Nonlinearity::Absolute, Nonlinearity::Saturated};

  std::vector<GradCheck> checks{{"mlp_input", 1e-6}, {"mlp_params", 1e-6}, {"obs_3d", 1e-6}, {"obs_4d", 1e-5},
                                {"bg_trad", 1e-6},   {"bg_vae", 1e-4},     {"total_trad", 1e-4}, {"total_vae", 1e-4}};
  for (int t = 0; t < 24; ++t) {
    const nn::MlpParams p = random_mlp(rng, {3, 8, 8, 3});
    const Vector z = random_vector(rng, 3);
    checks[0].add(rel_error(nn::mlp_input_jacobian(p, z),
                            fd_jacobian([&](const Vector& s) { return nn::mlp_forward(p, s); }, z)));
    const Vector g = random_vector(rng, 3);
    const Vector fdp = fd_gradient([&](const Vector& th) { return g.dot(nn::mlp_forward(unflatten(p, th), z)); },
                                   flatten(p));
    checks[1].add(rel_error(flatten(nn::mlp_backward(p, z, g).params), fdp));

    const Nonlinearity nl = nls[t % 3];
    const ObservationOperator h3(random_mask(rng, 3), nl);
    Vector x = random_vector(rng, 3, 3.0);
    for (auto& v : x) {
      if (std::abs(v) < 1e-3) v = 0.5;
    }
    const Vector y3 = random_vector(rng, h3.obs_dim());
    checks[2].add(rel_error(obs_term_3d(x, h3, y3, 0.3).gradient,
                            fd_gradient([&](const Vector& s) { return obs_term_3d(s, h3, y3, 0.3).value; }, x)));

    const DynamicalSystem& sys = t % 2 ? *l96 : *l63;
    const ObservationOperator h4(random_mask(rng, sys.dim()), t % 4 < 2 ? Nonlinearity::Identity : Nonlinearity::Saturated);
    const Vector x4 = random_vector(rng, sys.dim(), 3.0);
    const ObservationBatch b4 =
        batch_of({{0, random_vector(rng, h4.obs_dim())}, {2, random_vector(rng, h4.obs_dim())}}, 0.3);
    checks[3].add(rel_error(obs_term_4d(x4, h4, b4, sys, 0.01).gradient,
                            fd_gradient([&](const Vector& s) { return obs_term_4d(s, h4, b4, sys, 0.01).value; }, x4)));

    const Vector zt = random_vector(rng, 5);
    checks[4].add(rel_error(bg_term_traditional(zt).gradient,
                            fd_gradient([](const Vector& s) { return bg_term_traditional(s).value; }, zt)));

    const nn::MlpParams dec = random_mlp(rng, {3, 8, 8, 3}, 0.6);
    checks[5].add(rel_error(bg_term_vae(z, dec, 1e-2).gradient,
                            fd_gradient([&](const Vector& s) { return bg_term_vae(s, dec, 1e-2, false).value; }, z, 1e-4)));

    const std::vector<int> window = t % 2 ? std::vector<int>{0, 2} : std::vector<int>{0};
    std::vector<std::pair<int, Vector>> w;
    for (int ti : window) w.emplace_back(ti, random_vector(rng, h3.obs_dim()));
    const CostSpec trad{TraditionalControl{0.5 * random_matrix(rng, 3, 3)}, random_vector(rng, 3, 3.0), h3,
                        batch_of(w, 0.3), l63, 0.01};
    const Vector ct = random_vector(rng, 3);
    checks[6].add(rel_error(total_cost(ct, trad).gradient,
                            fd_gradient([&](const Vector& s) { return total_cost(s, trad).total; }, ct)));
    const CostSpec vae{VaeControl{std::make_shared<const nn::MlpParams>(dec), 1e-2, {}}, trad.x_b, h3, trad.batch, l63,
                       0.01};
    checks[7].add(rel_error(total_cost(z, vae).gradient,
                            fd_gradient([&](const Vector& s) { return total_cost(s, vae).total; }, z, 1e-4)));
  }
  bool ok = sw.seconds() < 60.0;
  std::string detail;
  for (const auto& c : checks) {
    ok = ok && c.ok();
    detail += c.name + " " + fmt("%.1e", c.worst) + "/" + fmt("%.0e", c.tol) + " ";
  }
  detail += "(24 instances each)";
  report(1, ok, "gradient suite", detail, sw.seconds());
}

// ---------------------------------------------------------------- 2, 3
struct LinearInstance {
  BackgroundCovariance cov;
  StateVector x_b;
  ObservationOperator op;
  ObservationBatch batch;
};

std::vector<LinearInstance> l63_instances(bool full_mask) {
  const ExperimentConfig cfg = preset("l63_sigma");
  const TwinModelPair pair{cfg.system.truth(), cfg.system.prediction(), cfg.integrator};
  const BackgroundCovariance cov = estimate_covariance(generate_error_samples(pair, 1000, 7));
  const auto masks = all_masks(SystemFamily::Lorenz63);
  std::vector<LinearInstance> out;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const ValidationCase vc = make_validation_case(pair, 11, i);
    const std::string mask = full_mask ? "XYZ" : masks[i % masks.size()];
    const ObservationOperator op(parse_mask(mask, SystemFamily::Lorenz63, 3));
    const double sigma = 0.1 + 0.1 * static_cast<double>(i % 5);
    out.push_back({cov, vc.x_b, op, simulate_observations(pair, vc.x_gt, op, {0}, sigma, 1000 + i)});
  }
  return out;
}

AssimilationOptions tight() {
  AssimilationOptions o;
  o.lbfgs.grad_tol = 1e-10;
  o.lbfgs.max_iters = 500;
  return o;
}

void criterion_linear_decoder() {
  const Stopwatch sw;
  double worst = 0.0;
  for (const LinearInstance& li : l63_instances(false)) {
    const Matrix L = li.cov.control_transform();
    const CostSpec trad{TraditionalControl{L}, li.x_b, li.op, li.batch, nullptr, 0.01};
    const CostSpec vae{VaeControl{std::make_shared<const nn::MlpParams>(linear_decoder(L)), 1e-2, {}}, li.x_b, li.op,
                       li.batch, nullptr, 0.01};
    const Vector a = assimilate_traditional(trad, tight()).x_a;
    const Vector b = assimilate_vae(vae, tight()).x_a;
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  report(2, worst < 1e-5, "linear-decoder equivalence", "max |x_a diff| " + fmt("%.2e", worst) + " < 1e-5 over 100 cases",
         sw.seconds());
}

void criterion_kalman() {
  const Stopwatch sw;
  double worst = 0.0;
  for (bool full : {true, false}) {
    for (const LinearInstance& li : l63_instances(full)) {
      const Matrix B = li.cov.regularized();
      const Matrix H = li.op.jacobian(li.x_b);
      const Vector y = li.batch.windows.front().y;
      const double r2 = li.batch.r_std * li.batch.r_std;
      const Matrix S = H * B * H.transpose() + r2 * Matrix::Identity(H.rows(), H.rows());
      const Vector oracle = li.x_b + B * H.transpose() * S.llt().solve(y - H * li.x_b);
      const CostSpec spec{TraditionalControl{li.cov.control_transform()}, li.x_b, li.op, li.batch, nullptr, 0.01};
      worst = std::max(worst, (assimilate_traditional(spec, tight()).x_a - oracle).cwiseAbs().maxCoeff());
    }
  }
  report(3, worst < 1e-6, "Kalman oracle", "max |x_a - closed form| " + fmt("%.2e", worst) + " < 1e-6 over 200 cases",
         sw.seconds());
}

// ---------------------------------------------------------------- 4, 5, 8
using CellKey = std::tuple<std::string, double, Method>;

struct CellStats {
  double rmse_sum = 0.0;
  double imp_sum = 0.0;
  int n = 0;
  int imp_n = 0;
  double rmse() const { return rmse_sum / n; }
  double imp() const { return imp_sum / imp_n; }
};

std::map<CellKey, CellStats> cells(const std::vector<MetricRow>& rows) {
  std::map<CellKey, CellStats> out;
  for (const MetricRow& r : rows) {
    CellStats& c = out[{r.mask, r.sigma_noise, r.method}];
    c.rmse_sum += r.rmse_method;
    ++c.n;
    if (r.imp) {
      c.imp_sum += *r.imp;
      ++c.imp_n;
    }
  }
  return out;
}

void criteria_lorenz63() {
  const Stopwatch sw;
  ExperimentConfig cfg = preset("l63_sigma");
  cfg.masks = {"XYZ", "XY", "XZ", "YZ", "X", "Y"};
  cfg.nonlinearity = Nonlinearity::Identity;
  cfg.sigma_noise = {0.3, 0.5};
  cfg.n_val = 1000;
  cfg.repeats = 3;
  cfg.methods = {Method::Traditional, Method::Vae, Method::VaeObsOnly, Method::VaeObsReg};
  cfg.threads = g_threads;
  const ExperimentContext ctx = prepare_experiment(cfg);

  double worst_kurt = 0.0;
  for (Eigen::Index j = 0; j < 3; ++j) worst_kurt = std::max(worst_kurt, std::abs(excess_kurtosis(ctx.samples.samples, j)));
  report(8, worst_kurt > 0.5, "non-Gaussian error samples",
         "max |excess kurtosis| " + fmt("%.3f", worst_kurt) + " > 0.5 over " + std::to_string(ctx.samples.size()) +
             " samples",
         sw.seconds());

  const Stopwatch sw4;
  const ExperimentResult res = run_experiment(cfg, ctx);
  const auto stats = cells(res.rows);
  bool ok4 = res.failed_trials == 0;
  double min_imp = 1e300;
  for (const std::string& m : cfg.masks) {
    for (double s : cfg.sigma_noise) {
      const CellStats& c = stats.at({m, s, Method::Vae});
      const bool cell_ok = c.imp_n == cfg.repeats && c.imp() > 0.0;
      ok4 = ok4 && cell_ok;
      min_imp = std::min(min_imp, c.imp_n > 0 ? c.imp() : -1e300);
      note("mask " + m + " sigma " + fmt("%.1f", s) + ": Imp " + (c.imp_n ? fmt("%.4f", c.imp()) : "absent") +
           " rmse trad " + fmt("%.4f", stats.at({m, s, Method::Traditional}).rmse()) + " vae " + fmt("%.4f", c.rmse()));
    }
  }
  report(4, ok4, "Lorenz 63 trend", "min cell mean Imp " + fmt("%.4f", min_imp) + " > 0 over 12 cells", sw4.seconds());

  // Criterion 5 is stated on the benchmark mean at sigma 0.5; per-mask values are listed too.
  double obs = 0.0, reg = 0.0, full = 0.0;
  int cells_ordered = 0;
  for (const std::string& m : cfg.masks) {
    const double o = stats.at({m, 0.5, Method::VaeObsOnly}).rmse();
    const double r = stats.at({m, 0.5, Method::VaeObsReg}).rmse();
    const double f = stats.at({m, 0.5, Method::Vae}).rmse();
    obs += o / static_cast<double>(cfg.masks.size());
    reg += r / static_cast<double>(cfg.masks.size());
    full += f / static_cast<double>(cfg.masks.size());
    const bool ordered = o >= r && r >= f;
    cells_ordered += ordered ? 1 : 0;
    note("mask " + m + " sigma 0.5: obs-only " + fmt("%.6f", o) + " obs+reg " + fmt("%.6f", r) + " full " +
         fmt("%.6f", f) + (ordered ? "" : "  (obs+reg < full by " + fmt("%.1e", f - r) + ")"));
  }
  const double gain = (obs - full) / obs;
  const bool ok5 = obs >= reg && reg >= full && gain > 0.05;
  report(5, ok5, "ablation ordering",
         "mean rmse obs-only " + fmt("%.6f", obs) + " >= obs+reg " + fmt("%.6f", reg) + " >= full " + fmt("%.6f", full) +
             ", full gain " + fmt("%.1f", 100 * gain) + "% > 5%; ordered in " + std::to_string(cells_ordered) + "/" +
             std::to_string(cfg.masks.size()) + " masks",
         0.0);
}

// ---------------------------------------------------------------- 6, 7
void criteria_lorenz96() {
  const Stopwatch sw;
  ExperimentConfig base = preset("l96_F");
  base.n_val = 200;
  base.repeats = 3;
  base.methods = {Method::Traditional, Method::Vae};
  base.threads = g_threads;
  const ExperimentContext ctx = prepare_experiment(base);
  note("Lorenz 96 model trained in " + fmt("%.1f", sw.seconds()) + " s");

  const Stopwatch sw6;
  ExperimentConfig c6 = base;
  c6.nonlinearity = Nonlinearity::Saturated;
  c6.masks = {"all"};
  c6.sigma_noise = {0.3, 0.5};
  const auto s6 = cells(run_experiment(c6, ctx).rows);
  bool ok6 = true;
  std::string d6;
  for (double s : c6.sigma_noise) {
    const double t = s6.at({"all", s, Method::Traditional}).rmse();
    const double v = s6.at({"all", s, Method::Vae}).rmse();
    ok6 = ok6 && v < t;
    d6 += "sigma " + fmt("%.1f", s) + ": vae " + fmt("%.4f", v) + " < trad " + fmt("%.4f", t) + "; ";
  }
  report(6, ok6, "Lorenz 96 saturated operator", d6 + "full mask", sw6.seconds());

  const Stopwatch sw7;
  ExperimentConfig c7 = base;
  c7.nonlinearity = Nonlinearity::Identity;
  c7.window = {0, 2};
  c7.sigma_noise = {0.3};
  c7.masks = {"x1x2x3", "x1x2", "x1"};
  const auto s7 = cells(run_experiment(c7, ctx).rows);
  bool ok7 = true;
  std::string d7;
  for (const std::string& m : c7.masks) {
    const CellStats& c = s7.at({m, 0.3, Method::Vae});
    const bool cell_ok = c.imp_n == c7.repeats && c.imp() > 0.0;
    ok7 = ok7 && cell_ok;
    d7 += m + " Imp " + (c.imp_n ? fmt("%.3f", c.imp()) : std::string("absent")) + "; ";
  }
  report(7, ok7, "4D window trend", d7 + "window [0,2]", sw7.seconds());
}

// ---------------------------------------------------------------- 9
std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void criterion_reproducibility() {
  const Stopwatch sw;
  const auto dir = std::filesystem::temp_directory_path() / "vaevar_acceptance_repro";
  std::filesystem::create_directories(dir);
  const std::string args = " experiment -q --preset l63_sigma --seed 424242 --n-train 1000 --n-val 100 --epochs 60"
                           " --masks XYZ,XY,X --sigma-noise 0.2,0.4 --repeats 2 --threads " +
                           std::to_string(g_threads);
  int rc = 0;
  for (const char* name : {"a.csv", "b.csv"}) {
    const std::string cmd = std::string(VAEVAR_CLI_PATH) + args + " --out " + (dir / name).string();
    rc |= std::system(cmd.c_str());
  }
  const std::string a = slurp(dir / "a.csv"), b = slurp(dir / "b.csv");
  const bool ok = rc == 0 && !a.empty() && a == b;
  report(9, ok, "reproducibility",
         std::string(a == b ? "byte-identical" : "different") + " metrics CSV (" + std::to_string(a.size()) + " bytes)",
         sw.seconds());
  std::filesystem::remove_all(dir);
}

template <typename F>
void guarded(const char* ids, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    std::printf("FAIL %s aborted: %s\n", ids, e.what());
    ++g_failures;
  }
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--threads" && i + 1 < argc) {
      g_threads = std::max(1, std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--threads N]\n", argv[0]);
      return 2;
    }
  }
  const Stopwatch total;
  guarded("1", criterion_gradients);
  guarded("2", criterion_linear_decoder);
  guarded("3", criterion_kalman);
  guarded("4 5 8", criteria_lorenz63);
  guarded("6 7", criteria_lorenz96);
  guarded("9", criterion_reproducibility);
  std::printf("%d failed, total %.1f s\n", g_failures, total.seconds());
  return g_failures == 0 ? 0 : 1;
}
