#include "vaevar/harness.hpp"

#include "vaevar/parallel.hpp"
#include "vaevar/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

namespace vaevar {

using nlohmann::json;

double rmse(const StateVector& a, const StateVector& b) {
  require_dim(b.size(), a.size(), "rmse");
  if (a.size() == 0) throw DimensionError("rmse: empty vectors");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

std::optional<double> imp_metric(double r_bg, double r_vae, double r_trad, double floor) {
  if (std::abs(r_bg - r_trad) < floor) return std::nullopt;
  if (r_trad > r_bg || r_vae > r_bg) return 0.0;
  return (r_bg - r_vae) / (r_bg - r_trad) - 1.0;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::Traditional: return "trad";
    case Method::Vae: return "vae";
    case Method::VaeObsOnly: return "vae_obs";
    case Method::VaeObsReg: return "vae_obs_reg";
    case Method::Naive: return "naive";
  }
  return "trad";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::Traditional, Method::Vae, Method::VaeObsOnly, Method::VaeObsReg, Method::Naive}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown method '" + s + "' (expected trad, vae, vae_obs, vae_obs_reg, naive)");
}

DynamicalSystem SystemConfig::truth() const {
  if (family == SystemFamily::Lorenz63) return DynamicalSystem(truth63);
  return DynamicalSystem(Lorenz96Params::uniform(dim96, forcing96));
}

DynamicalSystem SystemConfig::prediction() const {
  if (family == SystemFamily::Lorenz63) return DynamicalSystem(prediction63);
  Lorenz96Params p = Lorenz96Params::uniform(dim96, forcing96);
  p.forcing[0] = prediction_forcing1;
  return DynamicalSystem(std::move(p));
}

std::vector<double> full_noise_grid() {
  std::vector<double> g;
  for (int i = 10; i <= 50; ++i) g.push_back(i / 100.0);
  return g;
}

std::vector<std::string> all_masks(SystemFamily family) {
  if (family == SystemFamily::Lorenz63) return {"XYZ", "XY", "XZ", "YZ", "X", "Y", "Z"};
  return {"x1x2x3", "x1x2", "x1x3", "x2x3", "x1", "x2", "x3"};
}

std::vector<bool> parse_mask(const std::string& name, SystemFamily family, Eigen::Index dim) {
  std::vector<bool> mask(static_cast<std::size_t>(dim), false);
  if (name == "all") {
    std::fill(mask.begin(), mask.end(), true);
    return mask;
  }
  if (family == SystemFamily::Lorenz63) {
    for (char c : name) {
      const auto idx = std::string("XYZ").find(c);
      if (idx == std::string::npos) throw ConfigError("bad Lorenz 63 mask '" + name + "' (use letters X, Y, Z)");
      mask[idx] = true;
    }
  } else {
    std::size_t pos = 0;
    while (pos < name.size()) {
      if (name[pos] != 'x') throw ConfigError("bad Lorenz 96 mask '" + name + "' (use x1x2... or all)");
      std::size_t end = pos + 1;
      while (end < name.size() && std::isdigit(static_cast<unsigned char>(name[end]))) ++end;
      if (end == pos + 1) throw ConfigError("bad Lorenz 96 mask '" + name + "'");
      const long idx = std::stol(name.substr(pos + 1, end - pos - 1));
      if (idx < 1 || idx > dim) throw ConfigError("Lorenz 96 mask index out of range in '" + name + "'");
      mask[static_cast<std::size_t>(idx - 1)] = true;
      pos = end;
    }
  }
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw ConfigError("mask '" + name + "' observes nothing");
  }
  return mask;
}

void ExperimentConfig::validate() const {
  integrator.validate();
  if (n_train < 2 || n_val < 1) throw ConfigError("n_train must be >= 2 and n_val >= 1");
  if (masks.empty()) throw ConfigError("at least one mask is required");
  for (const auto& m : masks) parse_mask(m, system.family, system.dim());
  if (sigma_noise.empty()) throw ConfigError("sigma_noise grid is empty");
  for (double s : sigma_noise) {
    if (!(s >= 0.0)) throw ConfigError("sigma_noise values must be non-negative");
  }
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (window.empty() || window.front() != 0) throw ConfigError("window must start at 0");
  for (std::size_t i = 1; i < window.size(); ++i) {
    if (window[i] <= window[i - 1]) throw ConfigError("window must be strictly increasing");
  }
  if (methods.empty()) throw ConfigError("no methods selected");
  const bool has_naive = std::find(methods.begin(), methods.end(), Method::Naive) != methods.end();
  if (has_naive && nonlinearity != Nonlinearity::Identity) {
    throw ConfigError("the naive substitute needs the identity observation operator");
  }
  if (has_naive && window.size() > 1) throw ConfigError("the naive substitute is 3D only");
  vae.adamw.validate();
  if (!(vae.sigma0 > 0.0) || !(vae.epsilon > 0.0)) throw ConfigError("vae.sigma0 and vae.epsilon must be positive");
  if (vae.h1 < 1 || vae.h2 < 1 || vae.latent < 1) throw ConfigError("vae layer sizes must be >= 1");
  lbfgs.validate();
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (!(imp_floor_rel >= 0.0)) throw ConfigError("imp_floor_rel must be non-negative");
  system.truth();
  system.prediction();
}

std::vector<std::string> preset_names() { return {"l63_sigma", "l63_rho", "l96_F"}; }

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.scenario = name;
  if (name == "l63_sigma") {
    c.system.family = SystemFamily::Lorenz63;
    c.system.prediction63 = {11.0, 28.0, 8.0 / 3.0};
    c.vae = {8, 8, 3, 0.3, {}, 1e-2};
    c.vae.adamw.epochs = 300;
  } else if (name == "l63_rho") {
    c.system.family = SystemFamily::Lorenz63;
    c.system.prediction63 = {10.0, 29.0, 8.0 / 3.0};
    c.vae = {10, 10, 5, 0.2, {}, 1e-5};
    c.vae.adamw.epochs = 300;
  } else if (name == "l96_F") {
    c.system.family = SystemFamily::Lorenz96;
    c.system.dim96 = 20;
    c.system.forcing96 = 8.0;
    c.system.prediction_forcing1 = 13.0;
    c.vae = {35, 35, 15, 0.1, {}, 1e-2};
    c.vae.adamw.epochs = 1000;
    c.masks = {"x1x2x3", "x1x2", "x1"};
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected l63_sigma, l63_rho, l96_F)");
  }
  c.vae.adamw.learning_rate = 1e-3;
  c.vae.adamw.batch_size = 32;
  return c;
}

// ---- config (de)serialization -------------------------------------------------

namespace {

json l63_json(const Lorenz63Params& p) { return {{"sigma", p.sigma}, {"rho", p.rho}, {"beta", p.beta}}; }

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw ConfigError("unknown config key '" + where + it.key() + "'");
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void apply_l63(Lorenz63Params& p, const json& j, const std::string& where) {
  check_keys(j, {"sigma", "rho", "beta"}, where);
  get_if(j, "sigma", p.sigma);
  get_if(j, "rho", p.rho);
  get_if(j, "beta", p.beta);
}

}  // namespace

void to_json(json& j, const ExperimentConfig& c) {
  json sys;
  sys["family"] = c.system.family == SystemFamily::Lorenz63 ? "lorenz63" : "lorenz96";
  if (c.system.family == SystemFamily::Lorenz63) {
    sys["truth"] = l63_json(c.system.truth63);
    sys["prediction"] = l63_json(c.system.prediction63);
  } else {
    sys["dim"] = c.system.dim96;
    sys["forcing"] = c.system.forcing96;
    sys["prediction_forcing1"] = c.system.prediction_forcing1;
  }
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(to_string(m));
  const auto& a = c.vae.adamw;
  j = json{
      {"scenario", c.scenario},
      {"system", sys},
      {"integrator", {{"step_size", c.integrator.step_size}, {"n_steps", c.integrator.n_steps}}},
      {"n_train", c.n_train},
      {"n_val", c.n_val},
      {"masks", c.masks},
      {"nonlinearity", to_string(c.nonlinearity)},
      {"sigma_noise", c.sigma_noise},
      {"repeats", c.repeats},
      {"window", c.window},
      {"methods", methods},
      {"vae",
       {{"h1", c.vae.h1},
        {"h2", c.vae.h2},
        {"latent", c.vae.latent},
        {"sigma0", c.vae.sigma0},
        {"epsilon", c.vae.epsilon},
        {"learning_rate", a.learning_rate},
        {"beta1", a.beta1},
        {"beta2", a.beta2},
        {"eps", a.eps},
        {"weight_decay", a.weight_decay},
        {"batch_size", a.batch_size},
        {"epochs", a.epochs}}},
      {"lbfgs",
       {{"memory", c.lbfgs.memory},
        {"max_iters", c.lbfgs.max_iters},
        {"grad_tol", c.lbfgs.grad_tol},
        {"wolfe_c1", c.lbfgs.wolfe_c1},
        {"wolfe_c2", c.lbfgs.wolfe_c2},
        {"max_line_search_steps", c.lbfgs.max_line_search_steps}}},
      {"seed", c.seed},
      {"threads", c.threads},
      {"truth_full_horizon", c.truth_full_horizon},
      {"model_path", c.model_path},
      {"imp_floor_rel", c.imp_floor_rel},
      {"observations_path", c.observations_path},
  };
}

void apply_json(ExperimentConfig& c, const json& j) {
  try {
    check_keys(j,
               {"preset", "scenario", "system", "integrator", "n_train", "n_val", "masks", "nonlinearity",
                "sigma_noise", "repeats", "window", "methods", "vae", "lbfgs", "seed", "threads",
                "truth_full_horizon", "model_path", "imp_floor_rel", "observations_path"},
               "");
    get_if(j, "scenario", c.scenario);
    if (j.contains("system")) {
      const json& s = j.at("system");
      check_keys(s, {"family", "truth", "prediction", "dim", "forcing", "prediction_forcing1"}, "system.");
      if (s.contains("family")) {
        const auto f = s.at("family").get<std::string>();
        if (f == "lorenz63") {
          c.system.family = SystemFamily::Lorenz63;
        } else if (f == "lorenz96") {
          c.system.family = SystemFamily::Lorenz96;
        } else {
          throw ConfigError("system.family must be lorenz63 or lorenz96");
        }
      }
      if (s.contains("truth")) apply_l63(c.system.truth63, s.at("truth"), "system.truth.");
      if (s.contains("prediction")) apply_l63(c.system.prediction63, s.at("prediction"), "system.prediction.");
      get_if(s, "dim", c.system.dim96);
      get_if(s, "forcing", c.system.forcing96);
      get_if(s, "prediction_forcing1", c.system.prediction_forcing1);
    }
    if (j.contains("integrator")) {
      const json& s = j.at("integrator");
      check_keys(s, {"step_size", "n_steps"}, "integrator.");
      get_if(s, "step_size", c.integrator.step_size);
      get_if(s, "n_steps", c.integrator.n_steps);
    }
    get_if(j, "n_train", c.n_train);
    get_if(j, "n_val", c.n_val);
    if (j.contains("masks")) {
      const json& m = j.at("masks");
      if (m.is_string() && m.get<std::string>() == "all7") {
        c.masks = all_masks(c.system.family);
      } else {
        c.masks = m.get<std::vector<std::string>>();
      }
    }
    if (j.contains("nonlinearity")) c.nonlinearity = nonlinearity_from_string(j.at("nonlinearity").get<std::string>());
    if (j.contains("sigma_noise")) {
      const json& g = j.at("sigma_noise");
      if (g.is_string() && g.get<std::string>() == "full") {
        c.sigma_noise = full_noise_grid();
      } else {
        c.sigma_noise = g.get<std::vector<double>>();
      }
    }
    get_if(j, "repeats", c.repeats);
    get_if(j, "window", c.window);
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods").get<std::vector<std::string>>()) c.methods.push_back(method_from_string(m));
    }
    if (j.contains("vae")) {
      const json& v = j.at("vae");
      check_keys(v,
                 {"h1", "h2", "latent", "sigma0", "epsilon", "learning_rate", "beta1", "beta2", "eps",
                  "weight_decay", "batch_size", "epochs"},
                 "vae.");
      get_if(v, "h1", c.vae.h1);
      get_if(v, "h2", c.vae.h2);
      get_if(v, "latent", c.vae.latent);
      get_if(v, "sigma0", c.vae.sigma0);
      get_if(v, "epsilon", c.vae.epsilon);
      get_if(v, "learning_rate", c.vae.adamw.learning_rate);
      get_if(v, "beta1", c.vae.adamw.beta1);
      get_if(v, "beta2", c.vae.adamw.beta2);
      get_if(v, "eps", c.vae.adamw.eps);
      get_if(v, "weight_decay", c.vae.adamw.weight_decay);
      get_if(v, "batch_size", c.vae.adamw.batch_size);
      get_if(v, "epochs", c.vae.adamw.epochs);
    }
    if (j.contains("lbfgs")) {
      const json& l = j.at("lbfgs");
      check_keys(l, {"memory", "max_iters", "grad_tol", "wolfe_c1", "wolfe_c2", "max_line_search_steps"}, "lbfgs.");
      get_if(l, "memory", c.lbfgs.memory);
      get_if(l, "max_iters", c.lbfgs.max_iters);
      get_if(l, "grad_tol", c.lbfgs.grad_tol);
      get_if(l, "wolfe_c1", c.lbfgs.wolfe_c1);
      get_if(l, "wolfe_c2", c.lbfgs.wolfe_c2);
      get_if(l, "max_line_search_steps", c.lbfgs.max_line_search_steps);
    }
    get_if(j, "seed", c.seed);
    get_if(j, "threads", c.threads);
    get_if(j, "truth_full_horizon", c.truth_full_horizon);
    get_if(j, "model_path", c.model_path);
    get_if(j, "imp_floor_rel", c.imp_floor_rel);
    get_if(j, "observations_path", c.observations_path);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

// ---- metrics output ---------------------------------------------------------------

namespace {

std::string num(double v, const char* f = "%.10g") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << "method,mask,nonlin,sigma_noise,repeat,rmse_bg,rmse,imp\n";
  for (const auto& r : rows) {
    os << to_string(r.method) << ',' << r.mask << ',' << to_string(r.nonlinearity) << ',' << num(r.sigma_noise, "%.6g")
       << ',' << r.repeat << ',' << num(r.rmse_bg) << ',' << num(r.rmse_method) << ',';
    if (r.imp) os << num(*r.imp);
    os << '\n';
  }
}

std::vector<SummaryRow> summarize(const std::vector<MetricRow>& rows) {
  std::vector<SummaryRow> out;
  std::map<std::tuple<std::string, std::string, double, int>, std::size_t> index;
  std::vector<std::vector<const MetricRow*>> groups;
  for (const auto& r : rows) {
    const auto key = std::make_tuple(r.mask, to_string(r.method), r.sigma_noise, static_cast<int>(r.nonlinearity));
    auto [it, inserted] = index.try_emplace(key, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(&r);
  }
  auto mean_std = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    s = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
    return std::make_pair(m, s);
  };
  for (const auto& g : groups) {
    SummaryRow s;
    s.method = g.front()->method;
    s.mask = g.front()->mask;
    s.nonlinearity = g.front()->nonlinearity;
    s.sigma_noise = g.front()->sigma_noise;
    std::vector<double> bg, rm, imp;
    for (const MetricRow* r : g) {
      bg.push_back(r->rmse_bg);
      rm.push_back(r->rmse_method);
      if (r->imp) imp.push_back(*r->imp);
    }
    s.rmse_bg_mean = mean_std(bg).first;
    std::tie(s.rmse_mean, s.rmse_std) = mean_std(rm);
    s.imp_count = static_cast<int>(imp.size());
    if (!imp.empty()) {
      const auto [m, sd] = mean_std(imp);
      s.imp_mean = m;
      s.imp_std = sd;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "method,mask,nonlin,sigma_noise,rmse_bg_mean,rmse_mean,rmse_std,imp_mean,imp_std,imp_count\n";
  for (const auto& r : rows) {
    os << to_string(r.method) << ',' << r.mask << ',' << to_string(r.nonlinearity) << ',' << num(r.sigma_noise, "%.6g")
       << ',' << num(r.rmse_bg_mean) << ',' << num(r.rmse_mean) << ',' << num(r.rmse_std) << ',';
    if (r.imp_mean) os << num(*r.imp_mean);
    os << ',';
    if (r.imp_std) os << num(*r.imp_std);
    os << ',' << r.imp_count << '\n';
  }
}

// ---- experiment ---------------------------------------------------------------------

ValidationCase make_validation_case(const TwinModelPair& pair, std::uint64_t seed, std::uint64_t index) {
  const double h = pair.integrator.step_size;
  const int tau = pair.integrator.n_steps;
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    try {
      const StateVector x0 = initial_state(pair.truth.dim(), seed, index, attempt);
      const StateVector warm = propagate(pair.truth, x0, h, tau);
      return {propagate(pair.truth, warm, h, tau), propagate(pair.prediction, warm, h, tau)};
    } catch (const IntegrationDiverged&) {
    }
  }
  throw IntegrationDiverged("validation case " + std::to_string(index) + " diverged on every draw");
}

ExperimentContext prepare_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentContext ctx{TwinModelPair{cfg.system.truth(), cfg.system.prediction(), cfg.integrator}, {}, {}, {}, {},
                        0, nullptr, nullptr};
  SampleGenerationOptions opts;
  opts.truth_full_horizon = cfg.truth_full_horizon;
  opts.threads = cfg.threads;
  SampleGenerationReport report;
  ctx.samples = generate_error_samples(ctx.pair, cfg.n_train, cfg.seed, opts, &report);
  ctx.samples_resampled = report.resampled;
  ctx.covariance = estimate_covariance(ctx.samples);
  if (!cfg.model_path.empty()) {
    ctx.model = load_model(cfg.model_path, cfg.system.dim());
  } else {
    VaeShape shape{cfg.system.dim(), cfg.vae.h1, cfg.vae.h2, cfg.vae.latent};
    TrainResult tr = train_vae(ctx.samples, shape, cfg.vae.adamw, cfg.vae.sigma0, derive_seed(cfg.seed, {0x7a3ULL}));
    ctx.model = std::move(tr.model);
    ctx.loss_trace = std::move(tr.trace);
  }
  ctx.decoder = std::make_shared<const nn::MlpParams>(ctx.model.decoder);
  ctx.forecast_model = std::make_shared<const DynamicalSystem>(ctx.pair.prediction);
  return ctx;
}

CostSpec make_cost_spec(Method method, const ExperimentConfig& cfg, const ExperimentContext& ctx,
                        const StateVector& x_b, const ObservationOperator& op, ObservationBatch batch) {
  CostSpec spec{TraditionalControl{ctx.covariance.control_transform()}, x_b, op, std::move(batch),
                ctx.forecast_model, cfg.integrator.step_size};
  if (method != Method::Traditional) {
    VaeControl v{ctx.decoder, cfg.vae.epsilon, {}};
    if (method == Method::VaeObsOnly) v.ablation = {false, false};
    if (method == Method::VaeObsReg) v.ablation = {true, false};
    spec.control = std::move(v);
  }
  return spec;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ProgressFn& progress) {
  if (progress) progress("preparing: error samples, covariance, VAE");
  const ExperimentContext ctx = prepare_experiment(cfg);
  return run_experiment(cfg, ctx, progress);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentContext& ctx, const ProgressFn& progress) {
  cfg.validate();
  const std::size_t n_val = cfg.n_val;
  const std::size_t n_methods = cfg.methods.size();

  // Each repeat draws fresh validation states; masks and noise levels share them.
  const std::size_t n_rep = static_cast<std::size_t>(cfg.repeats);
  std::vector<ValidationCase> all_cases(n_val * n_rep);
  parallel_for(all_cases.size(), cfg.threads, [&](std::size_t i) {
    all_cases[i] = make_validation_case(ctx.pair, cfg.seed, cfg.n_train + i);
  });

  AssimilationOptions aopts;
  aopts.lbfgs = cfg.lbfgs;

  std::ofstream obs_out;
  if (!cfg.observations_path.empty()) {
    obs_out.open(cfg.observations_path, std::ios::trunc);
    if (!obs_out) throw ConfigError("cannot open observations file '" + cfg.observations_path + "'");
    obs_out << "trial,window_index,time_index,coord,value\n";
  }

  ExperimentResult result;
  std::vector<std::size_t> flagged(n_methods, 0);
  std::size_t epsilon_doublings = 0;
  std::size_t trial_counter = 0;
  const bool has_trad = std::find(cfg.methods.begin(), cfg.methods.end(), Method::Traditional) != cfg.methods.end();

  for (std::size_t mi = 0; mi < cfg.masks.size(); ++mi) {
    const ObservationOperator op(parse_mask(cfg.masks[mi], cfg.system.family, cfg.system.dim()), cfg.nonlinearity);
    for (std::size_t si = 0; si < cfg.sigma_noise.size(); ++si) {
      const double sigma = cfg.sigma_noise[si];
      for (int rep = 0; rep < cfg.repeats; ++rep) {
        if (progress) {
          progress("mask " + cfg.masks[mi] + " sigma_noise " + num(sigma, "%.3g") + " repeat " + std::to_string(rep));
        }
        const ValidationCase* cases = all_cases.data() + static_cast<std::size_t>(rep) * n_val;
        std::vector<double> rmse_bg(n_val, 0.0);
        std::vector<std::vector<double>> rmse_m(n_methods, std::vector<double>(n_val, 0.0));
        std::vector<char> ok(n_val, 1);
        std::vector<ObservationBatch> batches(n_val);
        std::vector<std::vector<char>> method_flag(n_methods, std::vector<char>(n_val, 0));
        std::atomic<std::size_t> doublings{0};
        std::mutex log_mutex;

        parallel_for(n_val, cfg.threads, [&](std::size_t j) {
          try {
            const std::uint64_t obs_seed =
                derive_seed(cfg.seed, {0x0b5ULL, mi, si, static_cast<std::uint64_t>(rep), j});
            batches[j] = simulate_observations(ctx.pair, cases[j].x_gt, op, cfg.window, sigma, obs_seed);
            rmse_bg[j] = rmse(cases[j].x_b, cases[j].x_gt);
            for (std::size_t k = 0; k < n_methods; ++k) {
              const Method m = cfg.methods[k];
              AssimilationResult ar;
              if (m == Method::Naive) {
                ar = assimilate_naive(cases[j].x_b, op, batches[j].windows.front().y);
              } else {
                ar = assimilate(make_cost_spec(m, cfg, ctx, cases[j].x_b, op, batches[j]), aopts);
              }
              rmse_m[k][j] = rmse(ar.x_a, cases[j].x_gt);
              method_flag[k][j] = ar.report.flagged() ? 1 : 0;
              doublings.fetch_add(static_cast<std::size_t>(ar.cost.epsilon_doublings));
            }
          } catch (const Error& e) {
            ok[j] = 0;
            if (progress) {
              std::lock_guard lock(log_mutex);
              progress(std::string("trial ") + std::to_string(j) + " failed: " + e.what());
            }
          }
        });

        if (obs_out) {
          for (std::size_t j = 0; j < n_val; ++j) {
            if (ok[j]) write_observation_rows(obs_out, trial_counter + j, op, batches[j]);
          }
        }
        trial_counter += n_val;
        epsilon_doublings += doublings.load();

        std::size_t n_ok = 0;
        double bg_mean = 0.0;
        std::vector<double> mean_m(n_methods, 0.0);
        for (std::size_t j = 0; j < n_val; ++j) {
          result.total_trials += 1;
          if (!ok[j]) {
            result.failed_trials += 1;
            continue;
          }
          ++n_ok;
          bg_mean += rmse_bg[j];
          for (std::size_t k = 0; k < n_methods; ++k) {
            mean_m[k] += rmse_m[k][j];
            flagged[k] += static_cast<std::size_t>(method_flag[k][j]);
          }
        }
        if (n_ok == 0) throw Error("every trial failed for mask " + cfg.masks[mi]);
        bg_mean /= static_cast<double>(n_ok);
        for (double& v : mean_m) v /= static_cast<double>(n_ok);

        std::optional<double> trad_mean;
        for (std::size_t k = 0; k < n_methods; ++k) {
          if (cfg.methods[k] == Method::Traditional) trad_mean = mean_m[k];
        }
        for (std::size_t k = 0; k < n_methods; ++k) {
          MetricRow row{cfg.methods[k], cfg.masks[mi], cfg.nonlinearity, sigma, rep, bg_mean, mean_m[k], std::nullopt};
          const Method m = cfg.methods[k];
          if (has_trad && (m == Method::Vae || m == Method::VaeObsOnly || m == Method::VaeObsReg)) {
            row.imp = imp_metric(bg_mean, mean_m[k], *trad_mean, cfg.imp_floor_rel * bg_mean);
          }
          result.rows.push_back(std::move(row));
        }
      }
    }
  }

  if (result.total_trials > 0 &&
      static_cast<double>(result.failed_trials) > 0.01 * static_cast<double>(result.total_trials)) {
    throw Error("run aborted: " + std::to_string(result.failed_trials) + " of " + std::to_string(result.total_trials) +
                " trials failed (more than 1%)");
  }

  json manifest;
  to_json(manifest["config"], cfg);
  manifest["format"] = "vaevar-manifest v1";
  manifest["derived"] = {
      {"dim", cfg.system.dim()},
      {"truth_model", ctx.pair.truth.describe()},
      {"prediction_model", ctx.pair.prediction.describe()},
      {"covariance_ridge", ctx.covariance.ridge},
      {"covariance_estimator", "unbiased sample covariance + ridge, upper Cholesky"},
      {"samples_resampled", ctx.samples_resampled},
      {"model_manifest", ctx.model.manifest},
      {"model_sigma0", ctx.model.sigma0},
      {"latent_dim", ctx.model.latent_dim},
      {"initial_control", "zero"},
      {"multistart", false},
      {"elbo_latent_draws", 1},
      {"det_gradient", "central differences"},
      {"r_std", "sigma_noise (floored at 1e-3)"},
  };
  std::vector<std::vector<double>> bmat;
  for (Eigen::Index r = 0; r < ctx.covariance.B.rows(); ++r) {
    bmat.emplace_back(ctx.covariance.B.row(r).begin(), ctx.covariance.B.row(r).end());
  }
  manifest["derived"]["covariance"] = bmat;
  json flags;
  for (std::size_t k = 0; k < n_methods; ++k) flags[to_string(cfg.methods[k])] = flagged[k];
  manifest["solver_flagged"] = flags;
  manifest["epsilon_doublings"] = epsilon_doublings;
  manifest["trials"] = {{"total", result.total_trials}, {"failed", result.failed_trials}};
  result.manifest = std::move(manifest);
  result.loss_trace = ctx.loss_trace;
  return result;
}

}  // namespace vaevar
