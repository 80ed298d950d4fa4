// vaevar: command-line driver for twin experiments.
//
//   vaevar gen-data   --preset l63_sigma --out samples.csv
//   vaevar train      --samples samples.csv --preset l63_sigma --out model.bin --loss loss.csv
//   vaevar assimilate --model model.bin --preset l63_sigma --mask XY --sigma-noise 0.5
//   vaevar experiment --config configs/l63_sigma.json --out metrics.csv --manifest manifest.json

#include "vaevar/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using namespace vaevar;

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::vector<std::string> split(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& t : split(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(t, &used));
      if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
      throw ConfigError("not a number: '" + t + "'");
    }
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (double v : parse_doubles(s)) {
    if (v != static_cast<int>(v)) throw ConfigError("expected integers in '" + s + "'");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  return os;
}

/// Config sources shared by every subcommand: preset, then file, then flags.
struct ConfigFlags {
  std::string preset = "l63_sigma";
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::size_t> n_train;
  std::optional<std::size_t> n_val;
  std::optional<std::string> masks;
  std::optional<std::string> nonlinearity;
  std::optional<std::string> sigma_noise;
  std::optional<int> repeats;
  std::optional<std::string> window;
  std::optional<std::string> methods;
  std::optional<int> epochs;
  std::optional<std::string> model_path;
  bool full_grid = false;
  bool all_masks = false;
  bool truth_full_horizon = false;

  void add_common(CLI::App* app) {
    app->add_option("--preset", preset, "Scenario preset: l63_sigma, l63_rho, l96_F");
    app->add_option("--config", config_file, "JSON config file; flags override it");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--threads", threads, "Worker threads");
    app->add_option("--n-train", n_train, "Number of error samples");
    app->add_flag("--truth-full-horizon", truth_full_horizon, "Use the truth model for both legs of the truth branch");
  }
  void add_training(CLI::App* app) { app->add_option("--epochs", epochs, "Training epochs"); }
  void add_sweep(CLI::App* app) {
    app->add_option("--n-val", n_val, "Validation cases per cell");
    app->add_option("--masks", masks, "Comma-separated masks (XYZ,XY,... or x1x2,...)");
    app->add_option("--nonlin", nonlinearity, "Observation nonlinearity: identity, absolute, saturated");
    app->add_option("--sigma-noise", sigma_noise, "Comma-separated noise levels");
    app->add_option("--repeats", repeats, "Repeats per cell");
    app->add_option("--window", window, "Observation times in steps, e.g. 0 or 0,2");
    app->add_option("--methods", methods, "Comma-separated: trad,vae,vae_obs,vae_obs_reg,naive");
    app->add_option("--model", model_path, "Load a trained model instead of training");
    app->add_flag("--full-grid", full_grid, "41-point noise grid and 10 repeats");
    app->add_flag("--all-masks", all_masks, "Every non-empty mask over three variables");
  }

  ExperimentConfig build() const {
    std::optional<nlohmann::json> file;
    std::string name = preset;
    if (!config_file.empty()) {
      std::ifstream is(config_file);
      if (!is) throw ConfigError("cannot read config '" + config_file + "'");
      try {
        file = nlohmann::json::parse(is);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + config_file + "': " + e.what());
      }
      if (file->contains("preset")) name = file->at("preset").get<std::string>();
    }
    ExperimentConfig cfg = vaevar::preset(name);
    if (file) apply_json(cfg, *file);
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (n_train) cfg.n_train = *n_train;
    if (n_val) cfg.n_val = *n_val;
    if (truth_full_horizon) cfg.truth_full_horizon = true;
    if (all_masks) cfg.masks = vaevar::all_masks(cfg.system.family);
    if (masks) cfg.masks = split(*masks);
    if (nonlinearity) cfg.nonlinearity = nonlinearity_from_string(*nonlinearity);
    if (full_grid) {
      cfg.sigma_noise = full_noise_grid();
      cfg.repeats = 10;
    }
    if (sigma_noise) cfg.sigma_noise = parse_doubles(*sigma_noise);
    if (repeats) cfg.repeats = *repeats;
    if (window) cfg.window = parse_ints(*window);
    if (methods) {
      cfg.methods.clear();
      for (const auto& m : split(*methods)) cfg.methods.push_back(method_from_string(m));
    }
    if (epochs) cfg.vae.adamw.epochs = *epochs;
    if (model_path) cfg.model_path = *model_path;
    return cfg;
  }
};

int cmd_gen_data(const ConfigFlags& flags, const std::string& out) {
  ExperimentConfig cfg = flags.build();
  cfg.validate();
  TwinModelPair pair{cfg.system.truth(), cfg.system.prediction(), cfg.integrator};
  SampleGenerationOptions opts;
  opts.truth_full_horizon = cfg.truth_full_horizon;
  opts.threads = cfg.threads;
  SampleGenerationReport rep;
  const ErrorSampleSet s = generate_error_samples(pair, cfg.n_train, cfg.seed, opts, &rep);
  write_samples(out, s);
  std::fprintf(stderr, "wrote %zu samples of dim %ld to %s (%zu resampled)\n", s.size(), static_cast<long>(s.dim),
               out.c_str(), rep.resampled);
  return 0;
}

int cmd_train(const ConfigFlags& flags, const std::string& samples_path, const std::string& out,
              const std::string& loss_path) {
  ExperimentConfig cfg = flags.build();
  cfg.validate();
  ErrorSampleSet samples;
  if (samples_path.empty()) {
    TwinModelPair pair{cfg.system.truth(), cfg.system.prediction(), cfg.integrator};
    SampleGenerationOptions opts;
    opts.truth_full_horizon = cfg.truth_full_horizon;
    opts.threads = cfg.threads;
    samples = generate_error_samples(pair, cfg.n_train, cfg.seed, opts);
  } else {
    samples = read_samples(samples_path);
  }
  if (samples.dim != cfg.system.dim()) {
    throw ConfigError("samples have dim " + std::to_string(samples.dim) + " but the system has dim " +
                      std::to_string(cfg.system.dim()));
  }
  const VaeShape shape{cfg.system.dim(), cfg.vae.h1, cfg.vae.h2, cfg.vae.latent};
  // Same derived seed as the experiment driver, so a saved model matches an in-process one.
  TrainResult tr = train_vae(samples, shape, cfg.vae.adamw, cfg.vae.sigma0, derive_seed(cfg.seed, {0x7a3ULL}));
  tr.model.manifest["scenario"] = cfg.scenario;
  save_model(out, tr.model);
  if (!loss_path.empty()) {
    auto os = open_out(loss_path);
    write_loss_trace_csv(os, tr.trace);
  }
  const EpochLoss& last = tr.trace.back();
  std::fprintf(stderr, "trained %d epochs, final loss %.6g (recon %.6g, kl %.6g), model written to %s\n", last.epoch,
               last.mean_loss, last.recon, last.kl, out.c_str());
  return 0;
}

int cmd_assimilate(const ConfigFlags& flags, std::size_t case_index) {
  ExperimentConfig cfg = flags.build();
  cfg.validate();
  if (cfg.model_path.empty()) throw ConfigError("assimilate needs --model");
  const ExperimentContext ctx = prepare_experiment(cfg);
  const ValidationCase vc = make_validation_case(ctx.pair, cfg.seed, cfg.n_train + case_index);
  const double sigma = cfg.sigma_noise.front();
  const std::string& mask = cfg.masks.front();
  const ObservationOperator op(parse_mask(mask, cfg.system.family, cfg.system.dim()), cfg.nonlinearity);
  const ObservationBatch batch =
      simulate_observations(ctx.pair, vc.x_gt, op, cfg.window, sigma, derive_seed(cfg.seed, {0x0b5ULL, 0, 0, 0, case_index}));

  std::printf("case %zu  mask %s  nonlin %s  sigma_noise %g  window", case_index, mask.c_str(),
              to_string(cfg.nonlinearity).c_str(), sigma);
  for (int t : cfg.window) std::printf(" %d", t);
  std::printf("\nrmse_bg %.6g\n", rmse(vc.x_b, vc.x_gt));
  std::printf("%-12s %12s %12s %12s %12s %12s %6s %6s  %s\n", "method", "rmse", "total", "obs", "reg", "det", "iters",
              "evals", "termination");
  AssimilationOptions aopts;
  aopts.lbfgs = cfg.lbfgs;
  for (Method m : cfg.methods) {
    AssimilationResult ar;
    if (m == Method::Naive) {
      ar = assimilate_naive(vc.x_b, op, batch.windows.front().y);
    } else {
      ar = assimilate(make_cost_spec(m, cfg, ctx, vc.x_b, op, batch), aopts);
    }
    std::printf("%-12s %12.6g %12.6g %12.6g %12.6g %12.6g %6d %6d  %s\n", to_string(m).c_str(), rmse(ar.x_a, vc.x_gt),
                ar.cost.total, ar.cost.obs_term, ar.cost.reg_term, ar.cost.det_term, ar.report.iterations,
                ar.report.function_evals, to_string(ar.report.reason).c_str());
  }
  return 0;
}

int cmd_experiment(const ConfigFlags& flags, const std::string& out, const std::string& summary,
                   const std::string& manifest_path, const std::string& loss_path, const std::string& obs_path,
                   bool quiet) {
  ExperimentConfig cfg = flags.build();
  if (!obs_path.empty()) cfg.observations_path = obs_path;
  cfg.validate();
  ProgressFn progress;
  if (!quiet) progress = [](const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); };
  const ExperimentResult res = run_experiment(cfg, progress);

  if (out.empty() || out == "-") {
    write_metrics_csv(std::cout, res.rows);
  } else {
    auto os = open_out(out);
    write_metrics_csv(os, res.rows);
  }
  if (!summary.empty()) {
    auto os = open_out(summary);
    write_summary_csv(os, summarize(res.rows));
  }
  if (!manifest_path.empty()) {
    auto os = open_out(manifest_path);
    os << res.manifest.dump(2) << '\n';
  }
  if (!loss_path.empty()) {
    auto os = open_out(loss_path);
    write_loss_trace_csv(os, res.loss_trace);
  }
  if (res.failed_trials > 0) {
    std::fprintf(stderr, "%zu of %zu trials failed and were excluded\n", res.failed_trials, res.total_trials);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational data assimilation with a learned background error model"};
  app.require_subcommand(1);

  ConfigFlags flags;
  std::string out, samples_path, loss_path, summary, manifest, obs_path;
  std::size_t case_index = 0;
  bool quiet = false;

  auto* gen = app.add_subcommand("gen-data", "Generate background error samples");
  flags.add_common(gen);
  gen->add_option("--out", out, "Sample-set file")->required();

  auto* train = app.add_subcommand("train", "Train the VAE on error samples");
  flags.add_common(train);
  flags.add_training(train);
  train->add_option("--samples", samples_path, "Sample-set file (generated in-process if omitted)");
  train->add_option("--out", out, "Model file")->required();
  train->add_option("--loss", loss_path, "Per-epoch loss CSV");

  auto* assim = app.add_subcommand("assimilate", "Assimilate one validation case and print a cost breakdown");
  flags.add_common(assim);
  flags.add_sweep(assim);
  assim->add_option("--case", case_index, "Validation case index");

  auto* exp = app.add_subcommand("experiment", "Run a full twin-experiment sweep");
  flags.add_common(exp);
  flags.add_training(exp);
  flags.add_sweep(exp);
  exp->add_option("--out", out, "Metrics CSV (stdout if omitted)");
  exp->add_option("--summary", summary, "Mean/std summary CSV");
  exp->add_option("--manifest", manifest, "JSON manifest of every config value and seed");
  exp->add_option("--loss", loss_path, "Per-epoch loss CSV of the trained model");
  exp->add_option("--observations", obs_path, "CSV of every simulated observation");
  exp->add_flag("-q,--quiet", quiet, "No progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(flags, out);
    if (*train) return cmd_train(flags, samples_path, out, loss_path);
    if (*assim) return cmd_assimilate(flags, case_index);
    if (*exp) return cmd_experiment(flags, out, summary, manifest, loss_path, obs_path, quiet);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitConfig;
  } catch (const UnsupportedOperator& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  }
  return 0;
}
