#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "moments/config.hpp"
#include "moments/error.hpp"
#include "moments/harness.hpp"
#include "moments/results_io.hpp"
#include "moments/statistics.hpp"

namespace {

using namespace moments;

constexpr int kExitConfig = 2;
constexpr int kExitRun = 3;
constexpr int kExitIo = 4;

std::vector<double> parse_sigmas(const std::string& text) {
  std::vector<double> out;
  std::istringstream is(text);
  std::string cell;
  while (std::getline(is, cell, ',')) {
    try {
      out.push_back(parse_double(cell));
    } catch (const IoError&) {
      throw ConfigError("sigmas", "not a number: '" + cell + "'");
    }
  }
  if (out.empty()) throw ConfigError("sigmas", "at least one value is required");
  return out;
}

std::pair<int, int> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("layers", "expected a:b");
  try {
    return {std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ConfigError("layers", "expected integers a:b, got '" + text + "'");
  }
}

int residual_depth_for(const std::string& aggregate_path, std::optional<int> flag) {
  if (flag) return *flag;
  const auto run_json = std::filesystem::path(aggregate_path).parent_path() / "run.json";
  std::ifstream in(run_json);
  if (!in) return 0;
  try {
    const auto j = nlohmann::json::parse(in);
    const auto& cfg = j.at("config");
    const std::string family = cfg.at("family").get<std::string>();
    if (family != "bn_resnet" && family != "resnet_no_bn") return 0;
    return cfg.at("residual_H").get<int>();
  } catch (const std::exception&) {
    return 0;
  }
}

int cmd_run(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed,
            std::optional<int> realizations, std::optional<int> threads) {
  ExperimentConfig c = parse_config_file(config_path);
  if (seed) c.master_seed = *seed;
  if (realizations) c.realizations = *realizations;
  if (threads) c.threads = *threads;
  validate(c);
  const RunResult result = run_experiment(c);
  emit_results(result, c, out);
  std::cout << "run " << result.record.digest << ": " << c.realizations << " realizations, "
            << result.record.degenerate_realizations << " degenerate; wrote " << out << "\n";
  return 0;
}

int cmd_validate_noise(const std::string& config_path, const std::string& sigmas, const std::string& out) {
  const ExperimentConfig c = parse_config_file(config_path);
  const auto rows = finite_difference_validate(c, parse_sigmas(sigmas));
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory '" + out + "': " + ec.message());
  write_finite_difference_csv((std::filesystem::path(out) / "noise_validation.csv").string(), config_digest(c), rows);
  std::cout << "sigma,ratio\n";
  for (const auto& r : rows) std::cout << format_double(r.sigma) << ',' << format_double(r.ratio) << '\n';
  return 0;
}

int cmd_oracle_chi(const std::string& config_path, int draws) {
  const ExperimentConfig c = parse_config_file(config_path);
  if (c.initial_conv_stride != 0) throw ConfigError("initial_conv_stride", "the oracle runs without an initial conv");
  const BatchedField input = experiment_input(c, 0);
  const WeightStream ws{c.master_seed, 0};
  const double exact = jacobian_exact_chi(c.arch, input, ws);
  Engine rng = make_engine(c.master_seed, Stream::Noise, 0);
  const MonteCarloChi mc = monte_carlo_chi(c.arch, input, ws, draws, c.sigma_dx, rng);
  const double z = mc.stderr_chi > 0.0 ? (exact - mc.chi) / mc.stderr_chi : 0.0;
  std::cout << "exact_chi," << format_double(exact) << "\n"
            << "monte_carlo_chi," << format_double(mc.chi) << "\n"
            << "monte_carlo_stderr," << format_double(mc.stderr_chi) << "\n"
            << "draws," << mc.draws << "\n"
            << "z_score," << format_double(z) << "\n";
  return 0;
}

int cmd_fit(const std::string& in, const std::string& mode, const std::string& layers, const std::string& metric_name,
            std::optional<int> residual_h) {
  const auto rows = read_aggregate_csv(in);
  const auto [first, last] = parse_range(layers);
  const std::vector<double> chi = layer_means(rows, metric_name);
  if (chi.empty()) throw ConfigError("metric", "'" + metric_name + "' has no mean rows in " + in);
  FitResult fit;
  if (mode == "power") {
    fit = fit_power_law(chi, first, last);
    std::cout << "tau_hat," << format_double(fit.exponent) << "\n";
  } else if (mode == "exp") {
    fit = fit_exponential(chi, first, last);
    std::cout << "gamma_hat," << format_double(fit.exponent) << "\n";
  } else {
    throw ConfigError("mode", "expected power or exp");
  }
  std::cout << "intercept," << format_double(fit.intercept) << "\n"
            << "r_squared," << format_double(fit.r_squared) << "\n"
            << "points," << fit.points << "\n";
  const int H = residual_depth_for(in, residual_h);
  const std::vector<double> dh1 = layer_means(rows, "delta_chi_h1");
  if (H > 0 && !dh1.empty()) {
    double acc = 0.0;
    int n = 0;
    for (double v : dh1) {
      if (std::isfinite(v)) {
        acc += v;
        ++n;
      }
    }
    if (n > 0) {
      std::cout << "mean_delta_chi_h1," << format_double(acc / n) << "\n"
                << "tau_reference," << format_double(tau_reference(acc / n, H)) << "\n";
    }
  }
  return 0;
}

int cmd_fc_demo(const std::string& out, std::uint64_t seed, int samples, double sigma) {
  const FcDemoResult r = fc_demo(seed, samples, sigma);
  write_fc_demo(r, out);
  for (const auto& c : r.chi) {
    if (c.panel != "c_bn_feedforward" || c.layer == 10) {
      std::cout << c.panel << ",chi," << format_double(c.chi) << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Signal and noise moment propagation through randomly initialized deep nets"};
  app.set_version_flag("--version", std::string(MOMENTS_VERSION));
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> realizations;
  std::optional<int> threads;
  auto* run = app.add_subcommand("run", "Monte-Carlo run writing aggregate statistics");
  run->add_option("--config", config_path, "Config JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--seed", seed, "Override master_seed");
  run->add_option("--realizations", realizations, "Override realizations");
  run->add_option("--threads", threads, "Override threads");

  std::string sigmas = "1e-3,1e-4,1e-5";
  auto* vn = app.add_subcommand("validate-noise", "Finite-difference check of the first-order noise");
  vn->add_option("--config", config_path, "Config JSON")->required()->check(CLI::ExistingFile);
  vn->add_option("--sigmas", sigmas, "Descending comma-separated noise scales");
  vn->add_option("--out", out_dir, "Output directory")->required();

  int draws = 100000;
  auto* oc = app.add_subcommand("oracle-chi", "Exact Jacobian chi against white-noise Monte Carlo (n = 1)");
  oc->add_option("--config", config_path, "Config JSON")->required()->check(CLI::ExistingFile);
  oc->add_option("--draws", draws, "Monte-Carlo noise draws")->check(CLI::Range(2, 100000000));

  std::string in_csv;
  std::string mode = "power";
  std::string layers;
  std::string metric_name = "chi";
  std::optional<int> residual_h;
  auto* fit = app.add_subcommand("fit", "Power-law or exponential fit of mean chi over a layer range");
  fit->add_option("--in", in_csv, "aggregate.csv")->required()->check(CLI::ExistingFile);
  fit->add_option("--mode", mode, "power or exp")->check(CLI::IsMember({"power", "exp"}));
  fit->add_option("--layers", layers, "Layer range a:b")->required();
  fit->add_option("--metric", metric_name, "Metric to fit");
  fit->add_option("--residual-h", residual_h, "Residual depth H (default: read run.json beside the csv)");

  std::uint64_t demo_seed = 1;
  int demo_samples = 2000;
  double demo_sigma = 1e-3;
  auto* fc = app.add_subcommand("fc-demo", "Fully-connected mixture-input demonstration");
  fc->add_option("--out", out_dir, "Output directory")->required();
  fc->add_option("--seed", demo_seed, "Seed");
  fc->add_option("--samples", demo_samples, "Input samples")->check(CLI::Range(2, 10000000));
  fc->add_option("--sigma", demo_sigma, "Noise scale");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir, seed, realizations, threads);
    if (*vn) return cmd_validate_noise(config_path, sigmas, out_dir);
    if (*oc) return cmd_oracle_chi(config_path, draws);
    if (*fit) return cmd_fit(in_csv, mode, layers, metric_name, residual_h);
    if (*fc) return cmd_fc_demo(out_dir, demo_seed, demo_samples, demo_sigma);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "run error: " << e.what() << "\n";
    return kExitRun;
  }
  return kExitConfig;
}
