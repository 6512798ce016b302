#include "moments/harness.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <functional>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include <omp.h>

#include "moments/config.hpp"
#include "moments/error.hpp"
#include "moments/statistics.hpp"

namespace moments {

namespace {

constexpr int kRecordBytes = 3073;
constexpr int kImageExtent = 32;
constexpr int kImageChannels = 3;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

bool in_range(const std::vector<int>& layers, int L) {
  for (int l : layers) {
    if (l < 1 || l > L) return false;
  }
  return true;
}

std::set<std::string> metric_set(const ExperimentConfig& c) { return {c.metrics.begin(), c.metrics.end()}; }

HistogramPolicy histogram_policy(const ExperimentConfig& c) {
  HistogramPolicy p;
  p.metrics = {metric::log_nu2_signal, metric::log_mu2_noise};
  p.layers = {c.histogram_layers.begin(), c.histogram_layers.end()};
  p.bins = c.histogram_bins;
  p.lo = c.histogram_min;
  p.hi = c.histogram_max;
  return p;
}

std::vector<ProbeRow> run_probes(const ExperimentConfig& c, const BatchedField& data, int r) {
  std::vector<ProbeRow> rows;
  const BatchedField u = unit_noise(c, r);
  const PairState input = network_input(c, data, u, c.sigma_dx, r);
  const WeightStream base{c.master_seed, static_cast<std::uint64_t>(r)};
  const std::set<std::string> wanted = {metric::delta_chi, metric::delta_nu2_signal, metric::delta_mu2_noise};
  for (int p : c.probe_layers) {
    PairState prefix = input;
    if (p > 1) {
      PropagateOptions opts;
      opts.last_layer = p - 1;
      prefix = propagate(c.arch, input, base, [](const Snapshot&) {}, opts);
    }
    std::map<std::string, std::vector<double>> deltas;
    for (int s = 0; s < c.probe_resamples; ++s) {
      WeightStream ws = base;
      ws.resample_layer = p;
      ws.resample = static_cast<std::uint64_t>(s);
      Meter meter(c.arch, wanted);
      PropagateOptions opts;
      opts.first_layer = p;
      opts.last_layer = p;
      propagate(c.arch, prefix, ws, std::ref(meter), opts);
      std::map<std::string, double> got;
      for (const auto& v : meter.stats().values) got[v.metric] = v.value;
      for (const auto& name : wanted) {
        const auto it = got.find(name);
        deltas[name].push_back(it == got.end() ? std::nan("") : it->second);
      }
    }
    for (const auto& [name, values] : deltas) {
      ProbeRow row;
      row.layer = p;
      row.realization = r;
      row.metric = name;
      try {
        const LogIncrementTerms t = log_increment_terms(values);
        row.m_bar = t.m_bar;
        row.m_under = t.m_under;
        double acc = 0.0;
        for (double s : t.s_under) acc += s * s;
        row.s_under_var = acc / static_cast<double>(t.s_under.size());
        row.excluded = t.excluded;
      } catch (const DegenerateError&) {
        row.m_bar = row.m_under = row.s_under_var = std::nan("");
        row.excluded = values.size();
      }
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace

std::string to_string(InputKind kind) {
  switch (kind) {
    case InputKind::GaussianIID: return "gaussian_iid";
    case InputKind::GaussianMixture: return "gaussian_mixture";
    case InputKind::DatasetFile: return "dataset";
  }
  return "unknown";
}

InputKind parse_input_kind(const std::string& name) {
  if (name == "gaussian_iid") return InputKind::GaussianIID;
  if (name == "gaussian_mixture") return InputKind::GaussianMixture;
  if (name == "dataset") return InputKind::DatasetFile;
  throw ParameterError("unknown input kind '" + name + "'");
}

int ExperimentConfig::data_extent() const {
  return initial_conv_stride == 2 ? arch.spatial_extent * 2 : arch.spatial_extent;
}

void validate(const ExperimentConfig& c) {
  const ArchitectureSpec& a = c.arch;
  if (a.depth < 1) throw ConfigError("depth_L", "must be >= 1");
  if (a.width < 1) throw ConfigError("width_N", "must be >= 1");
  if (a.is_resnet() && a.residual_depth < 1) throw ConfigError("residual_H", "must be >= 1");
  if (a.kernel_extent < 1 || a.kernel_extent % 2 == 0) throw ConfigError("kernel_K", "must be odd and >= 1");
  if (a.spatial_extent < 1) throw ConfigError("spatial_n", "must be >= 1");
  if (a.spatial_dims != 1 && a.spatial_dims != 2) throw ConfigError("spatial_d", "must be 1 or 2");
  if (!(a.bn_epsilon >= 0.0)) throw ConfigError("bn_epsilon", "must be >= 0");
  if (c.data_channels < 1) throw ConfigError("input_channels", "must be >= 1");
  if (c.initial_conv_stride < 0 || c.initial_conv_stride > 2) {
    throw ConfigError("initial_conv_stride", "must be 0 (none), 1 or 2");
  }
  if (c.initial_conv_kernel < 1 || c.initial_conv_kernel % 2 == 0) {
    throw ConfigError("initial_conv_K", "must be odd and >= 1");
  }
  if (a.is_resnet() && c.initial_conv_stride == 0 && c.data_channels != a.width) {
    throw ConfigError("input_channels", "resnets without an initial conv need input_channels == width_N");
  }
  if (a.input_channels != (c.initial_conv_stride > 0 ? a.width : c.data_channels)) {
    throw ConfigError("input_channels", "inconsistent with the initial conv setting");
  }
  if (c.batch < 1) throw ConfigError("batch_M", "must be >= 1");
  if (a.has_bn() && c.batch < 2) throw ConfigError("batch_M", "must be >= 2 for BN architectures");
  if (!(c.sigma_dx > 0.0) || !std::isfinite(c.sigma_dx)) throw ConfigError("sigma_dx", "must be > 0");
  if (c.realizations < 1) throw ConfigError("realizations", "must be >= 1");
  if (c.threads < 1) throw ConfigError("threads", "must be >= 1");
  if (!in_range(c.probe_layers, a.depth)) throw ConfigError("probe_layers", "layers must lie in [1, depth_L]");
  if (!in_range(c.histogram_layers, a.depth)) {
    throw ConfigError("histogram_layers", "layers must lie in [1, depth_L]");
  }
  if (c.probe_resamples < 0) throw ConfigError("probe_resamples", "must be >= 0");
  if (c.probe_resamples == 1) throw ConfigError("probe_resamples", "must be 0 or >= 2");
  if (c.histogram_bins < 1) throw ConfigError("histogram_bins", "must be >= 1");
  if (!(c.histogram_max > c.histogram_min)) throw ConfigError("histogram_max", "must exceed histogram_min");
  for (const auto& m : c.metrics) {
    try {
      metric_substep(a.family, m);
    } catch (const ParameterError& e) {
      throw ConfigError("metrics", e.what());
    }
  }
  switch (c.input_kind) {
    case InputKind::GaussianIID: break;
    case InputKind::GaussianMixture:
      if (c.data_extent() != 1 || c.data_channels != 1) {
        throw ConfigError("input_kind", "gaussian_mixture needs spatial_n = 1 and input_channels = 1");
      }
      break;
    case InputKind::DatasetFile:
      if (c.dataset_path.empty()) throw ConfigError("dataset_path", "required when input_kind is dataset");
      if (a.spatial_dims != 2 || c.data_extent() != kImageExtent || c.data_channels != kImageChannels) {
        throw ConfigError("input_kind", "dataset images need spatial_d = 2, 32 input sites per side and 3 channels");
      }
      break;
  }
  if (c.initial_conv_stride == 2 && c.data_extent() % 2 != 0) {
    throw ConfigError("initial_conv_stride", "stride 2 needs an even input extent");
  }
}

BatchedField generate_input(InputKind kind, int M, int n, int d, int channels, Engine& rng) {
  BatchedField f(FieldShape{M, n, d, channels});
  switch (kind) {
    case InputKind::GaussianIID:
      fill_normal(rng, f.values());
      break;
    case InputKind::GaussianMixture: {
      if (n != 1 || channels != 1) throw ConfigError("input_kind", "gaussian_mixture needs n = 1 and one channel");
      std::bernoulli_distribution coin(0.5);
      std::normal_distribution<double> noise(0.0, 0.3);
      for (double& v : f.values()) {
        const double centre = coin(rng) ? 1.0 : -1.0;
        v = centre + noise(rng);
      }
      break;
    }
    case InputKind::DatasetFile:
      throw ParameterError("dataset inputs are loaded with load_dataset_binary");
  }
  return f;
}

BatchedField generate_noise(int M, int n, int d, int channels, double sigma, Engine& rng) {
  if (!(sigma > 0.0)) throw ParameterError("noise sigma must be > 0");
  BatchedField f(FieldShape{M, n, d, channels});
  fill_normal(rng, f.values(), 0.0, sigma);
  return f;
}

BatchedField load_dataset_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kRecordBytes != 0) {
    throw IoError("dataset '" + path + "' size " + std::to_string(bytes.size()) + " is not a multiple of " +
                  std::to_string(kRecordBytes));
  }
  const int M = static_cast<int>(bytes.size() / kRecordBytes);
  const int S = kImageExtent * kImageExtent;
  BatchedField f(FieldShape{M, kImageExtent, 2, kImageChannels});
  for (int m = 0; m < M; ++m) {
    const unsigned char* rec = bytes.data() + static_cast<std::size_t>(m) * kRecordBytes + 1;
    for (int c = 0; c < kImageChannels; ++c) {
      for (int s = 0; s < S; ++s) f.at(m, s, c) = rec[c * S + s] / 255.0;
    }
  }
  auto v = f.values();
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  for (double& x : v) x = (x - mean) * scale;
  return f;
}

BatchedField experiment_input(const ExperimentConfig& c, int realization) {
  if (c.input_kind == InputKind::DatasetFile) {
    BatchedField all = load_dataset_binary(c.dataset_path);
    if (all.batch() < c.batch) {
      throw ConfigError("batch_M", "dataset holds only " + std::to_string(all.batch()) + " records");
    }
    const int first = c.fixed_input ? 0 : (realization * c.batch) % (all.batch() - c.batch + 1);
    const std::size_t row = static_cast<std::size_t>(all.sites()) * all.channels();
    std::vector<double> vals(all.values().begin() + static_cast<std::ptrdiff_t>(first * row),
                             all.values().begin() + static_cast<std::ptrdiff_t>((first + c.batch) * row));
    return BatchedField(FieldShape{c.batch, kImageExtent, 2, kImageChannels}, std::move(vals));
  }
  Engine eng = make_engine(c.master_seed, Stream::Input, c.fixed_input ? 0 : static_cast<std::uint64_t>(realization) + 1);
  return generate_input(c.input_kind, c.batch, c.data_extent(), c.arch.spatial_dims, c.data_channels, eng);
}

BatchedField unit_noise(const ExperimentConfig& c, int realization) {
  Engine eng = make_engine(c.master_seed, Stream::Noise, static_cast<std::uint64_t>(realization));
  return generate_noise(c.batch, c.data_extent(), c.arch.spatial_dims, c.data_channels, 1.0, eng);
}

PairState network_input(const ExperimentConfig& c, const BatchedField& data, const BatchedField& u, double sigma,
                        int realization) {
  BatchedField dx = sigma * u;
  if (c.initial_conv_stride == 0) return PairState(data, std::move(dx), Location::Input);
  Engine eng = make_engine(c.master_seed, Stream::InitialConv, static_cast<std::uint64_t>(realization));
  const ConvParams p = he_init_conv(c.initial_conv_kernel, c.arch.spatial_dims, c.data_channels, c.arch.width, eng,
                                    c.initial_conv_stride);
  return PairState(conv_periodic(data, p), conv_periodic(dx, p, BiasMode::Skip), Location::Input);
}

RealizationStats run_realization(const ExperimentConfig& c, const BatchedField& data, int realization) {
  const PairState input = network_input(c, data, unit_noise(c, realization), c.sigma_dx, realization);
  Meter meter(c.arch, metric_set(c));
  propagate(c.arch, input, WeightStream{c.master_seed, static_cast<std::uint64_t>(realization)}, std::ref(meter));
  return meter.take();
}

RunResult run_experiment(const ExperimentConfig& c) {
  if (c.realizations < 1) throw ConfigError("realizations", "must be >= 1");
  validate(c);
  RunResult result;
  RunRecord& rec = result.record;
  rec.digest = config_digest(c);
  rec.master_seed = c.master_seed;
  rec.tool_version = MOMENTS_VERSION;
  rec.started_at = utc_now();
  rec.realizations = c.realizations;

  const int R = c.realizations;
  const BatchedField shared = c.fixed_input ? experiment_input(c, 0) : BatchedField{};
  const HistogramPolicy policy = histogram_policy(c);
  std::set<int> retain(c.probe_layers.begin(), c.probe_layers.end());
  retain.insert(c.histogram_layers.begin(), c.histogram_layers.end());

  std::vector<AccumulatorSet> parts(static_cast<std::size_t>(R), AccumulatorSet(policy));
  std::vector<std::vector<char>> degenerate(static_cast<std::size_t>(R));
  std::vector<RealizationValues> retained(static_cast<std::size_t>(R));
  std::vector<std::vector<ProbeRow>> probes(static_cast<std::size_t>(R));
  rec.realization_seconds.assign(static_cast<std::size_t>(R), 0.0);
  std::exception_ptr failure;

#pragma omp parallel for num_threads(c.threads) schedule(dynamic, 1)
  for (int r = 0; r < R; ++r) {
    try {
      const auto t0 = std::chrono::steady_clock::now();
      const BatchedField data = c.fixed_input ? shared : experiment_input(c, r);
      RealizationStats stats = run_realization(c, data, r);
      const bool degen = stats.any_degenerate();
      for (const auto& v : stats.values) {
        if (degen && v.metric.rfind("log_", 0) == 0) continue;
        parts[r].add({v.layer, v.substep, v.metric}, v.value);
        if (retain.contains(v.layer)) retained[r].values.push_back(v);
      }
      retained[r].realization = r;
      degenerate[r] = std::move(stats.degenerate);
      if (c.probe_resamples > 0 && !c.probe_layers.empty()) probes[r] = run_probes(c, data, r);
      rec.realization_seconds[r] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } catch (...) {
#pragma omp critical(moments_run_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  result.aggregate = tree_merge(std::move(parts));
  rec.degenerate_per_layer.assign(static_cast<std::size_t>(c.arch.depth) + 1, 0);
  for (const auto& d : degenerate) {
    bool any = false;
    for (std::size_t l = 0; l < d.size(); ++l) {
      if (d[l]) {
        ++rec.degenerate_per_layer[l];
        any = true;
      }
    }
    if (any) ++rec.degenerate_realizations;
  }
  if (rec.degenerate_realizations == static_cast<std::uint64_t>(R)) {
    throw RunError("all " + std::to_string(R) + " realizations collapsed to a degenerate state");
  }
  rec.expected_degenerate_rate = c.arch.depth * c.arch.convs_per_layer() * std::ldexp(1.0, -c.arch.width);
  result.retained = std::move(retained);
  for (auto& rows : probes) {
    for (auto& row : rows) result.probes.push_back(std::move(row));
  }
  rec.finished_at = utc_now();
  return result;
}

std::vector<FiniteDifferenceRow> finite_difference_validate(const ExperimentConfig& c,
                                                            const std::vector<double>& sigmas) {
  validate(c);
  if (sigmas.empty()) throw ParameterError("at least one sigma is required");
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] > 0.0)) throw ParameterError("sigmas must be > 0");
    if (i > 0 && !(sigmas[i] < sigmas[i - 1])) throw ParameterError("sigmas must be strictly descending");
  }
  std::vector<FiniteDifferenceRow> rows;
  for (double sigma : sigmas) rows.push_back({sigma, 0.0, 0.0, 0.0});
  const BatchedField shared = c.fixed_input ? experiment_input(c, 0) : BatchedField{};
  for (int r = 0; r < c.realizations; ++r) {
    const BatchedField data = c.fixed_input ? shared : experiment_input(c, r);
    const BatchedField u = unit_noise(c, r);
    const WeightStream ws{c.master_seed, static_cast<std::uint64_t>(r)};
    for (auto& row : rows) {
      std::vector<BNStats> stats;
      PropagateOptions clean_opts;
      clean_opts.record_stats = &stats;
      const PairState clean =
          propagate(c.arch, network_input(c, data, u, row.sigma, r), ws, [](const Snapshot&) {}, clean_opts);

      BatchedField shifted = data;
      shifted += row.sigma * u;
      const BatchedField zero(u.shape());
      PropagateOptions frozen_opts;
      frozen_opts.frozen_stats = &stats;
      const PairState moved =
          propagate(c.arch, network_input(c, shifted, zero, 1.0, r), ws, [](const Snapshot&) {}, frozen_opts);

      BatchedField residual = moved.signal;
      residual += -1.0 * clean.signal;
      residual += -1.0 * clean.noise;
      row.residual_moment += centered_second_moment(residual);
      row.noise_moment += centered_second_moment(clean.noise);
    }
  }
  for (auto& row : rows) {
    if (!(row.noise_moment > 0.0)) throw DegenerateError("output noise vanished; the ratio is undefined");
    row.ratio = row.residual_moment / row.noise_moment;
  }
  return rows;
}

double jacobian_exact_chi(const ArchitectureSpec& arch, const BatchedField& input, const WeightStream& weights) {
  if (arch.spatial_extent != 1 || input.extent() != 1) {
    throw UnsupportedError("the exact Jacobian oracle needs a fully-connected net (spatial_n = 1)");
  }
  const int N0 = input.channels();
  double sum_noise = 0.0;
  double mu2_signal_out = 0.0;
  for (int i = 0; i < N0; ++i) {
    BatchedField basis(input.shape());
    for (int m = 0; m < input.batch(); ++m) basis.at(m, 0, i) = 1.0;
    const PairState out = propagate(arch, PairState(input, basis), weights, [](const Snapshot&) {});
    sum_noise += centered_second_moment(out.noise);
    if (i == 0) mu2_signal_out = channel_moments(out.signal, 2).mu;
  }
  const double mu2_signal_in = channel_moments(input, 2).mu;
  return normalized_sensitivity(sum_noise, mu2_signal_out, 1.0, mu2_signal_in).chi;
}

MonteCarloChi monte_carlo_chi(const ArchitectureSpec& arch, const BatchedField& input, const WeightStream& weights,
                              int draws, double sigma, Engine& rng) {
  if (draws < 2) throw ParameterError("Monte-Carlo chi needs at least 2 draws");
  StatsAccumulator g;
  double mu2_signal_out = 0.0;
  for (int k = 0; k < draws; ++k) {
    BatchedField dx = generate_noise(input.batch(), input.extent(), input.dims(), input.channels(), sigma, rng);
    const PairState out = propagate(arch, PairState(input, std::move(dx)), weights, [](const Snapshot&) {});
    g.add(centered_second_moment(out.noise) / (sigma * sigma));
    if (k == 0) mu2_signal_out = channel_moments(out.signal, 2).mu;
  }
  const double mu2_signal_in = channel_moments(input, 2).mu;
  MonteCarloChi mc;
  mc.draws = draws;
  mc.chi = normalized_sensitivity(g.mean(), mu2_signal_out, 1.0, mu2_signal_in).chi;
  mc.stderr_chi = mc.chi * g.stderr_mean() / (2.0 * g.mean());
  return mc;
}

FcDemoResult fc_demo(std::uint64_t seed, int samples, double sigma) {
  if (samples < 2) throw ParameterError("fc demo needs at least 2 samples");
  FcDemoResult result;
  Engine in_rng = make_engine(seed, Stream::Demo, 0);
  const BatchedField x0 = generate_input(InputKind::GaussianMixture, samples, 1, 1, 1, in_rng);
  Engine noise_rng = make_engine(seed, Stream::Demo, 1);
  const BatchedField dx0 = generate_noise(samples, 1, 1, 1, sigma, noise_rng);
  const double mu2_x0 = channel_moments(x0, 2).mu;
  const double mu2_dx0 = centered_second_moment(dx0);
  const auto chi_of = [&](const PairState& s) {
    return normalized_sensitivity(centered_second_moment(s.noise), channel_moments(s.signal, 2).mu, mu2_dx0, mu2_x0)
        .chi;
  };
  const auto emit_samples = [&](const std::string& panel, const PairState& out) {
    for (int m = 0; m < samples; ++m) result.samples.push_back({panel, m, x0.at(m, 0, 0), out.signal.at(m, 0, 0)});
  };

  const PairState start(x0, dx0);
  for (const auto& [panel, act] : {std::pair{std::string("a_tanh"), Activation::Tanh},
                                   std::pair{std::string("b_linear"), Activation::Linear}}) {
    Engine w = make_engine(seed, Stream::Demo, 2, panel == "a_tanh" ? 0 : 1);
    const PairState out = vanilla_layer(start, he_init_conv(1, 1, 1, 1, w), act);
    emit_samples(panel, out);
    result.chi.push_back({panel, 1, chi_of(out)});
  }

  constexpr int kDepth = 10;
  constexpr int kWidth = 100;
  PairState cur = start;
  for (int l = 1; l <= kDepth; ++l) {
    const int c_in = l == 1 ? 1 : kWidth;
    const int c_out = l == kDepth ? 1 : kWidth;
    Engine w = make_engine(seed, Stream::Demo, 3, static_cast<std::uint64_t>(l));
    cur = bnff_layer(cur, he_init_conv(1, 1, c_in, c_out, w), l == kDepth ? Activation::Linear : Activation::ReLU,
                     0.001)
              .x;
    result.chi.push_back({"c_bn_feedforward", l, chi_of(cur)});
  }
  emit_samples("c_bn_feedforward", cur);
  return result;
}

}  // namespace moments
