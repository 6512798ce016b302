#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moments/accumulator.hpp"
#include "moments/meter.hpp"
#include "moments/propagation.hpp"

namespace moments {

enum class InputKind { GaussianIID, GaussianMixture, DatasetFile };

std::string to_string(InputKind kind);
InputKind parse_input_kind(const std::string& name);

struct ExperimentConfig {
  ArchitectureSpec arch;
  int batch = 32;
  double sigma_dx = 1e-3;
  int realizations = 200;
  std::uint64_t master_seed = 20190614;
  InputKind input_kind = InputKind::GaussianIID;
  std::string dataset_path;
  /// Channels of the generated data. Equals arch.input_channels unless an initial conv maps it to the width.
  int data_channels = 64;
  /// 0 disables the initial random convolution; 1 or 2 selects its stride.
  int initial_conv_stride = 0;
  int initial_conv_kernel = 3;
  std::vector<int> probe_layers;
  int probe_resamples = 0;
  std::vector<int> histogram_layers;
  int histogram_bins = 80;
  double histogram_min = -8.0;
  double histogram_max = 8.0;
  /// Empty selects every metric of the family.
  std::vector<std::string> metrics;
  bool fixed_input = true;
  int threads = 1;

  /// Spatial extent of the generated data (before the initial conv).
  int data_extent() const;
};

/// Throws ConfigError naming the first violated constraint.
void validate(const ExperimentConfig& config);

struct RunRecord {
  std::string digest;
  std::uint64_t master_seed = 0;
  std::string tool_version;
  std::string started_at;
  std::string finished_at;
  int realizations = 0;
  std::vector<std::uint64_t> degenerate_per_layer;
  std::uint64_t degenerate_realizations = 0;
  /// Sum over layers of 2^-N_l: the order of magnitude of the expected collapse rate.
  double expected_degenerate_rate = 0.0;
  std::vector<double> realization_seconds;
};

struct RealizationValues {
  int realization = 0;
  std::vector<MetricValue> values;
};

struct ProbeRow {
  int layer = 0;
  int realization = 0;
  std::string metric;
  double m_bar = 0.0;
  double m_under = 0.0;
  /// Mean of the squared centered log increments.
  double s_under_var = 0.0;
  std::size_t excluded = 0;
};

struct RunResult {
  AccumulatorSet aggregate;
  RunRecord record;
  /// Per-realization values at probe and histogram layers, ordered by realization.
  std::vector<RealizationValues> retained;
  std::vector<ProbeRow> probes;
};

BatchedField generate_input(InputKind kind, int M, int n, int d, int channels, Engine& rng);

BatchedField generate_noise(int M, int n, int d, int channels, double sigma, Engine& rng);

/// Reads fixed-length 3073-byte records (label byte, then 32x32 planes per colour channel).
/// Pixels are scaled by 1/255 and standardized globally over the file.
BatchedField load_dataset_binary(const std::string& path);

/// The shared input batch (fixed-input mode) or the batch for one realization.
BatchedField experiment_input(const ExperimentConfig& config, int realization);

/// Input pair for one realization after the optional initial conv; noise is sigma * unit_noise.
PairState network_input(const ExperimentConfig& config, const BatchedField& data, const BatchedField& unit_noise,
                        double sigma, int realization);

BatchedField unit_noise(const ExperimentConfig& config, int realization);

RealizationStats run_realization(const ExperimentConfig& config, const BatchedField& data, int realization);

RunResult run_experiment(const ExperimentConfig& config);

struct FiniteDifferenceRow {
  double sigma = 0.0;
  double ratio = 0.0;
  double residual_moment = 0.0;
  double noise_moment = 0.0;
};

/// For each sigma: second moment of Phi(x + dx) - Phi(x) - dx^L over that of dx^L, pooled over realizations.
/// The same unit noise is scaled by every sigma; BN statistics are frozen to the clean pass.
std::vector<FiniteDifferenceRow> finite_difference_validate(const ExperimentConfig& config,
                                                            const std::vector<double>& sigmas);

/// chi from propagating every input coordinate direction as noise (fully-connected nets only).
double jacobian_exact_chi(const ArchitectureSpec& arch, const BatchedField& input, const WeightStream& weights);

struct MonteCarloChi {
  double chi = 0.0;
  double stderr_chi = 0.0;
  int draws = 0;
};

/// chi from white input noise, averaging the output noise moment over `draws` independent draws.
MonteCarloChi monte_carlo_chi(const ArchitectureSpec& arch, const BatchedField& input, const WeightStream& weights,
                              int draws, double sigma, Engine& rng);

struct FcDemoSample {
  std::string panel;
  int sample = 0;
  double input = 0.0;
  double output = 0.0;
};

struct FcDemoChi {
  std::string panel;
  int layer = 0;
  double chi = 0.0;
};

struct FcDemoResult {
  std::vector<FcDemoSample> samples;
  std::vector<FcDemoChi> chi;
};

/// Mixture input through a tanh layer, a linear layer and a 10-layer BN feedforward ReLU net of final width 1.
FcDemoResult fc_demo(std::uint64_t seed, int samples, double sigma);

}  // namespace moments
