#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "moments/conv.hpp"
#include "moments/field.hpp"

namespace moments {

enum class Location { Input, PostConv, PostBN, PostActivation, ResidualAggregate };

enum class Activation { ReLU, Tanh, Linear };

enum class Family { Vanilla, BNFeedforward, BNResnet, ResnetNoBN };

std::string to_string(Location loc);
std::string to_string(Activation act);
std::string to_string(Family family);
Activation parse_activation(const std::string& name);
Family parse_family(const std::string& name);

/// A signal field and its first-order noise, always of identical shape.
struct PairState {
  BatchedField signal;
  BatchedField noise;
  Location location = Location::Input;

  PairState() = default;
  PairState(BatchedField s, BatchedField n, Location loc = Location::Input);
};

struct ArchitectureSpec {
  Family family = Family::Vanilla;
  int depth = 1;
  int residual_depth = 2;
  int width = 64;
  int kernel_extent = 3;
  int spatial_extent = 8;
  int spatial_dims = 2;
  Activation activation = Activation::ReLU;
  double bn_epsilon = 0.001;
  int input_channels = 64;

  bool is_resnet() const { return family == Family::BNResnet || family == Family::ResnetNoBN; }
  bool has_bn() const { return family == Family::BNFeedforward || family == Family::BNResnet; }
  /// Convolutions per layer (H for resnets, 1 otherwise).
  int convs_per_layer() const { return is_resnet() ? residual_depth : 1; }
};

/// Throws ParameterError on inconsistent counts.
void validate(const ArchitectureSpec& arch);

struct BNStats {
  std::vector<double> mean;
  std::vector<double> var;
};

BNStats batch_stats(const BatchedField& field);

PairState phi_pair_step(const PairState& state, Activation activation);

/// Batch normalization over (batch, space) per channel, with statistics treated as constants for the noise.
std::pair<PairState, BNStats> bn_pair_step(const PairState& state, double eps);

/// Normalizes with given statistics (test mode with frozen statistics).
PairState bn_apply(const PairState& state, const BNStats& stats, double eps);

PairState vanilla_layer(const PairState& state, const ConvParams& params, Activation activation);

struct BnffLayerResult {
  PairState y;
  PairState z;
  PairState x;
  BNStats stats;
};

BnffLayerResult bnff_layer(const PairState& state, const ConvParams& params, Activation activation, double eps);

struct ResnetUnitResult {
  PairState output;
  /// Per branch step h: the pre-activation (z, or the activation input without BN) then the conv output y^{l,h}.
  std::vector<PairState> substeps;
  std::vector<BNStats> stats;
};

ResnetUnitResult resnet_unit(const PairState& state, const std::vector<ConvParams>& params, Activation activation,
                             double eps, bool bn_enabled);

/// Deterministic source of He-initialized weights keyed by (seed, realization, layer, h).
///
/// Setting `resample_layer` redraws only that layer from an independent stream indexed by `resample`.
struct WeightStream {
  std::uint64_t master_seed = 0;
  std::uint64_t realization = 0;
  int resample_layer = -1;
  std::uint64_t resample = 0;

  ConvParams draw(int layer, int h, int K, int d, int c_in, int c_out) const;
};

struct Snapshot {
  int layer = 0;
  /// Branch step (1..H) for resnet sub-steps, 0 otherwise.
  int h = 0;
  Location location = Location::Input;
  const PairState* state = nullptr;
  /// For the last resnet branch step: the skip input y^{l-1}.
  const PairState* skip = nullptr;
};

using SnapshotSink = std::function<void(const Snapshot&)>;

struct PropagateOptions {
  /// When set, every BN step appends its statistics here in order of application.
  std::vector<BNStats>* record_stats = nullptr;
  /// When set, BN steps use these statistics instead of the batch's own.
  const std::vector<BNStats>* frozen_stats = nullptr;
  /// Start at this layer; the input is then the state after layer first_layer - 1.
  int first_layer = 1;
  /// Stop after this layer (inclusive); -1 runs all layers.
  int last_layer = -1;
};

/// Propagates (signal, noise) through the network, emitting snapshots in depth order.
///
/// Only the current layer's fields are held in memory. The input snapshot (layer 0) is emitted first.
/// Returns the final state.
PairState propagate(const ArchitectureSpec& arch, PairState input, const WeightStream& weights,
                    const SnapshotSink& sink, const PropagateOptions& options = {});

/// Number of snapshots emitted per layer for this architecture.
int snapshots_per_layer(const ArchitectureSpec& arch);

}  // namespace moments
