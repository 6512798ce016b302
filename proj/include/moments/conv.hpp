#pragma once

#include <vector>

#include "moments/field.hpp"
#include "moments/rng.hpp"

namespace moments {

/// Periodic convolution parameters. Weights are laid out (K^d, C_in, C_out), so
/// weights[(kappa * C_in + ci) * C_out + co] is also the R x C_out kernel matrix
/// with receptive-field index r = kappa * C_in + ci.
struct ConvParams {
  int kernel_extent = 1;
  int dims = 1;
  int in_channels = 1;
  int out_channels = 1;
  int stride = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  int taps() const;
  int receptive_size() const { return taps() * in_channels; }

  ConstRowMatrixMap kernel_matrix() const;
  RowMatrixMap kernel_matrix();
};

/// Zero-initialized parameters with validated counts.
ConvParams make_conv_params(int K, int d, int c_in, int c_out, int stride = 1);

/// He initialization: iid N(0, 2 / (K^d c_in)) weights, zero bias.
ConvParams he_init_conv(int K, int d, int c_in, int c_out, Engine& rng, int stride = 1);

/// The identity 1x1 kernel on `channels` channels.
ConvParams identity_conv(int d, int channels);

enum class BiasMode { Apply, Skip };

/// Periodic convolution. Parallel over row blocks with OpenMP unless already inside a parallel region.
BatchedField conv_periodic(const BatchedField& input, const ConvParams& params, BiasMode bias = BiasMode::Apply);

/// Direct nested-loop convolution. Serial; kept as the reference for tests and benchmarks.
BatchedField conv_periodic_reference(const BatchedField& input, const ConvParams& params,
                                     BiasMode bias = BiasMode::Apply);

struct RFMatrix {
  /// Shape (M, n_out^d, R) with R = K^d C_in.
  BatchedField values;
  int kernel_extent = 1;
  int in_channels = 1;
  /// channel_index_sets[c] lists the receptive-field indices that read input channel c.
  std::vector<std::vector<int>> channel_index_sets;
};

RFMatrix receptive_field(const BatchedField& input, int K, int stride = 1);

BatchedField conv_via_receptive_field(const RFMatrix& rf, const ConvParams& params, BiasMode bias = BiasMode::Apply);

/// Output extent for a given stride; throws ShapeError for odd extents with stride 2.
int conv_output_extent(int extent, int stride);

}  // namespace moments
