#include "moments/conv.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <omp.h>

#include "moments/error.hpp"

namespace moments {

namespace {

constexpr int kRowBlock = 512;

void check_counts(int K, int d, int c_in, int c_out, int stride) {
  if (K < 1 || K % 2 == 0) throw ParameterError("kernel extent must be odd and >= 1, got " + std::to_string(K));
  if (d != 1 && d != 2) throw ParameterError("spatial dims must be 1 or 2, got " + std::to_string(d));
  if (c_in < 1 || c_out < 1) throw ParameterError("channel counts must be >= 1");
  if (stride != 1 && stride != 2) throw ParameterError("stride must be 1 or 2, got " + std::to_string(stride));
}

void check_input(const BatchedField& input, const ConvParams& p) {
  if (input.channels() != p.in_channels) {
    throw ShapeError("input has " + std::to_string(input.channels()) + " channels, kernel expects " +
                     std::to_string(p.in_channels));
  }
  if (input.dims() != p.dims) throw ShapeError("input spatial dims do not match kernel dims");
  if (p.weights.size() != static_cast<std::size_t>(p.receptive_size()) * static_cast<std::size_t>(p.out_channels)) {
    throw ShapeError("weight array size does not match (K^d, C_in, C_out)");
  }
  if (p.bias.size() != static_cast<std::size_t>(p.out_channels)) throw ShapeError("bias length != out_channels");
}

int wrap(int i, int n) {
  int r = i % n;
  return r < 0 ? r + n : r;
}

/// table[out_site * taps + kappa] = input site read by tap kappa at output site out_site.
std::vector<int> tap_table(int n, int d, int K, int stride) {
  const int n_out = conv_output_extent(n, stride);
  const int off = K / 2;
  const int taps = d == 1 ? K : K * K;
  const int out_sites = d == 1 ? n_out : n_out * n_out;
  std::vector<int> table(static_cast<std::size_t>(out_sites) * taps);
  for (int os = 0; os < out_sites; ++os) {
    if (d == 1) {
      for (int a = 0; a < K; ++a) table[os * taps + a] = wrap(stride * os + a - off, n);
    } else {
      const int i = os / n_out;
      const int j = os % n_out;
      for (int a = 0; a < K; ++a) {
        for (int b = 0; b < K; ++b) {
          const int si = wrap(stride * i + a - off, n);
          const int sj = wrap(stride * j + b - off, n);
          table[os * taps + a * K + b] = si * n + sj;
        }
      }
    }
  }
  return table;
}

/// Copies the receptive-field rows [r0, r0 + nr) of `input` into `patch`.
void gather_rows(const BatchedField& input, const std::vector<int>& table, int taps, int out_sites, std::size_t r0,
                 int nr, double* patch) {
  const int c_in = input.channels();
  const int s_in = input.sites();
  const double* src = input.values().data();
  const std::size_t R = static_cast<std::size_t>(taps) * c_in;
  for (int i = 0; i < nr; ++i) {
    const std::size_t row = r0 + static_cast<std::size_t>(i);
    const std::size_t m = row / static_cast<std::size_t>(out_sites);
    const int os = static_cast<int>(row % static_cast<std::size_t>(out_sites));
    double* dst = patch + static_cast<std::size_t>(i) * R;
    for (int k = 0; k < taps; ++k) {
      const double* from = src + (m * static_cast<std::size_t>(s_in) + table[os * taps + k]) * c_in;
      std::copy(from, from + c_in, dst + static_cast<std::size_t>(k) * c_in);
    }
  }
}

FieldShape output_shape(const BatchedField& input, const ConvParams& p) {
  return {input.batch(), conv_output_extent(input.extent(), p.stride), input.dims(), p.out_channels};
}

}  // namespace

int ConvParams::taps() const { return dims == 1 ? kernel_extent : kernel_extent * kernel_extent; }

ConstRowMatrixMap ConvParams::kernel_matrix() const { return {weights.data(), receptive_size(), out_channels}; }

RowMatrixMap ConvParams::kernel_matrix() { return {weights.data(), receptive_size(), out_channels}; }

int conv_output_extent(int extent, int stride) {
  if (stride == 1) return extent;
  if (stride == 2) {
    if (extent % 2 != 0) throw ShapeError("stride 2 requires an even spatial extent, got " + std::to_string(extent));
    return extent / 2;
  }
  throw ParameterError("stride must be 1 or 2, got " + std::to_string(stride));
}

ConvParams make_conv_params(int K, int d, int c_in, int c_out, int stride) {
  check_counts(K, d, c_in, c_out, stride);
  ConvParams p;
  p.kernel_extent = K;
  p.dims = d;
  p.in_channels = c_in;
  p.out_channels = c_out;
  p.stride = stride;
  p.weights.assign(static_cast<std::size_t>(p.receptive_size()) * c_out, 0.0);
  p.bias.assign(static_cast<std::size_t>(c_out), 0.0);
  return p;
}

ConvParams he_init_conv(int K, int d, int c_in, int c_out, Engine& rng, int stride) {
  ConvParams p = make_conv_params(K, d, c_in, c_out, stride);
  const double var = 2.0 / static_cast<double>(p.receptive_size());
  fill_normal(rng, p.weights, 0.0, std::sqrt(var));
  return p;
}

ConvParams identity_conv(int d, int channels) {
  ConvParams p = make_conv_params(1, d, channels, channels);
  for (int c = 0; c < channels; ++c) p.weights[static_cast<std::size_t>(c) * channels + c] = 1.0;
  return p;
}

BatchedField conv_periodic(const BatchedField& input, const ConvParams& params, BiasMode bias) {
  check_input(input, params);
  BatchedField out(output_shape(input, params));
  const std::vector<int> table = tap_table(input.extent(), input.dims(), params.kernel_extent, params.stride);
  const int taps = params.taps();
  const int R = params.receptive_size();
  const int out_sites = out.sites();
  const std::size_t rows = out.rows();
  const long nblocks = static_cast<long>((rows + kRowBlock - 1) / kRowBlock);
  const auto W = params.kernel_matrix();
  const Eigen::Map<const Eigen::RowVectorXd> b(params.bias.data(), params.out_channels);
  auto Y = out.matrix();

#pragma omp parallel if (nblocks > 1 && !omp_in_parallel())
  {
    RowMatrix patch(kRowBlock, R);
#pragma omp for schedule(static)
    for (long blk = 0; blk < nblocks; ++blk) {
      const std::size_t r0 = static_cast<std::size_t>(blk) * kRowBlock;
      const int nr = static_cast<int>(std::min<std::size_t>(kRowBlock, rows - r0));
      gather_rows(input, table, taps, out_sites, r0, nr, patch.data());
      auto dst = Y.middleRows(static_cast<Eigen::Index>(r0), nr);
      dst.noalias() = patch.topRows(nr) * W;
      if (bias == BiasMode::Apply) dst.rowwise() += b;
    }
  }
  return out;
}

BatchedField conv_periodic_reference(const BatchedField& input, const ConvParams& params, BiasMode bias) {
  check_input(input, params);
  BatchedField out(output_shape(input, params));
  const int n = input.extent();
  const int n_out = out.extent();
  const int d = input.dims();
  const int K = params.kernel_extent;
  const int off = K / 2;
  const int s = params.stride;
  const int c_in = params.in_channels;
  const int c_out = params.out_channels;
  for (int m = 0; m < input.batch(); ++m) {
    for (int os = 0; os < out.sites(); ++os) {
      const int i = d == 1 ? os : os / n_out;
      const int j = d == 1 ? 0 : os % n_out;
      for (int co = 0; co < c_out; ++co) {
        double acc = bias == BiasMode::Apply ? params.bias[co] : 0.0;
        for (int a = 0; a < K; ++a) {
          for (int bb = 0; bb < (d == 1 ? 1 : K); ++bb) {
            const int kappa = d == 1 ? a : a * K + bb;
            const int site = d == 1 ? wrap(s * i + a - off, n) : wrap(s * i + a - off, n) * n + wrap(s * j + bb - off, n);
            for (int ci = 0; ci < c_in; ++ci) {
              acc += params.weights[(static_cast<std::size_t>(kappa) * c_in + ci) * c_out + co] * input.at(m, site, ci);
            }
          }
        }
        out.at(m, os, co) = acc;
      }
    }
  }
  return out;
}

RFMatrix receptive_field(const BatchedField& input, int K, int stride) {
  check_counts(K, input.dims(), input.channels(), 1, stride);
  const int taps = input.dims() == 1 ? K : K * K;
  const int c_in = input.channels();
  RFMatrix rf;
  rf.kernel_extent = K;
  rf.in_channels = c_in;
  rf.values = BatchedField(
      FieldShape{input.batch(), conv_output_extent(input.extent(), stride), input.dims(), taps * c_in});
  const std::vector<int> table = tap_table(input.extent(), input.dims(), K, stride);
  gather_rows(input, table, taps, rf.values.sites(), 0, static_cast<int>(rf.values.rows()),
              rf.values.values().data());
  rf.channel_index_sets.assign(static_cast<std::size_t>(c_in), {});
  for (int k = 0; k < taps; ++k) {
    for (int c = 0; c < c_in; ++c) rf.channel_index_sets[c].push_back(k * c_in + c);
  }
  return rf;
}

BatchedField conv_via_receptive_field(const RFMatrix& rf, const ConvParams& params, BiasMode bias) {
  if (rf.kernel_extent != params.kernel_extent || rf.in_channels != params.in_channels ||
      rf.values.channels() != params.receptive_size() || rf.values.dims() != params.dims) {
    throw ShapeError("receptive field does not match the kernel geometry");
  }
  const FieldShape shape{rf.values.batch(), rf.values.extent(), rf.values.dims(), params.out_channels};
  BatchedField out(shape);
  out.matrix().noalias() = rf.values.matrix() * params.kernel_matrix();
  if (bias == BiasMode::Apply) {
    out.matrix().rowwise() += Eigen::Map<const Eigen::RowVectorXd>(params.bias.data(), params.out_channels);
  }
  return out;
}

}  // namespace moments
