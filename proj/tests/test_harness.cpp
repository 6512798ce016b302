#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "moments/error.hpp"
#include "moments/harness.hpp"
#include "moments/statistics.hpp"

using namespace moments;

namespace {

ExperimentConfig tiny_config(Family family, int L) {
  ExperimentConfig c;
  c.arch.family = family;
  c.arch.depth = L;
  c.arch.width = 8;
  c.arch.input_channels = 8;
  c.arch.spatial_extent = 4;
  c.data_channels = 8;
  c.batch = 4;
  c.realizations = 4;
  return c;
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments_of(const BatchedField& f) {
  Moments m;
  for (double v : f.values()) m.mean += v;
  m.mean /= static_cast<double>(f.size());
  for (double v : f.values()) m.var += (v - m.mean) * (v - m.mean);
  m.var /= static_cast<double>(f.size());
  return m;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("moments_test_" + name);
}

}  // namespace

TEST_CASE("gaussian mixture input has mean 0 and variance 1.09") {
  Engine eng(1);
  const BatchedField f = generate_input(InputKind::GaussianMixture, 1000000, 1, 1, 1, eng);
  const Moments m = moments_of(f);
  CHECK(std::abs(m.mean) < 0.01);
  CHECK(std::abs(m.var / 1.09 - 1.0) < 0.01);
  Engine bad(1);
  CHECK_THROWS_AS(generate_input(InputKind::GaussianMixture, 4, 2, 1, 1, bad), ConfigError);
  CHECK_THROWS_AS(generate_input(InputKind::GaussianMixture, 4, 1, 1, 2, bad), ConfigError);
}

TEST_CASE("iid input is standard normal and replayable") {
  Engine a(2);
  const BatchedField f = generate_input(InputKind::GaussianIID, 1000, 8, 2, 16, a);
  REQUIRE(f.size() >= 1000000);
  CHECK(std::abs(moments_of(f).var - 1.0) < 0.01);
  Engine b(2);
  const BatchedField g = generate_input(InputKind::GaussianIID, 1000, 8, 2, 16, b);
  CHECK(std::equal(f.values().begin(), f.values().end(), g.values().begin()));
}

TEST_CASE("input noise is iid with variance sigma^2") {
  Engine eng(3);
  const double sigma = 1e-3;
  const BatchedField dx = generate_noise(250000, 1, 1, 4, sigma, eng);
  const Moments m = moments_of(dx);
  const double n = static_cast<double>(dx.size());
  CHECK(std::abs(m.var / (sigma * sigma) - 1.0) < 0.02);
  CHECK(std::abs(m.mean) < 5.0 * sigma / std::sqrt(n));
  const Eigen::MatrixXd cov = feature_covariance(dx, Centering::KnownZeroMean);
  const double se = sigma * sigma / std::sqrt(static_cast<double>(dx.rows()));
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if (i != j) CHECK(std::abs(cov(i, j)) < 5.0 * se);
    }
  }
  CHECK_THROWS_AS(generate_noise(2, 1, 1, 1, 0.0, eng), ParameterError);
}

TEST_CASE("dataset records are scaled and globally standardized") {
  const auto path = temp_path("dataset.bin");
  std::vector<unsigned char> bytes(2 * 3073, 0);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<unsigned char>((i * 37) % 256);
  bytes[0] = 7;
  bytes[3073] = 9;
  bytes[1] = 255;
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  const BatchedField f = load_dataset_binary(path.string());
  CHECK(f.batch() == 2);
  CHECK(f.extent() == 32);
  CHECK(f.dims() == 2);
  CHECK(f.channels() == 3);
  const Moments m = moments_of(f);
  CHECK(std::abs(m.mean) < 1e-9);
  CHECK(std::abs(m.var - 1.0) < 1e-9);

  std::vector<double> raw;
  for (int r = 0; r < 2; ++r) {
    for (int k = 1; k < 3073; ++k) raw.push_back(bytes[static_cast<std::size_t>(r * 3073 + k)] / 255.0);
  }
  CHECK(raw[0] == 1.0);
  double mean = 0.0;
  for (double v : raw) mean += v;
  mean /= static_cast<double>(raw.size());
  double var = 0.0;
  for (double v : raw) var += (v - mean) * (v - mean);
  var /= static_cast<double>(raw.size());
  CHECK(std::abs(f.at(0, 0, 0) - (1.0 - mean) / std::sqrt(var)) < 1e-12);
  // Second plane of the second record, site 5.
  const double expected = (bytes[3073 + 1 + 1024 + 5] / 255.0 - mean) / std::sqrt(var);
  CHECK(std::abs(f.at(1, 5, 1) - expected) < 1e-12);

  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), 3000);
  }
  CHECK_THROWS_AS(load_dataset_binary(path.string()), IoError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_dataset_binary(path.string()), IoError);
}

TEST_CASE("single realization gives count 1 at every metric") {
  ExperimentConfig c = tiny_config(Family::Vanilla, 3);
  c.realizations = 1;
  const RunResult r = run_experiment(c);
  CHECK_FALSE(r.aggregate.entries().empty());
  for (const auto& [key, acc] : r.aggregate.entries()) CHECK(acc.count() == 1);
  for (int l = 1; l <= 3; ++l) CHECK(r.aggregate.find(l, "chi") != nullptr);
  CHECK(r.record.realizations == 1);
  CHECK(r.record.realization_seconds.size() == 1);
}

TEST_CASE("thread count does not change the aggregate") {
  for (Family f : {Family::Vanilla, Family::BNFeedforward, Family::BNResnet}) {
    ExperimentConfig c = tiny_config(f, 3);
    c.threads = 1;
    const RunResult a = run_experiment(c);
    c.threads = 4;
    const RunResult b = run_experiment(c);
    REQUIRE(a.aggregate.entries().size() == b.aggregate.entries().size());
    auto it = b.aggregate.entries().begin();
    for (const auto& [key, acc] : a.aggregate.entries()) {
      CHECK(key == it->first);
      CHECK(std::abs(acc.mean() - it->second.mean()) <= 1e-12 * std::max(1.0, std::abs(acc.mean())));
      CHECK(acc.count() == it->second.count());
      ++it;
    }
    CHECK(a.record.digest == b.record.digest);
  }
}

TEST_CASE("per-realization input mode draws different batches") {
  ExperimentConfig c = tiny_config(Family::Vanilla, 2);
  const BatchedField shared0 = experiment_input(c, 0);
  const BatchedField shared1 = experiment_input(c, 1);
  CHECK(std::equal(shared0.values().begin(), shared0.values().end(), shared1.values().begin()));
  c.fixed_input = false;
  const BatchedField own0 = experiment_input(c, 0);
  const BatchedField own1 = experiment_input(c, 1);
  CHECK_FALSE(std::equal(own0.values().begin(), own0.values().end(), own1.values().begin()));
  CHECK_NOTHROW(run_experiment(c));
}

TEST_CASE("initial convolution maps data channels to the width") {
  ExperimentConfig c = tiny_config(Family::BNResnet, 2);
  c.initial_conv_stride = 2;
  c.data_channels = 3;
  validate(c);
  CHECK(c.data_extent() == 8);
  const BatchedField data = experiment_input(c, 0);
  CHECK(data.extent() == 8);
  CHECK(data.channels() == 3);
  const PairState in = network_input(c, data, unit_noise(c, 0), c.sigma_dx, 0);
  CHECK(in.signal.extent() == 4);
  CHECK(in.signal.channels() == 8);
  CHECK_NOTHROW(run_experiment(c));
}

TEST_CASE("invalid experiment configs are rejected") {
  ExperimentConfig c = tiny_config(Family::Vanilla, 3);
  c.realizations = 0;
  CHECK_THROWS_AS(run_experiment(c), ConfigError);
  c = tiny_config(Family::Vanilla, 3);
  c.probe_layers = {4};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = tiny_config(Family::BNFeedforward, 3);
  c.batch = 1;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = tiny_config(Family::Vanilla, 3);
  c.input_kind = InputKind::GaussianMixture;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = tiny_config(Family::Vanilla, 3);
  c.metrics = {"not_a_metric"};
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("finite difference residual vanishes for a linear net") {
  ExperimentConfig c = tiny_config(Family::Vanilla, 4);
  c.arch.activation = Activation::Linear;
  c.realizations = 2;
  const auto rows = finite_difference_validate(c, {1e-2, 1e-3, 1e-4});
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.ratio <= 1e-12);
    CHECK(r.noise_moment > 0.0);
  }
  c.arch.activation = Activation::ReLU;
  c.realizations = 1;
  CHECK(finite_difference_validate(c, {1e-1})[0].ratio > 0.0);
  CHECK_THROWS_AS(finite_difference_validate(c, {1e-4, 1e-3}), ParameterError);
  CHECK_THROWS_AS(finite_difference_validate(c, {}), ParameterError);
}

TEST_CASE("frozen bn statistics make the finite difference of a linear bn net exact") {
  ExperimentConfig c = tiny_config(Family::BNFeedforward, 3);
  c.arch.activation = Activation::Linear;
  c.realizations = 1;
  for (const auto& r : finite_difference_validate(c, {1e-2, 1e-3})) CHECK(r.ratio <= 1e-12);
}

TEST_CASE("exact jacobian chi matches a closed form for one linear layer") {
  ArchitectureSpec arch;
  arch.family = Family::Vanilla;
  arch.depth = 1;
  arch.width = 4;
  arch.input_channels = 3;
  arch.kernel_extent = 1;
  arch.spatial_extent = 1;
  arch.spatial_dims = 1;
  arch.activation = Activation::Linear;
  Engine eng(5);
  const BatchedField x = generate_input(InputKind::GaussianIID, 16, 1, 1, 3, eng);
  const WeightStream ws{11, 0};
  const ConvParams W = ws.draw(1, 0, 1, 1, 3, 4);

  double frob = 0.0;
  for (double w : W.weights) frob += w * w;
  std::vector<double> y(16 * 4, 0.0);
  for (int m = 0; m < 16; ++m) {
    for (int co = 0; co < 4; ++co) {
      for (int ci = 0; ci < 3; ++ci) y[m * 4 + co] += W.weights[ci * 4 + co] * x.at(m, 0, ci);
    }
  }
  double mu2_out = 0.0;
  for (int co = 0; co < 4; ++co) {
    double mean = 0.0;
    for (int m = 0; m < 16; ++m) mean += y[m * 4 + co] / 16.0;
    for (int m = 0; m < 16; ++m) mu2_out += (y[m * 4 + co] - mean) * (y[m * 4 + co] - mean) / 16.0;
  }
  mu2_out /= 4.0;
  const double mu2_in = channel_moments(x, 2).mu;
  const double expected = std::sqrt((frob / 4.0) / mu2_out * mu2_in);
  CHECK(std::abs(jacobian_exact_chi(arch, x, ws) - expected) < 1e-12);

  arch.spatial_extent = 2;
  Engine e2(6);
  const BatchedField wide = generate_input(InputKind::GaussianIID, 4, 2, 1, 3, e2);
  CHECK_THROWS_AS(jacobian_exact_chi(arch, wide, ws), UnsupportedError);
}

TEST_CASE("monte carlo chi converges to the exact jacobian chi") {
  ArchitectureSpec arch;
  arch.family = Family::Vanilla;
  arch.depth = 2;
  arch.width = 4;
  arch.input_channels = 3;
  arch.kernel_extent = 1;
  arch.spatial_extent = 1;
  arch.spatial_dims = 1;
  Engine eng(7);
  const BatchedField x = generate_input(InputKind::GaussianIID, 8, 1, 1, 3, eng);
  const WeightStream ws{13, 0};
  const double exact = jacobian_exact_chi(arch, x, ws);
  Engine noise(8);
  const MonteCarloChi mc = monte_carlo_chi(arch, x, ws, 20000, 1e-3, noise);
  CHECK(mc.draws == 20000);
  CHECK(mc.stderr_chi > 0.0);
  CHECK(std::abs(mc.chi - exact) < 4.0 * mc.stderr_chi);
}

TEST_CASE("fc demo panels") {
  const FcDemoResult r = fc_demo(3, 500, 1e-3);
  CHECK(r.samples.size() == 3 * 500);
  int bn_layers = 0;
  for (const auto& c : r.chi) {
    CHECK(std::isfinite(c.chi));
    CHECK(c.chi > 0.0);
    if (c.panel == "c_bn_feedforward") ++bn_layers;
    if (c.panel == "b_linear") CHECK(std::abs(c.chi - 1.0) < 1e-12);
  }
  CHECK(bn_layers == 10);
}
