#include <doctest.h>

#include <cmath>
#include <vector>

#include "moments/error.hpp"
#include "moments/rng.hpp"
#include "moments/statistics.hpp"

using namespace moments;

namespace {

BatchedField random_field(FieldShape shape, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
  BatchedField f(shape);
  Engine eng(seed);
  fill_normal(eng, f.values(), mean, sd);
  return f;
}

}  // namespace

TEST_CASE("channel moments match a hand computation") {
  // One channel holding {1, 2, 3, 6}: mean 3, central second 3.5, central fourth 24.5.
  const BatchedField f(FieldShape{2, 2, 1, 1}, std::vector<double>{1, 2, 3, 6});
  const ChannelMoments m1 = channel_moments(f, 1);
  const ChannelMoments m2 = channel_moments(f, 2);
  const ChannelMoments m4 = channel_moments(f, 4);
  CHECK(m1.noncentral[0] == doctest::Approx(3.0));
  CHECK(m2.noncentral[0] == doctest::Approx(12.5));
  CHECK(m2.central[0] == doctest::Approx(3.5));
  CHECK(m4.central[0] == doctest::Approx(24.5));
  CHECK(m4.noncentral[0] == doctest::Approx((1 + 16 + 81 + 1296) / 4.0));
  CHECK(abs_first_moment(BatchedField(FieldShape{1, 2, 1, 1}, std::vector<double>{-1, 3})) == 2.0);
  CHECK_THROWS_AS(channel_moments(f, 3), ParameterError);
}

TEST_CASE("second moment splits into variance plus squared mean") {
  const BatchedField f = random_field({6, 5, 2, 7}, 1, 0.8, 1.3);
  const ChannelMoments m1 = channel_moments(f, 1);
  const ChannelMoments m2 = channel_moments(f, 2);
  double sq = 0.0;
  for (int c = 0; c < 7; ++c) {
    CHECK(std::abs(m2.noncentral[c] - (m2.central[c] + m1.noncentral[c] * m1.noncentral[c])) < 1e-12);
    sq += m1.noncentral[c] * m1.noncentral[c];
  }
  CHECK(std::abs(m2.nu - (m2.mu + sq / 7)) < 1e-12);
}

TEST_CASE("centered second moment treats the mean as zero") {
  const BatchedField f(FieldShape{1, 2, 1, 2}, std::vector<double>{1, 2, 3, 4});
  CHECK(centered_second_moment(f) == doctest::Approx((1 + 4 + 9 + 16) / 4.0));
}

TEST_CASE("standard gaussian fourth moment is near 3") {
  const BatchedField f = random_field({200, 8, 2, 4}, 2);
  const ChannelMoments m4 = channel_moments(f, 4);
  const ChannelMoments m2 = channel_moments(f, 2);
  CHECK(m4.mu / (m2.mu * m2.mu) == doctest::Approx(3.0).epsilon(0.05));
  CHECK(abs_first_moment(f) == doctest::Approx(std::sqrt(2.0 / M_PI)).epsilon(0.02));
}

TEST_CASE("effective rank of identity, rank one and zero covariance") {
  CHECK(effective_rank_from_covariance(Eigen::MatrixXd::Identity(5, 5)) == doctest::Approx(5.0));
  Eigen::VectorXd v(4);
  v << 1, 2, -1, 0.5;
  CHECK(effective_rank_from_covariance(v * v.transpose()) == doctest::Approx(1.0));
  CHECK(effective_rank_from_covariance(Eigen::MatrixXd::Zero(3, 3)) == 1.0);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, 3);
  d.diagonal() << 4, 2, 2;
  CHECK(effective_rank_from_covariance(d) == doctest::Approx(2.0));
}

TEST_CASE("effective rank is scale invariant and bounded by the channel count") {
  const BatchedField f = random_field({20, 6, 2, 9}, 3);
  const double r = effective_rank(f);
  CHECK(r >= 1.0);
  CHECK(r <= 9.0);
  CHECK(effective_rank(3.0 * f) == doctest::Approx(r).epsilon(1e-12));
  // Duplicated channels collapse the spectrum.
  BatchedField dup(FieldShape{20, 6, 2, 2});
  for (int m = 0; m < 20; ++m) {
    for (int s = 0; s < 36; ++s) dup.at(m, s, 0) = dup.at(m, s, 1) = f.at(m, s, 0);
  }
  CHECK(effective_rank(dup) == doctest::Approx(1.0));
}

TEST_CASE("known zero mean covariance is the gram matrix") {
  const BatchedField f = random_field({4, 3, 1, 3}, 4, 2.0);
  const Eigen::MatrixXd gram = feature_covariance(f, Centering::KnownZeroMean);
  const auto X = f.matrix();
  const Eigen::MatrixXd expected = X.transpose() * X / static_cast<double>(X.rows());
  CHECK((gram - expected).cwiseAbs().maxCoeff() < 1e-12);
  const Eigen::MatrixXd cov = feature_covariance(f);
  const Eigen::RowVectorXd mean = X.colwise().mean();
  CHECK((cov - (expected - mean.transpose() * mean)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("normalized sensitivity") {
  const Sensitivity s = normalized_sensitivity(4e-6, 2.0, 1e-6, 2.0);
  CHECK(s.chi == doctest::Approx(2.0));
  CHECK(s.noise_factor == doctest::Approx(4.0));
  CHECK(s.snr == doctest::Approx(5e5));
  CHECK(normalized_sensitivity(1e-6, 1.0, 1e-6, 1.0).chi == doctest::Approx(1.0));
  CHECK_THROWS_AS(normalized_sensitivity(1e-6, 0.0, 1e-6, 1.0), DegenerateError);
  CHECK_THROWS_AS(normalized_sensitivity(1e-6, 1.0, 0.0, 1.0), DegenerateError);
}

TEST_CASE("chi step factors multiply to the total") {
  const ChiStep s = chi_step_decomposition(1.5, 1.8, 2.7);
  CHECK(s.delta_chi_bn == doctest::Approx(1.2));
  CHECK(s.delta_chi_phi == doctest::Approx(1.5));
  CHECK(std::abs(s.delta_chi - s.delta_chi_bn * s.delta_chi_phi) < 1e-12);
}

TEST_CASE("log increment terms") {
  const std::vector<double> d = {1.0, 2.0, 4.0, 0.0, NAN};
  const LogIncrementTerms t = log_increment_terms(d);
  CHECK(t.excluded == 2);
  CHECK(t.m_bar == doctest::Approx(std::log(7.0 / 3.0)));
  const double mean_log = std::log(2.0);
  CHECK(t.m_under == doctest::Approx(mean_log - std::log(7.0 / 3.0)));
  CHECK(t.m_under <= 0.0);
  REQUIRE(t.s_under.size() == 3);
  CHECK(t.s_under[0] + t.s_under[1] + t.s_under[2] == doctest::Approx(0.0));
  const std::vector<double> constant = {3.0, 3.0, 3.0};
  CHECK(log_increment_terms(constant).m_under == doctest::Approx(0.0));
  const std::vector<double> too_few = {1.0, -1.0};
  CHECK_THROWS_AS(log_increment_terms(too_few), DegenerateError);
}

TEST_CASE("coactivation fraction counts units with mixed signs") {
  // Two samples, two sites, one channel: site 0 mixed, site 1 always positive.
  const BatchedField y(FieldShape{2, 2, 1, 1}, std::vector<double>{1.0, 2.0, -1.0, 3.0});
  CHECK(coactivation_mixed_fraction(y) == 0.5);
  const BatchedField zeros(FieldShape{3, 2, 1, 2}, 0.0);
  CHECK(coactivation_mixed_fraction(zeros) == 0.0);
  CHECK(coactivation_mixed_fraction(random_field({64, 4, 2, 3}, 5)) == 1.0);
}

TEST_CASE("line fits recover exact laws") {
  std::vector<double> power(31, NAN);
  std::vector<double> expo(31, NAN);
  for (int l = 1; l <= 30; ++l) {
    power[l] = 1.7 * std::pow(l, 0.35);
    expo[l] = 0.9 * std::exp(0.04 * l);
  }
  const FitResult p = fit_power_law(power, 5, 30);
  CHECK(p.exponent == doctest::Approx(0.35));
  CHECK(p.intercept == doctest::Approx(std::log(1.7)));
  CHECK(p.r_squared == doctest::Approx(1.0));
  CHECK(p.points == 26);
  const FitResult e = fit_exponential(expo, 1, 30);
  CHECK(e.exponent == doctest::Approx(0.04));
  CHECK(e.r_squared == doctest::Approx(1.0));
  CHECK_THROWS_AS(fit_power_law(power, 5, 6), ParameterError);
  const std::vector<double> x = {0, 1};
  CHECK_THROWS_AS(fit_line(x, x), ParameterError);
}

TEST_CASE("tau reference") {
  CHECK(tau_reference(1.0, 2) == 0.0);
  CHECK(tau_reference(std::sqrt(2.0), 1) == doctest::Approx(0.5));
  CHECK(tau_reference(1.1, 2) == doctest::Approx(0.5 * (std::pow(1.1, 4) - 1)));
}

TEST_CASE("residual cross term") {
  const BatchedField a = random_field({50, 6, 2, 4}, 6);
  CHECK(residual_cross_term(a, a) == doctest::Approx(channel_moments(a, 2).mu));
  CHECK(residual_cross_term(a, -1.0 * a) == doctest::Approx(-channel_moments(a, 2).mu));
  CHECK(residual_cross_term(a, random_field({50, 6, 2, 4}, 7)) == doctest::Approx(0.0).epsilon(0.05));
  BatchedField shifted = a;
  for (double& v : shifted.values()) v += 5.0;
  CHECK(residual_cross_term(a, shifted) == doctest::Approx(residual_cross_term(a, a)));
  CHECK(residual_cross_term(a, a, Centering::KnownZeroMean) == doctest::Approx(centered_second_moment(a)));
  CHECK_THROWS_AS(residual_cross_term(a, random_field({50, 6, 2, 3}, 8)), ShapeError);
}
