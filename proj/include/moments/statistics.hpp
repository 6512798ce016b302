#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "moments/field.hpp"

namespace moments {

struct ChannelMoments {
  int order = 2;
  /// nu_{p,c}: mean of v^p over (m, site).
  std::vector<double> noncentral;
  /// mu_{p,c}: mean of (v - nu_{1,c})^p over (m, site).
  std::vector<double> central;
  double nu = 0.0;
  double mu = 0.0;
};

/// Population moments per channel, p in {1, 2, 4}.
ChannelMoments channel_moments(const BatchedField& field, int p);

/// Channel-averaged second moment with the mean known to be zero (noise fields).
double centered_second_moment(const BatchedField& field);

double abs_first_moment(const BatchedField& field);

enum class Centering { Empirical, KnownZeroMean };

/// C x C population covariance of the feature vectors (rows).
Eigen::MatrixXd feature_covariance(const BatchedField& field, Centering centering = Centering::Empirical);

/// trace / spectral norm; 1 for a zero matrix.
double effective_rank_from_covariance(const Eigen::MatrixXd& cov);

double effective_rank(const BatchedField& field, Centering centering = Centering::Empirical);

struct Sensitivity {
  double chi = 1.0;
  double snr = 0.0;
  double noise_factor = 1.0;
};

/// chi = sqrt(mu2(dx^l) / mu2(x^l)) * sqrt(mu2(x^0) / mu2(dx^0)). Throws DegenerateError on a zero denominator.
Sensitivity normalized_sensitivity(double mu2_noise_l, double mu2_signal_l, double mu2_noise_0, double mu2_signal_0);

struct ChiStep {
  double delta_chi = 1.0;
  double delta_chi_bn = 1.0;
  double delta_chi_phi = 1.0;
};

/// Splits a BN step input -> post-BN -> output into its two factors.
ChiStep chi_step_decomposition(double chi_input, double chi_post_bn, double chi_output);

struct LogIncrementTerms {
  double m_bar = 0.0;
  double m_under = 0.0;
  std::vector<double> s_under;
  std::size_t excluded = 0;
};

/// Terms of log delta across realizations; non-positive or non-finite deltas are excluded and counted.
LogIncrementTerms log_increment_terms(std::span<const double> deltas);

/// Fraction of (site, channel) units whose sign is not constant over the batch.
double coactivation_mixed_fraction(const BatchedField& preactivation);

struct FitResult {
  double exponent = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  int points = 0;
};

/// Ordinary least squares y = a + b x. Throws ParameterError with fewer than 3 points.
FitResult fit_line(std::span<const double> x, std::span<const double> y);

/// Fits log chi against log l over layers [first, last]; `chi_by_layer[l]` holds layer l.
FitResult fit_power_law(std::span<const double> chi_by_layer, int first, int last);

/// Fits log chi against l over layers [first, last].
FitResult fit_exponential(std::span<const double> chi_by_layer, int first, int last);

/// 1/2 ((mean delta chi^{l,1})^{2H} - 1).
double tau_reference(double mean_delta_chi_h1, int residual_depth);

/// Mean over (m, site, c) of the product of the centered skip and branch fields.
double residual_cross_term(const BatchedField& skip, const BatchedField& branch,
                           Centering centering = Centering::Empirical);

}  // namespace moments
