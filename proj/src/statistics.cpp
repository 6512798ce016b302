#include "moments/statistics.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "moments/error.hpp"

namespace moments {

ChannelMoments channel_moments(const BatchedField& field, int p) {
  if (p != 1 && p != 2 && p != 4) throw ParameterError("moment order must be 1, 2 or 4, got " + std::to_string(p));
  const auto X = field.matrix();
  const int C = field.channels();
  const double inv = 1.0 / static_cast<double>(X.rows());
  const Eigen::RowVectorXd mean = X.colwise().sum() * inv;
  ChannelMoments out;
  out.order = p;
  out.noncentral.resize(static_cast<std::size_t>(C));
  out.central.resize(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    const auto col = X.col(c).array();
    const auto dev = col - mean[c];
    switch (p) {
      case 1:
        out.noncentral[c] = mean[c];
        out.central[c] = dev.sum() * inv;
        break;
      case 2:
        out.noncentral[c] = col.square().sum() * inv;
        out.central[c] = dev.square().sum() * inv;
        break;
      default:
        out.noncentral[c] = col.square().square().sum() * inv;
        out.central[c] = dev.square().square().sum() * inv;
        break;
    }
    out.nu += out.noncentral[c];
    out.mu += out.central[c];
  }
  out.nu /= C;
  out.mu /= C;
  return out;
}

double centered_second_moment(const BatchedField& field) {
  const auto v = field.values();
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc / static_cast<double>(v.size());
}

double abs_first_moment(const BatchedField& field) {
  const auto v = field.values();
  double acc = 0.0;
  for (double x : v) acc += std::abs(x);
  return acc / static_cast<double>(v.size());
}

Eigen::MatrixXd feature_covariance(const BatchedField& field, Centering centering) {
  const auto X = field.matrix();
  const double inv = 1.0 / static_cast<double>(X.rows());
  const int C = field.channels();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(C, C);
  if (centering == Centering::KnownZeroMean) {
    cov.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose(), inv);
  } else {
    const Eigen::RowVectorXd mean = X.colwise().sum() * inv;
    const RowMatrix centered = X.rowwise() - mean;
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), inv);
  }
  cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
  return cov;
}

double effective_rank_from_covariance(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols()) throw ShapeError("covariance must be square");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  const double top = es.eigenvalues().maxCoeff();
  if (!(top > 0.0)) return 1.0;
  return cov.trace() / top;
}

double effective_rank(const BatchedField& field, Centering centering) {
  return effective_rank_from_covariance(feature_covariance(field, centering));
}

Sensitivity normalized_sensitivity(double mu2_noise_l, double mu2_signal_l, double mu2_noise_0, double mu2_signal_0) {
  if (!(mu2_signal_l > 0.0) || !(mu2_noise_0 > 0.0)) {
    throw DegenerateError("normalized sensitivity undefined: zero signal or input noise variance");
  }
  if (!(mu2_signal_0 > 0.0)) throw DegenerateError("normalized sensitivity undefined: zero input signal variance");
  Sensitivity s;
  s.noise_factor = (mu2_noise_l / mu2_signal_l) * (mu2_signal_0 / mu2_noise_0);
  s.chi = std::sqrt(s.noise_factor);
  s.snr = mu2_noise_l > 0.0 ? mu2_signal_l / mu2_noise_l : INFINITY;
  return s;
}

ChiStep chi_step_decomposition(double chi_input, double chi_post_bn, double chi_output) {
  if (!(chi_input > 0.0) || !(chi_post_bn > 0.0)) throw DegenerateError("chi step undefined: zero chi");
  ChiStep s;
  s.delta_chi_bn = chi_post_bn / chi_input;
  s.delta_chi_phi = chi_output / chi_post_bn;
  s.delta_chi = chi_output / chi_input;
  return s;
}

LogIncrementTerms log_increment_terms(std::span<const double> deltas) {
  std::vector<double> kept;
  kept.reserve(deltas.size());
  LogIncrementTerms t;
  for (double d : deltas) {
    if (d > 0.0 && std::isfinite(d)) {
      kept.push_back(d);
    } else {
      ++t.excluded;
    }
  }
  if (kept.size() < 2) throw DegenerateError("log increment terms need at least 2 non-degenerate realizations");
  double mean = 0.0;
  double mean_log = 0.0;
  for (double d : kept) {
    mean += d;
    mean_log += std::log(d);
  }
  mean /= static_cast<double>(kept.size());
  mean_log /= static_cast<double>(kept.size());
  t.m_bar = std::log(mean);
  t.m_under = mean_log - t.m_bar;
  t.s_under.reserve(kept.size());
  for (double d : kept) t.s_under.push_back(std::log(d) - mean_log);
  return t;
}

double coactivation_mixed_fraction(const BatchedField& y) {
  const int S = y.sites();
  const int C = y.channels();
  std::size_t mixed = 0;
  for (int s = 0; s < S; ++s) {
    for (int c = 0; c < C; ++c) {
      bool pos = false;
      bool nonpos = false;
      for (int m = 0; m < y.batch() && !(pos && nonpos); ++m) {
        if (y.at(m, s, c) > 0.0) {
          pos = true;
        } else {
          nonpos = true;
        }
      }
      if (pos && nonpos) ++mixed;
    }
  }
  return static_cast<double>(mixed) / (static_cast<double>(S) * C);
}

FitResult fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("fit inputs differ in length");
  if (x.size() < 3) throw ParameterError("a fit needs at least 3 points, got " + std::to_string(x.size()));
  const double n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw ParameterError("fit abscissae are all equal");
  FitResult f;
  f.exponent = sxy / sxx;
  f.intercept = my - f.exponent * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.exponent * x[i]);
    sse += r * r;
  }
  f.r_squared = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  f.points = static_cast<int>(x.size());
  return f;
}

namespace {

FitResult fit_log_chi(std::span<const double> chi, int first, int last, bool log_abscissa) {
  if (first < 0 || last < first || static_cast<std::size_t>(last) >= chi.size()) {
    throw ParameterError("fit layer range [" + std::to_string(first) + ", " + std::to_string(last) +
                         "] is outside the recorded layers");
  }
  if (log_abscissa && first < 1) throw ParameterError("power-law fit range must start at layer >= 1");
  std::vector<double> xs;
  std::vector<double> ys;
  for (int l = first; l <= last; ++l) {
    if (!(chi[l] > 0.0) || !std::isfinite(chi[l])) {
      throw DegenerateError("chi at layer " + std::to_string(l) + " is not positive");
    }
    xs.push_back(log_abscissa ? std::log(static_cast<double>(l)) : static_cast<double>(l));
    ys.push_back(std::log(chi[l]));
  }
  return fit_line(xs, ys);
}

}  // namespace

FitResult fit_power_law(std::span<const double> chi_by_layer, int first, int last) {
  return fit_log_chi(chi_by_layer, first, last, true);
}

FitResult fit_exponential(std::span<const double> chi_by_layer, int first, int last) {
  return fit_log_chi(chi_by_layer, first, last, false);
}

double tau_reference(double mean_delta_chi_h1, int residual_depth) {
  return 0.5 * (std::pow(mean_delta_chi_h1, 2.0 * residual_depth) - 1.0);
}

double residual_cross_term(const BatchedField& skip, const BatchedField& branch, Centering centering) {
  if (!(skip.shape() == branch.shape())) throw ShapeError("skip and branch shapes differ");
  const auto A = skip.matrix();
  const auto B = branch.matrix();
  const double inv = 1.0 / static_cast<double>(A.rows());
  if (centering == Centering::KnownZeroMean) {
    return A.cwiseProduct(B).sum() * inv / skip.channels();
  }
  const Eigen::RowVectorXd ma = A.colwise().sum() * inv;
  const Eigen::RowVectorXd mb = B.colwise().sum() * inv;
  return ((A.rowwise() - ma).array() * (B.rowwise() - mb).array()).sum() * inv / skip.channels();
}

}  // namespace moments
