#include "moments/meter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "moments/error.hpp"
#include "moments/statistics.hpp"

namespace moments {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::vector<std::string>& output_metrics() {
  static const std::vector<std::string> m = {
      metric::nu2_signal,       metric::mu2_signal,       metric::mu2_noise,      metric::chi,
      metric::delta_chi,        metric::delta_nu2_signal, metric::delta_mu2_noise, metric::nu2_signal_ratio,
      metric::mu2_noise_ratio,  metric::log_nu2_signal,   metric::log_mu2_noise,
  };
  return m;
}

double ratio(double a, double b) { return b > 0.0 ? a / b : kNaN; }

double log_ratio(double a, double b) { return a > 0.0 && b > 0.0 ? std::log(a / b) : kNaN; }

}  // namespace

const std::vector<std::string>& all_metrics() {
  static const std::vector<std::string> m = [] {
    std::vector<std::string> v = output_metrics();
    for (const auto* name : {&metric::delta_chi_bn, &metric::delta_chi_phi, &metric::delta_chi_h1, &metric::reff_signal,
                             &metric::reff_noise, &metric::mu4_z, &metric::nu1_abs_z, &metric::coactivation_mixed,
                             &metric::cross_term_signal, &metric::cross_term_noise, &metric::branch_mu2_signal}) {
      v.push_back(*name);
    }
    return v;
  }();
  return m;
}

std::vector<std::string> family_metrics(Family family) {
  std::vector<std::string> v;
  for (const auto& name : all_metrics()) {
    try {
      metric_substep(family, name);
      v.push_back(name);
    } catch (const ParameterError&) {
    }
  }
  return v;
}

std::string metric_substep(Family family, const std::string& name) {
  const bool base = std::find(output_metrics().begin(), output_metrics().end(), name) != output_metrics().end();
  switch (family) {
    case Family::Vanilla:
      if (base || name == metric::reff_signal || name == metric::reff_noise) return "x";
      if (name == metric::coactivation_mixed) return "y";
      break;
    case Family::BNFeedforward:
      if (base || name == metric::reff_signal || name == metric::reff_noise || name == metric::delta_chi_phi) {
        return "x";
      }
      if (name == metric::delta_chi_bn || name == metric::mu4_z || name == metric::nu1_abs_z ||
          name == metric::coactivation_mixed) {
        return "z";
      }
      break;
    case Family::BNResnet:
    case Family::ResnetNoBN: {
      const bool bn = family == Family::BNResnet;
      if (base) return "agg";
      if (bn && (name == metric::delta_chi_bn || name == metric::mu4_z || name == metric::nu1_abs_z)) return "z1";
      if (name == metric::reff_signal || name == metric::reff_noise) return "x1";
      if (name == metric::delta_chi_h1 || (bn && name == metric::delta_chi_phi)) return "y1";
      if (name == metric::cross_term_signal || name == metric::cross_term_noise ||
          name == metric::branch_mu2_signal) {
        return "branch";
      }
      break;
    }
  }
  throw ParameterError("metric '" + name + "' is not measured for family " + to_string(family));
}

bool RealizationStats::any_degenerate() const {
  for (char d : degenerate) {
    if (d) return true;
  }
  return false;
}

Meter::Meter(const ArchitectureSpec& arch, std::set<std::string> metrics) : arch_(arch), metrics_(std::move(metrics)) {
  validate(arch_);
  for (const auto& name : metrics_) metric_substep(arch_.family, name);
  stats_.degenerate.assign(static_cast<std::size_t>(arch_.depth) + 1, 0);
}

bool Meter::want(const std::string& name) const { return metrics_.empty() || metrics_.contains(name); }

void Meter::record(int layer, const std::string& substep, const std::string& name, double value) {
  if (!want(name) || !std::isfinite(value)) return;
  stats_.values.push_back({layer, substep, name, value});
}

Meter::Level Meter::measure(const PairState& s, bool moments_only) const {
  const ChannelMoments m = channel_moments(s.signal, 2);
  Level lv;
  lv.nu2 = m.nu;
  lv.mu2 = m.mu;
  lv.mu2_noise = centered_second_moment(s.noise);
  lv.chi = moments_only ? kNaN : chi_of(lv.mu2_noise, lv.mu2);
  return lv;
}

double Meter::chi_of(double mu2_noise, double mu2_signal) const {
  try {
    return normalized_sensitivity(mu2_noise, mu2_signal, ref_.mu2_noise, ref_.mu2).chi;
  } catch (const DegenerateError&) {
    return kNaN;
  }
}

void Meter::on_input(const PairState& s) {
  ref_ = measure(s, true);
  ref_.chi = ref_.mu2 > 0.0 && ref_.mu2_noise > 0.0 ? 1.0 : kNaN;
  prev_ = ref_;
  if (!std::isfinite(ref_.chi)) stats_.degenerate[0] = 1;
}

void Meter::layer_output(int layer, const std::string& sub, const PairState& s, bool with_rank) {
  const Level lv = measure(s);
  const bool degenerate =
      !(lv.nu2 > 0.0) || !(lv.mu2 > 0.0) || !(lv.mu2_noise > 0.0) || !std::isfinite(lv.nu2 + lv.mu2_noise);
  if (degenerate) stats_.degenerate[static_cast<std::size_t>(layer)] = 1;
  record(layer, sub, metric::nu2_signal, lv.nu2);
  record(layer, sub, metric::mu2_signal, lv.mu2);
  record(layer, sub, metric::mu2_noise, lv.mu2_noise);
  record(layer, sub, metric::chi, lv.chi);
  record(layer, sub, metric::delta_chi, ratio(lv.chi, prev_.chi));
  record(layer, sub, metric::delta_nu2_signal, ratio(lv.nu2, prev_.nu2));
  record(layer, sub, metric::delta_mu2_noise, ratio(lv.mu2_noise, prev_.mu2_noise));
  record(layer, sub, metric::nu2_signal_ratio, ratio(lv.nu2, ref_.nu2));
  record(layer, sub, metric::mu2_noise_ratio, ratio(lv.mu2_noise, ref_.mu2_noise));
  record(layer, sub, metric::log_nu2_signal, log_ratio(lv.nu2, ref_.nu2));
  record(layer, sub, metric::log_mu2_noise, log_ratio(lv.mu2_noise, ref_.mu2_noise));
  if (with_rank) {
    if (want(metric::reff_signal)) record(layer, sub, metric::reff_signal, effective_rank(s.signal));
    if (want(metric::reff_noise)) {
      record(layer, sub, metric::reff_noise, effective_rank(s.noise, Centering::KnownZeroMean));
    }
  }
  prev_ = lv;
}

void Meter::on_vanilla(const Snapshot& snap) {
  if (snap.location == Location::PostConv) {
    if (want(metric::coactivation_mixed)) {
      record(snap.layer, "y", metric::coactivation_mixed, coactivation_mixed_fraction(snap.state->signal));
    }
  } else {
    layer_output(snap.layer, "x", *snap.state, true);
  }
}

void Meter::on_bnff(const Snapshot& snap) {
  const PairState& s = *snap.state;
  const int l = snap.layer;
  if (snap.location == Location::PostBN) {
    const Level lv = measure(s);
    chi_mid_ = lv.chi;
    record(l, "z", metric::delta_chi_bn, ratio(lv.chi, prev_.chi));
    if (want(metric::mu4_z)) record(l, "z", metric::mu4_z, channel_moments(s.signal, 4).mu);
    if (want(metric::nu1_abs_z)) record(l, "z", metric::nu1_abs_z, abs_first_moment(s.signal));
    if (want(metric::coactivation_mixed)) {
      record(l, "z", metric::coactivation_mixed, coactivation_mixed_fraction(s.signal));
    }
  } else if (snap.location == Location::PostActivation) {
    const double chi_x = measure(s).chi;
    record(l, "x", metric::delta_chi_phi, ratio(chi_x, chi_mid_));
    layer_output(l, "x", s, true);
  }
}

void Meter::on_resnet(const Snapshot& snap) {
  const PairState& s = *snap.state;
  const int l = snap.layer;
  if (snap.location == Location::ResidualAggregate) {
    layer_output(l, "agg", s, false);
    return;
  }
  if (snap.h == 1 && snap.location == Location::PostBN) {
    chi_mid_ = measure(s).chi;
    record(l, "z1", metric::delta_chi_bn, ratio(chi_mid_, prev_.chi));
    if (want(metric::mu4_z)) record(l, "z1", metric::mu4_z, channel_moments(s.signal, 4).mu);
    if (want(metric::nu1_abs_z)) record(l, "z1", metric::nu1_abs_z, abs_first_moment(s.signal));
    if (want(metric::reff_signal) || want(metric::reff_noise)) {
      const PairState x = phi_pair_step(s, arch_.activation);
      if (want(metric::reff_signal)) record(l, "x1", metric::reff_signal, effective_rank(x.signal));
      if (want(metric::reff_noise)) {
        record(l, "x1", metric::reff_noise, effective_rank(x.noise, Centering::KnownZeroMean));
      }
    }
  } else if (snap.h == 1 && snap.location == Location::PostActivation) {
    if (want(metric::reff_signal)) record(l, "x1", metric::reff_signal, effective_rank(s.signal));
    if (want(metric::reff_noise)) {
      record(l, "x1", metric::reff_noise, effective_rank(s.noise, Centering::KnownZeroMean));
    }
  }
  if (snap.location != Location::PostConv) return;
  if (snap.h == 1) {
    const double chi_y1 = measure(s).chi;
    record(l, "y1", metric::delta_chi_h1, ratio(chi_y1, prev_.chi));
    if (arch_.family == Family::BNResnet) record(l, "y1", metric::delta_chi_phi, ratio(chi_y1, chi_mid_));
  }
  if (snap.skip != nullptr) {
    if (want(metric::cross_term_signal)) {
      record(l, "branch", metric::cross_term_signal, residual_cross_term(snap.skip->signal, s.signal));
    }
    if (want(metric::cross_term_noise)) {
      record(l, "branch", metric::cross_term_noise,
             residual_cross_term(snap.skip->noise, s.noise, Centering::KnownZeroMean));
    }
    if (want(metric::branch_mu2_signal)) {
      record(l, "branch", metric::branch_mu2_signal, channel_moments(s.signal, 2).mu);
    }
  }
}

void Meter::operator()(const Snapshot& snap) {
  if (snap.location == Location::Input) {
    on_input(*snap.state);
    return;
  }
  switch (arch_.family) {
    case Family::Vanilla: on_vanilla(snap); break;
    case Family::BNFeedforward: on_bnff(snap); break;
    case Family::BNResnet:
    case Family::ResnetNoBN: on_resnet(snap); break;
  }
}

}  // namespace moments
