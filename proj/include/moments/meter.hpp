#pragma once

#include <set>
#include <string>
#include <vector>

#include "moments/propagation.hpp"

namespace moments {

namespace metric {
inline const std::string nu2_signal = "nu2_signal";
inline const std::string mu2_signal = "mu2_signal";
inline const std::string mu2_noise = "mu2_noise";
inline const std::string chi = "chi";
inline const std::string delta_chi = "delta_chi";
inline const std::string delta_chi_bn = "delta_chi_bn";
inline const std::string delta_chi_phi = "delta_chi_phi";
inline const std::string delta_chi_h1 = "delta_chi_h1";
inline const std::string delta_nu2_signal = "delta_nu2_signal";
inline const std::string delta_mu2_noise = "delta_mu2_noise";
inline const std::string nu2_signal_ratio = "nu2_signal_ratio";
inline const std::string mu2_noise_ratio = "mu2_noise_ratio";
inline const std::string log_nu2_signal = "log_nu2_signal";
inline const std::string log_mu2_noise = "log_mu2_noise";
inline const std::string reff_signal = "reff_signal";
inline const std::string reff_noise = "reff_noise";
inline const std::string mu4_z = "mu4_z";
inline const std::string nu1_abs_z = "nu1_abs_z";
inline const std::string coactivation_mixed = "coactivation_mixed";
inline const std::string cross_term_signal = "cross_term_signal";
inline const std::string cross_term_noise = "cross_term_noise";
inline const std::string branch_mu2_signal = "branch_mu2_signal";
}  // namespace metric

/// Every metric name the meter knows, in a fixed order.
const std::vector<std::string>& all_metrics();

/// Metrics measured for a family (a subset of all_metrics()).
std::vector<std::string> family_metrics(Family family);

/// Sub-step tag at which `name` is measured for `family`; throws ParameterError if not measured there.
std::string metric_substep(Family family, const std::string& name);

struct MetricValue {
  int layer = 0;
  std::string substep;
  std::string metric;
  double value = 0.0;
};

struct RealizationStats {
  /// Finite values in emission order.
  std::vector<MetricValue> values;
  /// degenerate[l] is true when signal or noise variance vanished at layer l.
  std::vector<char> degenerate;

  bool any_degenerate() const;
};

/// Consumes the snapshot stream of one realization and reduces each snapshot to scalar statistics.
///
/// Signal variances are central per channel; noise second moments use the known zero mean.
class Meter {
 public:
  /// An empty `metrics` set selects every metric of the family.
  Meter(const ArchitectureSpec& arch, std::set<std::string> metrics = {});

  void operator()(const Snapshot& snap);

  const RealizationStats& stats() const { return stats_; }
  RealizationStats take() { return std::move(stats_); }

 private:
  struct Level {
    double nu2 = 0.0;
    double mu2 = 0.0;
    double mu2_noise = 0.0;
    double chi = 1.0;
  };

  bool want(const std::string& name) const;
  void record(int layer, const std::string& substep, const std::string& name, double value);
  Level measure(const PairState& s, bool moments_only = false) const;
  double chi_of(double mu2_noise, double mu2_signal) const;
  void layer_output(int layer, const std::string& substep, const PairState& s, bool with_rank);
  void on_input(const PairState& s);
  void on_vanilla(const Snapshot& snap);
  void on_bnff(const Snapshot& snap);
  void on_resnet(const Snapshot& snap);

  ArchitectureSpec arch_;
  std::set<std::string> metrics_;
  RealizationStats stats_;
  Level ref_;
  Level prev_;
  double chi_mid_ = 1.0;
};

}  // namespace moments
