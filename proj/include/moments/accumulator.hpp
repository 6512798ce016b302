#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace moments {

/// Uniform bins on [lo, hi); values outside are clamped into the edge bins.
struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::uint64_t> counts;

  Histogram() = default;
  Histogram(double lo, double hi, int bins);

  int bins() const { return static_cast<int>(counts.size()); }
  double bin_left(int i) const;
  double bin_right(int i) const;
  void add(double x);
  std::uint64_t total() const;
  bool same_edges(const Histogram& other) const;
};

/// Count, mean and second central moment of a stream, mergeable in any order.
class StatsAccumulator {
 public:
  StatsAccumulator() = default;
  explicit StatsAccumulator(Histogram histogram);

  void add(double x);
  /// Throws ParameterError when the histogram schemas differ.
  void merge(const StatsAccumulator& other);

  std::uint64_t count() const { return count_; }
  double mean() const { return mean_; }
  double m2() const { return m2_; }
  /// Sample variance (n - 1 denominator); 0 for fewer than 2 values.
  double variance() const;
  double stddev() const;
  /// Standard error of the mean.
  double stderr_mean() const;
  const std::optional<Histogram>& histogram() const { return histogram_; }

 private:
  std::uint64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  std::optional<Histogram> histogram_;
};

StatsAccumulator merge(StatsAccumulator a, const StatsAccumulator& b);

struct MetricKey {
  int layer = 0;
  std::string substep;
  std::string metric;

  auto operator<=>(const MetricKey&) const = default;
};

struct HistogramPolicy {
  std::set<std::string> metrics;
  std::set<int> layers;
  int bins = 80;
  double lo = -8.0;
  double hi = 8.0;

  bool tracks(const MetricKey& key) const;
};

/// Accumulators keyed by (layer, substep, metric), iterated in key order.
class AccumulatorSet {
 public:
  AccumulatorSet() = default;
  explicit AccumulatorSet(HistogramPolicy policy) : policy_(std::move(policy)) {}

  void add(const MetricKey& key, double value);
  void merge(const AccumulatorSet& other);

  const std::map<MetricKey, StatsAccumulator>& entries() const { return entries_; }
  const StatsAccumulator* find(int layer, const std::string& metric) const;
  const StatsAccumulator& at(int layer, const std::string& metric) const;
  const HistogramPolicy& policy() const { return policy_; }

 private:
  HistogramPolicy policy_;
  std::map<MetricKey, StatsAccumulator> entries_;
};

/// Pairwise tree merge in index order: ((0,1),(2,3)),... Result depends only on the input order.
AccumulatorSet tree_merge(std::vector<AccumulatorSet> parts);

struct HistogramRow {
  int layer = 0;
  std::string metric;
  double bin_left = 0.0;
  double bin_right = 0.0;
  std::uint64_t count = 0;
};

/// Histogram bins of `metric` at each requested layer. Throws ParameterError for an unrecorded layer.
std::vector<HistogramRow> histogram_log_moment(const AccumulatorSet& set, const std::string& metric,
                                               const std::vector<int>& layers);

}  // namespace moments
