#include "moments/accumulator.hpp"

#include <algorithm>
#include <cmath>

#include "moments/error.hpp"

namespace moments {

Histogram::Histogram(double lo_, double hi_, int bins) : lo(lo_), hi(hi_) {
  if (bins < 1) throw ParameterError("histogram needs at least one bin");
  if (!(hi > lo)) throw ParameterError("histogram range must satisfy lo < hi");
  counts.assign(static_cast<std::size_t>(bins), 0);
}

double Histogram::bin_left(int i) const { return lo + (hi - lo) * i / bins(); }

double Histogram::bin_right(int i) const { return lo + (hi - lo) * (i + 1) / bins(); }

void Histogram::add(double x) {
  const double t = (x - lo) / (hi - lo) * bins();
  const int i = std::clamp(static_cast<int>(std::floor(t)), 0, bins() - 1);
  ++counts[static_cast<std::size_t>(i)];
}

std::uint64_t Histogram::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

bool Histogram::same_edges(const Histogram& o) const { return lo == o.lo && hi == o.hi && bins() == o.bins(); }

StatsAccumulator::StatsAccumulator(Histogram histogram) : histogram_(std::move(histogram)) {}

void StatsAccumulator::add(double x) {
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
  if (histogram_) histogram_->add(x);
}

void StatsAccumulator::merge(const StatsAccumulator& o) {
  if (histogram_.has_value() != o.histogram_.has_value() ||
      (histogram_ && !histogram_->same_edges(*o.histogram_))) {
    if (o.count_ == 0 && !o.histogram_) return;
    if (count_ == 0 && !histogram_) {
      *this = o;
      return;
    }
    throw ParameterError("cannot merge accumulators with different histogram schemas");
  }
  if (o.count_ > 0) {
    if (count_ == 0) {
      count_ = o.count_;
      mean_ = o.mean_;
      m2_ = o.m2_;
    } else {
      const double na = static_cast<double>(count_);
      const double nb = static_cast<double>(o.count_);
      const double n = na + nb;
      const double delta = o.mean_ - mean_;
      mean_ = (na * mean_ + nb * o.mean_) / n;
      m2_ += o.m2_ + delta * delta * na * nb / n;
      count_ += o.count_;
    }
  }
  if (histogram_) {
    for (std::size_t i = 0; i < histogram_->counts.size(); ++i) histogram_->counts[i] += o.histogram_->counts[i];
  }
}

double StatsAccumulator::variance() const { return count_ < 2 ? 0.0 : m2_ / static_cast<double>(count_ - 1); }

double StatsAccumulator::stddev() const { return std::sqrt(variance()); }

double StatsAccumulator::stderr_mean() const {
  return count_ < 2 ? 0.0 : std::sqrt(variance() / static_cast<double>(count_));
}

StatsAccumulator merge(StatsAccumulator a, const StatsAccumulator& b) {
  a.merge(b);
  return a;
}

bool HistogramPolicy::tracks(const MetricKey& key) const {
  return metrics.contains(key.metric) && layers.contains(key.layer);
}

void AccumulatorSet::add(const MetricKey& key, double value) {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    StatsAccumulator acc = policy_.tracks(key) ? StatsAccumulator(Histogram(policy_.lo, policy_.hi, policy_.bins))
                                               : StatsAccumulator();
    it = entries_.emplace(key, std::move(acc)).first;
  }
  it->second.add(value);
}

void AccumulatorSet::merge(const AccumulatorSet& other) {
  for (const auto& [key, acc] : other.entries_) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      entries_.emplace(key, acc);
    } else {
      it->second.merge(acc);
    }
  }
}

const StatsAccumulator* AccumulatorSet::find(int layer, const std::string& metric) const {
  for (auto it = entries_.lower_bound(MetricKey{layer, "", ""}); it != entries_.end() && it->first.layer == layer;
       ++it) {
    if (it->first.metric == metric) return &it->second;
  }
  return nullptr;
}

const StatsAccumulator& AccumulatorSet::at(int layer, const std::string& metric) const {
  const StatsAccumulator* acc = find(layer, metric);
  if (acc == nullptr) {
    throw ParameterError("metric '" + metric + "' not recorded at layer " + std::to_string(layer));
  }
  return *acc;
}

AccumulatorSet tree_merge(std::vector<AccumulatorSet> parts) {
  if (parts.empty()) return {};
  while (parts.size() > 1) {
    std::vector<AccumulatorSet> next;
    next.reserve((parts.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < parts.size(); i += 2) {
      parts[i].merge(parts[i + 1]);
      next.push_back(std::move(parts[i]));
    }
    if (parts.size() % 2 == 1) next.push_back(std::move(parts.back()));
    parts = std::move(next);
  }
  return std::move(parts.front());
}

std::vector<HistogramRow> histogram_log_moment(const AccumulatorSet& set, const std::string& metric,
                                               const std::vector<int>& layers) {
  std::vector<HistogramRow> rows;
  for (int layer : layers) {
    const StatsAccumulator* acc = set.find(layer, metric);
    if (acc == nullptr || !acc->histogram()) {
      throw ParameterError("no histogram of '" + metric + "' recorded at layer " + std::to_string(layer));
    }
    const Histogram& h = *acc->histogram();
    for (int i = 0; i < h.bins(); ++i) {
      rows.push_back({layer, metric, h.bin_left(i), h.bin_right(i), h.counts[static_cast<std::size_t>(i)]});
    }
  }
  return rows;
}

}  // namespace moments
