#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "moments/harness.hpp"

namespace moments {

/// Shortest decimal that parses back to exactly `value`.
std::string format_double(double value);

/// Parses a decimal produced by format_double (or any strtod-compatible text). Throws IoError on junk.
double parse_double(const std::string& text);

struct AggregateRow {
  std::string run_id;
  int layer = 0;
  std::string substep;
  std::string metric;
  std::string statistic;
  double value = 0.0;
};

std::vector<AggregateRow> aggregate_rows(const std::string& run_id, const AccumulatorSet& set);

void write_aggregate_csv(const std::string& path, const std::vector<AggregateRow>& rows);
std::vector<AggregateRow> read_aggregate_csv(const std::string& path);

/// Deterministic run metadata: digest, seed, version, resolved config, degenerate counts.
nlohmann::json run_record_json(const RunRecord& record, const ExperimentConfig& config);

/// Timestamps and per-realization wall clock.
nlohmann::json timing_json(const RunRecord& record);

/// Writes aggregate.csv, realizations.csv, histograms.csv, probes.csv (when probing), run.json and timing.json.
void emit_results(const RunResult& result, const ExperimentConfig& config, const std::string& out_dir);

void write_finite_difference_csv(const std::string& path, const std::string& run_id,
                                 const std::vector<FiniteDifferenceRow>& rows);

void write_fc_demo(const FcDemoResult& result, const std::string& out_dir);

/// Mean of `metric` per layer from aggregate rows; entry l holds layer l (NaN where absent).
std::vector<double> layer_means(const std::vector<AggregateRow>& rows, const std::string& metric);

}  // namespace moments
