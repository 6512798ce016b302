#include "moments/results_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "moments/config.hpp"
#include "moments/error.hpp"

namespace moments {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw IoError("not a number: '" + text + "'");
  }
  return v;
}

std::vector<AggregateRow> aggregate_rows(const std::string& run_id, const AccumulatorSet& set) {
  std::vector<AggregateRow> rows;
  for (const auto& [key, acc] : set.entries()) {
    rows.push_back({run_id, key.layer, key.substep, key.metric, "mean", acc.mean()});
    rows.push_back({run_id, key.layer, key.substep, key.metric, "std", acc.stddev()});
    rows.push_back({run_id, key.layer, key.substep, key.metric, "count", static_cast<double>(acc.count())});
  }
  return rows;
}

void write_aggregate_csv(const std::string& path, const std::vector<AggregateRow>& rows) {
  std::ofstream out = open_out(path);
  out << "run_id,layer,substep,metric,statistic,value\n";
  for (const auto& r : rows) {
    out << r.run_id << ',' << r.layer << ',' << r.substep << ',' << r.metric << ',' << r.statistic << ','
        << format_double(r.value) << '\n';
  }
  finish(out, path);
}

std::vector<AggregateRow> read_aggregate_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "run_id,layer,substep,metric,statistic,value") {
    throw IoError("'" + path + "' does not have the aggregate.csv header");
  }
  std::vector<AggregateRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 6) throw IoError(path + ":" + std::to_string(lineno) + ": expected 6 columns");
    AggregateRow r;
    r.run_id = cells[0];
    r.layer = static_cast<int>(parse_double(cells[1]));
    r.substep = cells[2];
    r.metric = cells[3];
    r.statistic = cells[4];
    r.value = parse_double(cells[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

json run_record_json(const RunRecord& rec, const ExperimentConfig& config) {
  json j;
  j["run_id"] = rec.digest;
  j["config_digest"] = rec.digest;
  j["master_seed"] = rec.master_seed;
  j["tool_version"] = rec.tool_version;
  j["config"] = config_to_json(config);
  j["realizations"] = rec.realizations;
  j["degenerate_realizations"] = rec.degenerate_realizations;
  j["degenerate_per_layer"] = rec.degenerate_per_layer;
  j["expected_degenerate_rate"] = rec.expected_degenerate_rate;
  return j;
}

json timing_json(const RunRecord& rec) {
  json j;
  j["run_id"] = rec.digest;
  j["started_at"] = rec.started_at;
  j["finished_at"] = rec.finished_at;
  j["realization_seconds"] = rec.realization_seconds;
  return j;
}

void emit_results(const RunResult& result, const ExperimentConfig& config, const std::string& out_dir) {
  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());
  const std::string& run_id = result.record.digest;

  write_aggregate_csv((dir / "aggregate.csv").string(), aggregate_rows(run_id, result.aggregate));

  {
    const fs::path path = dir / "realizations.csv";
    std::ofstream out = open_out(path);
    out << "run_id,realization,layer,substep,metric,value\n";
    const std::set<int> probe(config.probe_layers.begin(), config.probe_layers.end());
    for (const auto& rv : result.retained) {
      for (const auto& v : rv.values) {
        if (!probe.contains(v.layer)) continue;
        out << run_id << ',' << rv.realization << ',' << v.layer << ',' << v.substep << ',' << v.metric << ','
            << format_double(v.value) << '\n';
      }
    }
    finish(out, path);
  }

  {
    const fs::path path = dir / "histograms.csv";
    std::ofstream out = open_out(path);
    out << "run_id,layer,metric,bin_left,bin_right,count\n";
    for (const auto& [key, acc] : result.aggregate.entries()) {
      if (!acc.histogram()) continue;
      const Histogram& h = *acc.histogram();
      for (int i = 0; i < h.bins(); ++i) {
        out << run_id << ',' << key.layer << ',' << key.metric << ',' << format_double(h.bin_left(i)) << ','
            << format_double(h.bin_right(i)) << ',' << h.counts[static_cast<std::size_t>(i)] << '\n';
      }
    }
    finish(out, path);
  }

  if (!result.probes.empty()) {
    const fs::path path = dir / "probes.csv";
    std::ofstream out = open_out(path);
    out << "run_id,layer,realization,metric,m_bar,m_under,s_under_var,excluded\n";
    for (const auto& p : result.probes) {
      out << run_id << ',' << p.layer << ',' << p.realization << ',' << p.metric << ',' << format_double(p.m_bar)
          << ',' << format_double(p.m_under) << ',' << format_double(p.s_under_var) << ',' << p.excluded << '\n';
    }
    finish(out, path);
  }

  write_json(dir / "run.json", run_record_json(result.record, config));
  write_json(dir / "timing.json", timing_json(result.record));
}

void write_finite_difference_csv(const std::string& path, const std::string& run_id,
                                 const std::vector<FiniteDifferenceRow>& rows) {
  std::ofstream out = open_out(path);
  out << "run_id,sigma,ratio,residual_moment,noise_moment\n";
  for (const auto& r : rows) {
    out << run_id << ',' << format_double(r.sigma) << ',' << format_double(r.ratio) << ','
        << format_double(r.residual_moment) << ',' << format_double(r.noise_moment) << '\n';
  }
  finish(out, path);
}

void write_fc_demo(const FcDemoResult& result, const std::string& out_dir) {
  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "': " + ec.message());
  {
    const fs::path path = dir / "fc_demo_samples.csv";
    std::ofstream out = open_out(path);
    out << "panel,sample,input,output\n";
    for (const auto& s : result.samples) {
      out << s.panel << ',' << s.sample << ',' << format_double(s.input) << ',' << format_double(s.output) << '\n';
    }
    finish(out, path);
  }
  {
    const fs::path path = dir / "fc_demo_chi.csv";
    std::ofstream out = open_out(path);
    out << "panel,layer,chi\n";
    for (const auto& c : result.chi) out << c.panel << ',' << c.layer << ',' << format_double(c.chi) << '\n';
    finish(out, path);
  }
}

std::vector<double> layer_means(const std::vector<AggregateRow>& rows, const std::string& metric) {
  int max_layer = -1;
  for (const auto& r : rows) {
    if (r.metric == metric && r.statistic == "mean") max_layer = std::max(max_layer, r.layer);
  }
  std::vector<double> out(static_cast<std::size_t>(max_layer + 1), std::numeric_limits<double>::quiet_NaN());
  for (const auto& r : rows) {
    if (r.metric == metric && r.statistic == "mean" && r.layer >= 0) out[static_cast<std::size_t>(r.layer)] = r.value;
  }
  return out;
}

}  // namespace moments
