#include "moments/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "moments/error.hpp"

namespace moments {

namespace {

using nlohmann::json;

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "family",         "depth_L",        "residual_H",       "width_N",         "kernel_K",
      "spatial_n",      "spatial_d",      "input_channels",   "activation",      "bn_epsilon",
      "batch_M",        "sigma_dx",       "realizations",     "master_seed",     "input_kind",
      "dataset_path",   "initial_conv_stride", "initial_conv_K", "probe_layers", "probe_resamples",
      "histogram_layers", "histogram_bins", "histogram_min",  "histogram_max",   "metrics",
      "fixed_input",    "threads",
  };
  return keys;
}

class Reader {
 public:
  explicit Reader(const json& doc) : doc_(doc) {}

  bool has(const char* key) const { return doc_.contains(key) && !doc_.at(key).is_null(); }

  int integer(const char* key, int fallback) const {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
    const auto x = v.get<long long>();
    if (x < -1000000000LL || x > 1000000000LL) throw ConfigError(key, "integer out of range");
    return static_cast<int>(x);
  }

  std::uint64_t unsigned64(const char* key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) throw ConfigError(key, "must be non-negative");
    throw ConfigError(key, "expected an unsigned integer");
  }

  double real(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (!v.is_number()) throw ConfigError(key, "expected a number");
    return v.get<double>();
  }

  bool boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
    return v.get<bool>();
  }

  std::string string(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const json& v = doc_.at(key);
    if (!v.is_string()) throw ConfigError(key, "expected a string");
    return v.get<std::string>();
  }

  std::vector<int> int_list(const char* key) const {
    std::vector<int> out;
    if (!has(key)) return out;
    const json& v = doc_.at(key);
    if (!v.is_array()) throw ConfigError(key, "expected an array of integers");
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError(key, "expected an array of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  std::vector<std::string> string_list(const char* key) const {
    std::vector<std::string> out;
    if (!has(key)) return out;
    const json& v = doc_.at(key);
    if (!v.is_array()) throw ConfigError(key, "expected an array of strings");
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError(key, "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

 private:
  const json& doc_;
};

void require(const Reader& r, const char* key) {
  if (!r.has(key)) throw ConfigError(key, "required key is missing");
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("", "config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!known_keys().contains(key)) throw ConfigError(key, "unknown key");
  }
  const Reader r(doc);
  require(r, "family");
  require(r, "depth_L");
  require(r, "width_N");

  ExperimentConfig c;
  ArchitectureSpec& a = c.arch;
  try {
    a.family = parse_family(r.string("family", ""));
  } catch (const ParameterError& e) {
    throw ConfigError("family", e.what());
  }
  try {
    a.activation = parse_activation(r.string("activation", "relu"));
  } catch (const ParameterError& e) {
    throw ConfigError("activation", e.what());
  }
  try {
    c.input_kind = parse_input_kind(r.string("input_kind", "gaussian_iid"));
  } catch (const ParameterError& e) {
    throw ConfigError("input_kind", e.what());
  }
  a.depth = r.integer("depth_L", 0);
  a.width = r.integer("width_N", 0);
  a.residual_depth = r.integer("residual_H", 2);
  a.kernel_extent = r.integer("kernel_K", 3);
  a.spatial_extent = r.integer("spatial_n", 8);
  a.spatial_dims = r.integer("spatial_d", 2);
  a.bn_epsilon = r.real("bn_epsilon", 0.001);
  c.data_channels = r.integer("input_channels", a.width);
  c.initial_conv_stride = r.integer("initial_conv_stride", 0);
  c.initial_conv_kernel = r.integer("initial_conv_K", 3);
  a.input_channels = c.initial_conv_stride > 0 ? a.width : c.data_channels;
  c.batch = r.integer("batch_M", 32);
  c.sigma_dx = r.real("sigma_dx", 1e-3);
  c.realizations = r.integer("realizations", 200);
  c.master_seed = r.unsigned64("master_seed", c.master_seed);
  c.dataset_path = r.string("dataset_path", "");
  c.probe_layers = r.int_list("probe_layers");
  c.probe_resamples = r.integer("probe_resamples", 0);
  c.histogram_layers = r.int_list("histogram_layers");
  c.histogram_bins = r.integer("histogram_bins", 80);
  c.histogram_min = r.real("histogram_min", -8.0);
  c.histogram_max = r.real("histogram_max", 8.0);
  c.metrics = r.string_list("metrics");
  c.fixed_input = r.boolean("fixed_input", true);
  c.threads = r.integer("threads", 1);
  validate(c);
  return c;
}

ExperimentConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON: ") + e.what());
  }
  return parse_config(doc);
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

json config_to_json(const ExperimentConfig& c) {
  const ArchitectureSpec& a = c.arch;
  json j;
  j["family"] = to_string(a.family);
  j["depth_L"] = a.depth;
  j["residual_H"] = a.residual_depth;
  j["width_N"] = a.width;
  j["kernel_K"] = a.kernel_extent;
  j["spatial_n"] = a.spatial_extent;
  j["spatial_d"] = a.spatial_dims;
  j["input_channels"] = c.data_channels;
  j["activation"] = to_string(a.activation);
  j["bn_epsilon"] = a.bn_epsilon;
  j["batch_M"] = c.batch;
  j["sigma_dx"] = c.sigma_dx;
  j["realizations"] = c.realizations;
  j["master_seed"] = c.master_seed;
  j["input_kind"] = to_string(c.input_kind);
  j["dataset_path"] = c.dataset_path;
  j["initial_conv_stride"] = c.initial_conv_stride;
  j["initial_conv_K"] = c.initial_conv_kernel;
  j["probe_layers"] = c.probe_layers;
  j["probe_resamples"] = c.probe_resamples;
  j["histogram_layers"] = c.histogram_layers;
  j["histogram_bins"] = c.histogram_bins;
  j["histogram_min"] = c.histogram_min;
  j["histogram_max"] = c.histogram_max;
  j["metrics"] = c.metrics;
  j["fixed_input"] = c.fixed_input;
  j["threads"] = c.threads;
  return j;
}

std::string canonical_config(const ExperimentConfig& c) {
  json j = config_to_json(c);
  j.erase("threads");
  return j.dump();
}

std::string config_digest(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace moments
