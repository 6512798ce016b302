#pragma once

#include <string>

#include <json.hpp>

#include "moments/harness.hpp"

namespace moments {

/// Parses a JSON config document, applying defaults. Throws ConfigError naming the offending key.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

/// Every key with its resolved value; parse_config(config_to_json(c)) reproduces c.
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Sorted-key compact serialization of the fields that affect results (thread count excluded).
std::string canonical_config(const ExperimentConfig& config);

/// 16 hex digits of FNV-1a over canonical_config().
std::string config_digest(const ExperimentConfig& config);

}  // namespace moments
