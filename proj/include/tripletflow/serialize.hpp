#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "tripletflow/harness.hpp"

namespace tripletflow {

nlohmann::json score_to_json(const ScoreReport& report);
ScoreReport score_from_json(const nlohmann::json& j);

// versioned model container: config, class maps, normalizer, parameters,
// reference index and head; byte-stable across save/load round trips
nlohmann::json bundle_to_json(const ModelBundle& bundle);
ModelBundle bundle_from_json(const nlohmann::json& j);

void save_bundle(const ModelBundle& bundle, const std::string& path);
ModelBundle load_bundle(const std::string& path);

// experiment report with optional config echo (the effective key=value map)
nlohmann::json experiment_to_json(const ExperimentReport& report,
                                  const std::map<std::string, std::string>* config_echo = nullptr);

// flat per-subset metrics, one CSV row per (n_per_attack, subset)
std::string experiment_csv_header();
std::string experiment_csv_rows(const ExperimentReport& report);

void save_text(const std::string& text, const std::string& path);
nlohmann::json load_json_file(const std::string& path);

// shortest round-trip decimal form, shared by CSV writers
std::string format_double(double v);

} // namespace tripletflow
