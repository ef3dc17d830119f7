#pragma once

#include <map>
#include <string>
#include <vector>

#include "tripletflow/harness.hpp"

namespace tripletflow {

using ConfigMap = std::map<std::string, std::string>;

// "key = value" lines; '#' starts a comment; later keys win
ConfigMap parse_config_file(const std::string& path);

// each override is "key=value" and replaces the file entry
void apply_overrides(ConfigMap& map, const std::vector<std::string>& overrides);

// builds and validates an ExperimentConfig; unknown keys are errors
ExperimentConfig experiment_config_from_map(const ConfigMap& map);

// fixed hyperparameters for the `train` command (falls back to defaults)
TrialConfig trial_config_from_map(const ConfigMap& map);

// FNV-1a over the canonical key=value lines; names run directories
std::string config_hash(const ConfigMap& map);

} // namespace tripletflow
