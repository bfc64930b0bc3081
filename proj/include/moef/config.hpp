#pragma once

#include "moef/pipeline.hpp"

#include <string>

namespace moef {

// Full experiment definition: model plus run controls and ablation switches.
// Expressible as a text config file (see parse_config_text) so experiment
// definitions stay reproducible and diffable.
struct ExperimentConfig {
    ModelConfig model;
    int steps = 200;
    int batch_size = 8;
    double learning_rate = 0.3;
    double momentum = 0.0;
    bool cosine_schedule = false;
    bool freeze_connector = false;
    int metric_cadence = 1;
    std::string out_dir = "runs/exp";

    void validate() const;
};

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

// Stock defaults for every key; equals parsing an empty config file.
ExperimentConfig default_experiment_config();

// Key-value text format: `key = value` lines, `[section]` headers (sections
// nest by dots, e.g. [encoder.siglip]), `#` comments. Unknown keys, type
// errors and invariant violations throw config_error naming key and line.
ExperimentConfig parse_config_text(const std::string& text);

ExperimentConfig load_config(const std::string& path);

std::string serialize_config(const ExperimentConfig& config);

// One `section.key=value` assignment, e.g. from a --set flag.
void apply_override(ExperimentConfig& config, const std::string& dotted_key,
                    const std::string& value);

}  // namespace moef
