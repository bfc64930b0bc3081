#pragma once

#include "moef/checkpoint.hpp"
#include "moef/flops.hpp"
#include "moef/metrics.hpp"

#include <optional>
#include <string>
#include <vector>

namespace moef {

struct RunPaths {
    std::string dir;
    std::string metrics;
    std::string timing;
    std::string checkpoint;
    std::string config_echo;
};

RunPaths run_paths(const std::string& out_dir);

struct RunResult {
    std::uint64_t steps_completed = 0;
    StepStats first;  // stats at the first executed step
    StepStats final;  // stats at the last executed step
    RunPaths paths;
};

// Seeded training run: one metric record per cadence step (and always at the
// final step), timing in a sidecar stream, final checkpoint. When
// resume_from is set, training continues from the checkpointed step and
// parameters: the model section comes from the checkpoint, run controls
// (steps, cadence, output) from the config passed here.
struct RunOptions {
    std::optional<std::string> resume_from;
};

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// Ablation axes mirroring the reported sweeps: connector type, fusion type,
// nested encoder subsets, and Top-K values.
struct AblationAxes {
    bool connector = false;
    bool fusion = false;
    bool encoders = false;
    bool top_k = false;
    std::vector<int> top_k_values = {1, 2, 3, 4};
};

struct AblationCell {
    std::string name;
    std::vector<std::pair<std::string, std::string>> overrides;
};

// Cartesian product of the active axes, deduplicated.
std::vector<AblationCell> ablation_cells(const AblationAxes& axes);

struct AblationRow {
    AblationCell cell;
    bool ok = false;
    std::string error;
    Index token_total = 0;
    double final_task_loss = 0.0;
    double final_total = 0.0;
    double flops_total = 0.0;
    double flops_experts = 0.0;
    double flops_connector_delta = 0.0;
    // entropy of the f_e histogram per group, nats; empty for mlp cells
    std::vector<std::pair<std::string, double>> utilization_entropy;
};

// Runs every cell with the base seed, isolated output directories. Cell
// failures are recorded per cell and the sweep continues. Writes
// summary.jsonl and an aligned text table under the base out_dir.
std::vector<AblationRow> run_ablation_matrix(const ExperimentConfig& base,
                                             const AblationAxes& axes);

std::string ablation_table(const std::vector<AblationRow>& rows);

Json ablation_row_json(const AblationRow& row);

}  // namespace moef
