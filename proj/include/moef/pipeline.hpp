#pragma once

#include "moef/encoders.hpp"
#include "moef/gradcheck.hpp"
#include "moef/hga.hpp"
#include "moef/moec.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moef {

// Toy task head: cross-entropy over classes whose labels are a deterministic
// function of the planted stream factor, so fusion quality causally affects
// the loss.
struct TaskConfig {
    int num_classes = 8;
    int factor_rank = 4;
    int atom_count = 8;
    double noise = 0.25;

    void validate() const;
};

enum class ConnectorKind { mlp, moec };
enum class FusionKind { append_only, hga };

std::string to_string(ConnectorKind k);
std::string to_string(FusionKind k);

struct ModelConfig {
    std::vector<EncoderSpec> encoders;  // subset of known_groups() in fused order
    MoecConfig moec;
    HgaConfig hga;
    TaskConfig task;
    double balance_weight = 0.1;  // alpha_b
    double zloss_weight = 0.01;   // alpha_z
    bool auxiliary_losses = true;
    ConnectorKind connector = ConnectorKind::moec;
    FusionKind fusion = FusionKind::hga;
    std::uint64_t seed = 1;

    void validate() const;
    Index total_tokens() const;
};

// Reference defaults: E=4, K=2, M=3, N=7, alpha_b=0.1, alpha_z=0.01,
// tokens 440/576/100/576.
ModelConfig default_model_config();

// 2 tokens per group, 4 channels, hidden 8; small enough for finite
// differences over every parameter.
ModelConfig tiny_model_config();

struct LossReport {
    double task_loss = 0.0;
    std::vector<std::pair<std::string, double>> balance;  // per group
    std::vector<std::pair<std::string, double>> zloss;    // per group
    double balance_weight = 0.0;
    double zloss_weight = 0.0;
    double total = 0.0;

    double balance_sum() const;
    double zloss_sum() const;
    // task + alpha_b * sum(balance) + alpha_z * sum(zloss); equals `total`
    double recombined() const;
};

struct Sample {
    std::vector<FeatureStream> streams;  // raw per-group streams, config order
    int label = 0;
};
using SampleBatch = std::vector<Sample>;

// Deterministic sample stream: a pure function of (config, step, index).
class TaskSampler {
public:
    explicit TaskSampler(const ModelConfig& config);

    Sample sample(std::uint64_t step, int index) const;
    SampleBatch batch(std::uint64_t step, int size) const;
    const std::vector<GroupProfile>& profiles() const { return profiles_; }

private:
    ModelConfig config_;
    std::vector<GroupProfile> profiles_;
};

struct ForwardResult {
    Var x_out;
    std::vector<GroupSpan> spans;
    std::vector<RouterDecision> decisions;  // empty for the mlp connector
    std::vector<Var> balance_terms;
    std::vector<Var> zloss_terms;
    Var task_loss;
    Var total;
    SelectionSet selections;
};

struct StepStats {
    LossReport loss;
    // f_e histogram per group, batch mean; empty for the mlp connector
    std::vector<std::pair<std::string, std::vector<double>>> utilization;
};

struct Optimizer {
    double learning_rate = 0.3;
    double momentum = 0.0;
    bool cosine_schedule = false;
    std::uint64_t schedule_steps = 0;  // cosine horizon; 0 disables
    bool freeze_connector = false;     // update only the task head
    std::map<std::string, Matrix> velocity;

    double effective_lr(std::uint64_t step) const;
};

class Model {
public:
    explicit Model(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // Channel pooling applied when the stream's encoder spec requests it.
    Matrix standardized(const FeatureStream& stream) const;

    ForwardResult forward(Tape& tape, const Sample& sample) const;

    StepStats evaluate(const SampleBatch& batch) const;

    // One gradient step. Deterministic; throws numeric_error naming the first
    // non-finite loss component.
    StepStats train_step(const SampleBatch& batch, Optimizer& opt, std::uint64_t step);

    // Batch-mean gradients without an update (used by the gradient checker).
    std::map<std::string, Matrix> gradients(const SampleBatch& batch) const;

private:
    StepStats run_batch(const SampleBatch& batch, std::map<std::string, Matrix>* grads) const;

    ModelConfig config_;
    std::vector<MoecBank> banks_;
    ParamSet params_;
};

inline const char* kHeadWeight = "head.weight";
inline const char* kHeadBias = "head.bias";

struct GradCheckBlock {
    std::string name;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckBlock> blocks;
    double max_rel_error = 0.0;
    // exposed so tests can re-run comparisons (e.g. corrupted-gradient controls)
    ParamSet analytic;
    ParamSet numeric;
};

// Reverse-mode vs central finite differences over every parameter block on
// the full training loss. Requires a small config (total tokens <= 16,
// output dim <= 8); failures are reported, not thrown.
GradCheckReport gradient_check(const ModelConfig& config, double fd_step = 1e-5,
                               std::uint64_t sample_seed = 0);

}  // namespace moef
