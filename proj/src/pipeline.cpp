#include "moef/pipeline.hpp"

#include "moef/errors.hpp"
#include "moef/ops.hpp"

#include <algorithm>
#include <cmath>

namespace moef {

void TaskConfig::validate() const {
    if (num_classes < 2) throw config_error("task.classes must be >= 2");
    if (factor_rank < 1) throw config_error("task.factor_rank must be >= 1");
    if (atom_count < 1) throw config_error("task.atoms must be >= 1");
    if (!(noise >= 0.0)) throw config_error("task.noise must be >= 0");
}

std::string to_string(ConnectorKind k) {
    return k == ConnectorKind::mlp ? "mlp" : "moec";
}

std::string to_string(FusionKind k) {
    return k == FusionKind::append_only ? "append_only" : "hga";
}

void ModelConfig::validate() const {
    if (encoders.empty()) throw config_error("encoders: at least one group is required");
    size_t cursor = 0;
    for (const EncoderSpec& spec : encoders) {
        spec.validate();
        // fused order must follow the canonical group order
        while (cursor < known_groups().size() && known_groups()[cursor] != spec.group_name)
            ++cursor;
        if (cursor == known_groups().size()) {
            throw config_error("encoders: group '" + spec.group_name +
                               "' is duplicated or out of fused order");
        }
        ++cursor;
        if (spec.needs_channel_pooling) {
            if (spec.channel_dim < moec.input_dim || spec.channel_dim % moec.input_dim != 0) {
                throw config_error("encoder." + spec.group_name + ".channels = " +
                                   std::to_string(spec.channel_dim) +
                                   " cannot pool to moec.input_dim = " +
                                   std::to_string(moec.input_dim));
            }
        } else if (spec.channel_dim != moec.input_dim) {
            throw config_error("encoder." + spec.group_name + ".channels = " +
                               std::to_string(spec.channel_dim) +
                               " must equal moec.input_dim = " +
                               std::to_string(moec.input_dim) + " (or set pool = true)");
        }
    }
    moec.validate();
    hga.validate();
    task.validate();
    if (!(balance_weight >= 0.0)) throw config_error("loss.balance_weight must be >= 0");
    if (!(zloss_weight >= 0.0)) throw config_error("loss.zloss_weight must be >= 0");
}

Index ModelConfig::total_tokens() const {
    Index t = 0;
    for (const EncoderSpec& spec : encoders) t += spec.token_count;
    return t;
}

ModelConfig default_model_config() {
    ModelConfig cfg;
    cfg.encoders = default_encoder_specs();
    return cfg;
}

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.encoders = {
        {"siglip", 2, 4, false, 0},
        {"dinov2", 2, 4, false, 0},
        {"convnext", 2, 8, true, 0},
        {"clip", 2, 4, false, 0},
    };
    cfg.moec.input_dim = 4;
    cfg.moec.hidden_dim = 8;
    cfg.moec.output_dim = 4;
    cfg.task.atom_count = 4;
    return cfg;
}

double LossReport::balance_sum() const {
    double s = 0.0;
    for (const auto& [name, v] : balance) s += v;
    return s;
}

double LossReport::zloss_sum() const {
    double s = 0.0;
    for (const auto& [name, v] : zloss) s += v;
    return s;
}

double LossReport::recombined() const {
    return task_loss + balance_weight * balance_sum() + zloss_weight * zloss_sum();
}

TaskSampler::TaskSampler(const ModelConfig& config) : config_(config) {
    config_.validate();
    for (const EncoderSpec& spec : config_.encoders) {
        profiles_.push_back(make_group_profile(spec, config_.task.factor_rank,
                                               config_.task.atom_count, config_.task.noise,
                                               config_.seed));
    }
}

Sample TaskSampler::sample(std::uint64_t step, int index) const {
    const std::uint64_t sample_seed =
        mix_seed(mix_seed(config_.seed, 0x5A3C1E00ULL + step), static_cast<std::uint64_t>(index));
    Rng factor_rng(mix_seed(sample_seed, fnv1a("factor")));
    Vector factor(config_.task.factor_rank);
    for (Index i = 0; i < factor.size(); ++i) factor(i) = factor_rng.normal();

    Sample s;
    s.label = label_of_factor(factor, config_.task.num_classes);
    const std::uint64_t stream_seed = mix_seed(sample_seed, fnv1a("stream"));
    for (size_t i = 0; i < config_.encoders.size(); ++i) {
        s.streams.push_back(
            generate_stream(config_.encoders[i], profiles_[i], factor, stream_seed));
    }
    return s;
}

SampleBatch TaskSampler::batch(std::uint64_t step, int size) const {
    SampleBatch b;
    for (int i = 0; i < size; ++i) b.push_back(sample(step, i));
    return b;
}

double Optimizer::effective_lr(std::uint64_t step) const {
    if (!cosine_schedule || schedule_steps == 0) return learning_rate;
    const double progress =
        static_cast<double>(std::min(step > 0 ? step - 1 : 0, schedule_steps)) /
        static_cast<double>(schedule_steps);
    return learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const bool with_router = config_.connector == ConnectorKind::moec;
    for (const EncoderSpec& spec : config_.encoders) {
        MoecBank bank{"moec." + spec.group_name, config_.moec};
        add_bank_params(params_, bank, config_.seed, with_router);
        banks_.push_back(std::move(bank));
    }
    const double limit = 1.0 / std::sqrt(static_cast<double>(config_.moec.output_dim));
    params_.add(kHeadWeight, uniform_init(kHeadWeight, config_.moec.output_dim,
                                          config_.task.num_classes, limit, config_.seed));
    params_.add(kHeadBias, Matrix::Zero(1, config_.task.num_classes));
}

Matrix Model::standardized(const FeatureStream& stream) const {
    if (stream.spec.needs_channel_pooling) {
        return block_mean_cols(stream.features, config_.moec.input_dim);
    }
    return stream.features;
}

ForwardResult Model::forward(Tape& tape, const Sample& sample) const {
    if (sample.streams.size() != config_.encoders.size()) {
        throw shape_error("forward: sample has " + std::to_string(sample.streams.size()) +
                          " streams, config expects " + std::to_string(config_.encoders.size()));
    }
    const bool with_router = config_.connector == ConnectorKind::moec;

    ForwardResult fr;
    std::vector<std::pair<std::string, Var>> hidden;
    for (size_t i = 0; i < config_.encoders.size(); ++i) {
        const EncoderSpec& spec = config_.encoders[i];
        if (sample.streams[i].spec.group_name != spec.group_name) {
            throw shape_error("forward: stream order mismatch, expected '" + spec.group_name +
                              "', got '" + sample.streams[i].spec.group_name + "'");
        }
        BoundBank bank = bind_bank(tape, params_, banks_[i], with_router);
        Var features = tape.constant(standardized(sample.streams[i]));
        if (with_router) {
            auto [out, decision] = moec_forward(features, bank, config_.moec);
            hidden.emplace_back(spec.group_name, out);
            fr.balance_terms.push_back(balance_loss(decision, config_.moec));
            fr.zloss_terms.push_back(z_loss(decision));
            fr.decisions.push_back(std::move(decision));
        } else {
            hidden.emplace_back(spec.group_name, expert_forward(features, bank.experts[0]));
        }
    }

    if (config_.fusion == FusionKind::hga) {
        HgaForward hga = hga_apply(hidden, config_.hga);
        fr.x_out = hga.output;
        fr.spans = hga.input.groups;
        fr.selections = std::move(hga.selections);
    } else {
        FusedSequence seq = sequence_append(hidden);
        fr.x_out = seq.tokens;
        fr.spans = std::move(seq.groups);
    }

    Var head_w = tape.param(kHeadWeight, params_.at(kHeadWeight));
    Var head_b = tape.param(kHeadBias, params_.at(kHeadBias));
    Var logits = add_row_vector(matmul(col_mean(fr.x_out), head_w), head_b);
    if (sample.label < 0 || sample.label >= config_.task.num_classes) {
        throw config_error("forward: label " + std::to_string(sample.label) +
                           " outside [0, " + std::to_string(config_.task.num_classes) + ")");
    }
    fr.task_loss = logsumexp_rows(logits) - gather_cells(logits, {{0, sample.label}});

    fr.total = fr.task_loss;
    if (with_router && config_.auxiliary_losses) {
        Var balance_total = fr.balance_terms[0];
        Var z_total = fr.zloss_terms[0];
        for (size_t i = 1; i < fr.balance_terms.size(); ++i) {
            balance_total = balance_total + fr.balance_terms[i];
            z_total = z_total + fr.zloss_terms[i];
        }
        fr.total = fr.total + scale(balance_total, config_.balance_weight) +
                   scale(z_total, config_.zloss_weight);
    }
    return fr;
}

StepStats Model::run_batch(const SampleBatch& batch, std::map<std::string, Matrix>* grads) const {
    if (batch.empty()) throw config_error("run_batch: empty batch");
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    StepStats stats;
    stats.loss.balance_weight = config_.balance_weight;
    stats.loss.zloss_weight = config_.zloss_weight;
    const bool with_router = config_.connector == ConnectorKind::moec;
    for (const EncoderSpec& spec : config_.encoders) {
        stats.loss.balance.emplace_back(spec.group_name, 0.0);
        stats.loss.zloss.emplace_back(spec.group_name, 0.0);
        if (with_router) {
            stats.utilization.emplace_back(
                spec.group_name,
                std::vector<double>(static_cast<size_t>(config_.moec.num_experts), 0.0));
        }
    }

    for (const Sample& sample : batch) {
        Tape tape;
        ForwardResult fr = forward(tape, sample);

        const double task = tape.value(fr.task_loss)(0, 0);
        if (!std::isfinite(task)) throw numeric_error("non-finite task loss");
        stats.loss.task_loss += inv_b * task;
        for (size_t g = 0; g < fr.balance_terms.size(); ++g) {
            const double b = tape.value(fr.balance_terms[g])(0, 0);
            const double z = tape.value(fr.zloss_terms[g])(0, 0);
            const std::string& name = config_.encoders[g].group_name;
            if (!std::isfinite(b))
                throw numeric_error("non-finite balance loss for group '" + name + "'");
            if (!std::isfinite(z))
                throw numeric_error("non-finite router z-loss for group '" + name + "'");
            stats.loss.balance[g].second += inv_b * b;
            stats.loss.zloss[g].second += inv_b * z;
        }
        if (!std::isfinite(tape.value(fr.total)(0, 0)))
            throw numeric_error("non-finite total loss");

        for (size_t g = 0; g < fr.decisions.size(); ++g) {
            const std::vector<double> f = expert_utilization(fr.decisions[g].selected_indices,
                                                             config_.moec.num_experts);
            for (size_t e = 0; e < f.size(); ++e)
                stats.utilization[g].second[e] += inv_b * f[e];
        }

        if (grads != nullptr) {
            tape.backward(fr.total);
            for (const auto& [name, values] : params_.items()) {
                Matrix g = tape.grad_of(name);
                auto it = grads->find(name);
                if (it == grads->end()) {
                    (*grads)[name] = std::move(g);
                } else {
                    it->second += g;
                }
            }
        }
    }
    if (grads != nullptr) {
        for (auto& [name, g] : *grads) g *= inv_b;
    }
    stats.loss.total = stats.loss.recombined();
    return stats;
}

StepStats Model::evaluate(const SampleBatch& batch) const {
    return run_batch(batch, nullptr);
}

std::map<std::string, Matrix> Model::gradients(const SampleBatch& batch) const {
    std::map<std::string, Matrix> grads;
    run_batch(batch, &grads);
    return grads;
}

StepStats Model::train_step(const SampleBatch& batch, Optimizer& opt, std::uint64_t step) {
    std::map<std::string, Matrix> grads;
    StepStats stats = run_batch(batch, &grads);

    const double lr = opt.effective_lr(step);
    for (auto& [name, values] : params_.items()) {
        if (opt.freeze_connector && name.rfind("head.", 0) != 0) continue;
        const Matrix& g = grads.at(name);
        if (opt.momentum > 0.0) {
            auto [it, inserted] = opt.velocity.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
            it->second = opt.momentum * it->second + g;
            values -= lr * it->second;
        } else {
            values -= lr * g;
        }
    }
    return stats;
}

GradCheckReport gradient_check(const ModelConfig& config, double fd_step,
                               std::uint64_t sample_seed) {
    if (config.total_tokens() > 16 || config.moec.output_dim > 8) {
        throw config_error(
            "gradient_check: needs a small config (total tokens <= 16, moec.output_dim <= 8); "
            "got " + std::to_string(config.total_tokens()) + " tokens, output_dim " +
            std::to_string(config.moec.output_dim));
    }
    Model model(config);
    TaskSampler sampler(config);
    const SampleBatch batch = {sampler.sample(sample_seed, 0)};

    GradCheckReport report;
    const std::map<std::string, Matrix> analytic = model.gradients(batch);
    for (const auto& [name, g] : analytic) report.analytic.add(name, g);

    auto loss_of = [&](const ParamSet& p) {
        Model probe(config);
        probe.params() = p;
        Tape tape;
        ForwardResult fr = probe.forward(tape, batch[0]);
        return tape.value(fr.total)(0, 0);
    };
    report.numeric = finite_diff_grad(loss_of, model.params(), fd_step);

    for (const auto& [name, values] : model.params().items()) {
        GradCheckBlock block;
        block.name = name;
        block.max_rel_error = max_rel_error(report.analytic.at(name), report.numeric.at(name));
        report.max_rel_error = std::max(report.max_rel_error, block.max_rel_error);
        report.blocks.push_back(std::move(block));
    }
    return report;
}

}  // namespace moef
