#include "moef/moec.hpp"

#include "moef/errors.hpp"
#include "moef/ops.hpp"

#include <cmath>

namespace moef {

void MoecConfig::validate() const {
    if (num_experts < 1) throw config_error("moec.experts must be >= 1");
    if (top_k < 1 || top_k > num_experts) {
        throw config_error("moec.top_k must satisfy 1 <= top_k <= moec.experts, got top_k = " +
                           std::to_string(top_k) + " with experts = " +
                           std::to_string(num_experts));
    }
    if (input_dim < 1) throw config_error("moec.input_dim must be >= 1");
    if (hidden_dim < 1) throw config_error("moec.hidden_dim must be >= 1");
    if (output_dim < 1) throw config_error("moec.output_dim must be >= 1");
}

void add_bank_params(ParamSet& params, const MoecBank& bank, std::uint64_t master_seed,
                     bool include_router) {
    const MoecConfig& c = bank.config;
    c.validate();
    const double limit = 1.0 / std::sqrt(static_cast<double>(c.input_dim));
    if (include_router) {
        params.add(bank.router_weight(),
                   uniform_init(bank.router_weight(), c.input_dim, c.num_experts, limit,
                                master_seed));
        params.add(bank.router_bias(), Matrix::Zero(1, c.num_experts));
    }
    const double hidden_limit = 1.0 / std::sqrt(static_cast<double>(c.hidden_dim));
    for (int e = 0; e < (include_router ? c.num_experts : 1); ++e) {
        params.add(bank.expert_w1(e),
                   uniform_init(bank.expert_w1(e), c.input_dim, c.hidden_dim, limit, master_seed));
        params.add(bank.expert_b1(e), Matrix::Zero(1, c.hidden_dim));
        params.add(bank.expert_w2(e),
                   uniform_init(bank.expert_w2(e), c.hidden_dim, c.output_dim, hidden_limit,
                                master_seed));
        params.add(bank.expert_b2(e), Matrix::Zero(1, c.output_dim));
    }
}

BoundBank bind_bank(Tape& tape, const ParamSet& params, const MoecBank& bank,
                    bool include_router) {
    BoundBank bound;
    if (include_router) {
        bound.router_weight = tape.param(bank.router_weight(), params.at(bank.router_weight()));
        bound.router_bias = tape.param(bank.router_bias(), params.at(bank.router_bias()));
    }
    const int experts = include_router ? bank.config.num_experts : 1;
    for (int e = 0; e < experts; ++e) {
        BoundExpert ex;
        ex.w1 = tape.param(bank.expert_w1(e), params.at(bank.expert_w1(e)));
        ex.b1 = tape.param(bank.expert_b1(e), params.at(bank.expert_b1(e)));
        ex.w2 = tape.param(bank.expert_w2(e), params.at(bank.expert_w2(e)));
        ex.b2 = tape.param(bank.expert_b2(e), params.at(bank.expert_b2(e)));
        bound.experts.push_back(ex);
    }
    return bound;
}

RouterDecision route(Var features, const BoundBank& bank, const MoecConfig& config) {
    Tape& tape = *features.tape;
    if (tape.value(features).cols() != config.input_dim) {
        throw shape_error("route: feature dim " + std::to_string(tape.value(features).cols()) +
                          " does not match moec.input_dim " + std::to_string(config.input_dim));
    }
    RouterDecision d;
    d.logits = add_row_vector(matmul(features, bank.router_weight), bank.router_bias);
    d.dense_weights = softmax_rows(d.logits);
    const TopK top = topk_rows(tape.value(d.dense_weights), config.top_k);
    d.selected_indices = top.indices;
    Var picked = gather_entries(d.dense_weights, d.selected_indices);
    d.selected_weights =
        config.renormalize_by_sum ? row_normalize(picked) : softmax_rows(picked);
    return d;
}

Var expert_forward(Var features, const BoundExpert& expert) {
    Var hidden = gelu(add_row_vector(matmul(features, expert.w1), expert.b1));
    return add_row_vector(matmul(hidden, expert.w2), expert.b2);
}

std::pair<Var, RouterDecision> moec_forward(Var features, const BoundBank& bank,
                                            const MoecConfig& config) {
    Tape& tape = *features.tape;
    RouterDecision decision = route(features, bank, config);
    const Index tokens = tape.value(features).rows();

    Var combined;
    for (int e = 0; e < config.num_experts; ++e) {
        std::vector<int> rows;
        std::vector<std::pair<int, int>> weight_cells;
        for (Index t = 0; t < tokens; ++t) {
            for (int j = 0; j < config.top_k; ++j) {
                if (decision.selected_indices(t, j) == e) {
                    rows.push_back(static_cast<int>(t));
                    weight_cells.emplace_back(static_cast<int>(t), j);
                }
            }
        }
        if (rows.empty()) continue;
        Var routed = gather_rows(features, rows);
        Var out = expert_forward(routed, bank.experts[static_cast<size_t>(e)]);
        Var weights = gather_cells(decision.selected_weights, std::move(weight_cells));
        Var contribution = scatter_rows(row_scale(out, weights), std::move(rows), tokens);
        combined = combined.tape == nullptr ? contribution : combined + contribution;
    }
    return {combined, std::move(decision)};
}

Var balance_loss(const RouterDecision& decision, const MoecConfig& config) {
    const std::vector<double> f =
        expert_utilization(decision.selected_indices, config.num_experts);
    Matrix f_row(1, config.num_experts);
    for (int e = 0; e < config.num_experts; ++e) f_row(0, e) = f[static_cast<size_t>(e)];
    Var mean_weight = col_mean(decision.dense_weights);
    return scale(sum(cwise_mul_const(mean_weight, f_row)),
                 static_cast<double>(config.num_experts));
}

Var z_loss(const RouterDecision& decision) {
    Tape& tape = *decision.logits.tape;
    const Index tokens = tape.value(decision.logits).rows();
    return scale(sum(square(logsumexp_rows(decision.logits))),
                 1.0 / static_cast<double>(tokens));
}

std::vector<double> expert_utilization(const IndexMatrix& selected_indices, int num_experts) {
    std::vector<double> f(static_cast<size_t>(num_experts), 0.0);
    for (Index t = 0; t < selected_indices.rows(); ++t)
        for (Index j = 0; j < selected_indices.cols(); ++j)
            f[static_cast<size_t>(selected_indices(t, j))] += 1.0;
    const double denom =
        static_cast<double>(selected_indices.rows()) * static_cast<double>(selected_indices.cols());
    for (double& v : f) v /= denom;
    return f;
}

}  // namespace moef
