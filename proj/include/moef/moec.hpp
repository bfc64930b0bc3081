#pragma once

#include "moef/params.hpp"
#include "moef/tape.hpp"

#include <string>
#include <vector>

namespace moef {

struct MoecConfig {
    int num_experts = 4;  // E
    int top_k = 2;        // K
    int input_dim = 16;
    int hidden_dim = 8;
    int output_dim = 16;  // D
    // Re-normalization of the K selected router probabilities. The default
    // takes a second softmax over the selected values; the alternative
    // divides by their sum.
    bool renormalize_by_sum = false;

    void validate() const;
};

// Parameter naming for one group's connector bank. Parameters live in a
// ParamSet; a bank is bound onto a tape per forward pass.
struct MoecBank {
    std::string prefix;  // e.g. "moec.siglip"
    MoecConfig config;

    std::string router_weight() const { return prefix + ".router.weight"; }
    std::string router_bias() const { return prefix + ".router.bias"; }
    std::string expert_w1(int e) const { return prefix + ".expert" + std::to_string(e) + ".w1"; }
    std::string expert_b1(int e) const { return prefix + ".expert" + std::to_string(e) + ".b1"; }
    std::string expert_w2(int e) const { return prefix + ".expert" + std::to_string(e) + ".w2"; }
    std::string expert_b2(int e) const { return prefix + ".expert" + std::to_string(e) + ".b2"; }
};

// Adds the bank's parameters to the set. Router weights and biases are only
// created when include_router is set (the plain dense connector has none).
// Init: weights uniform in +-1/sqrt(fan_in), biases zero, each tensor seeded
// by name so shared tensors match across ablation variants.
void add_bank_params(ParamSet& params, const MoecBank& bank, std::uint64_t master_seed,
                     bool include_router);

struct BoundExpert {
    Var w1, b1, w2, b2;
};

struct BoundBank {
    Var router_weight, router_bias;
    std::vector<BoundExpert> experts;
};

BoundBank bind_bank(Tape& tape, const ParamSet& params, const MoecBank& bank,
                    bool include_router);

struct RouterDecision {
    Var logits;            // tokens x E
    Var dense_weights;     // tokens x E, softmax of logits
    Var selected_weights;  // tokens x K, re-normalized
    IndexMatrix selected_indices;  // tokens x K, distinct per row, rank order
};

// logits -> softmax -> Top-K -> re-normalize. Selection ties break toward the
// lowest expert index.
RouterDecision route(Var features, const BoundBank& bank, const MoecConfig& config);

// linear -> gelu -> linear
Var expert_forward(Var features, const BoundExpert& expert);

// Re-weighted sum over each token's selected experts. Only selected experts
// run: expert e sees exactly the rows routed to it, so per-token cost scales
// with K, not E.
std::pair<Var, RouterDecision> moec_forward(Var features, const BoundBank& bank,
                                            const MoecConfig& config);

// E * sum_e f_e * P_e with f_e the fraction of tokens whose Top-K set
// contains e divided by K, and P_e the mean dense weight. Equals 1 at
// perfectly uniform routing; gradients flow through P_e only.
Var balance_loss(const RouterDecision& decision, const MoecConfig& config);

// Mean squared log-sum-exp of the router logits.
Var z_loss(const RouterDecision& decision);

// Token fraction per expert, f_e as above; sums to 1.
std::vector<double> expert_utilization(const IndexMatrix& selected_indices, int num_experts);

}  // namespace moef
