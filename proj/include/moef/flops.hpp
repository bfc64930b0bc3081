#pragma once

#include "moef/pipeline.hpp"

namespace moef {

// Analytic multiply-add counts for one forward pass of one sample. The
// connector is counted both ways (dense MLP vs expert bank) so the variants
// compare on identical footing.
struct FlopsBreakdown {
    double connector_dense = 0.0;    // one two-layer connector per group
    double connector_experts = 0.0;  // K active experts per token
    double router = 0.0;
    double hga_similarity = 0.0;     // per group: g*g*D + g*(T-g)*D
    double hga_aggregate = 0.0;
    double gate = 0.0;
    double task_head = 0.0;

    double fusion_total() const { return hga_similarity + hga_aggregate + gate; }
    double total_with_moec() const {
        return connector_experts + router + fusion_total() + task_head;
    }
    double total_with_mlp() const { return connector_dense + fusion_total() + task_head; }
    // router + (K-1) * dense: what switching the connector from mlp to moec adds
    double connector_delta() const { return total_with_moec() - total_with_mlp(); }
};

FlopsBreakdown flops_estimate(const ModelConfig& config);

}  // namespace moef
