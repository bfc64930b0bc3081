#include "moef/flops.hpp"

#include <algorithm>

namespace moef {

FlopsBreakdown flops_estimate(const ModelConfig& config) {
    config.validate();
    FlopsBreakdown f;
    const double in = config.moec.input_dim;
    const double hid = config.moec.hidden_dim;
    const double out = config.moec.output_dim;
    const double experts = config.moec.num_experts;
    const double k = config.moec.top_k;
    const double total = static_cast<double>(config.total_tokens());
    const double expert_unit = in * hid + hid * out;  // one token through one expert

    for (const EncoderSpec& spec : config.encoders) {
        const double g = spec.token_count;
        f.connector_dense += g * expert_unit;
        f.connector_experts += g * k * expert_unit;
        f.router += g * in * experts;
        if (config.fusion == FusionKind::hga) {
            f.hga_similarity += (g * g + g * (total - g)) * out;
            const double m = std::min<double>(config.hga.intra_top_m, std::max(0.0, g - 1));
            const double n = std::min<double>(config.hga.inter_top_n, total - g);
            f.hga_aggregate += g * (m + n) * out;
        }
    }
    if (config.fusion == FusionKind::hga) {
        f.gate = 3.0 * total * out;
    }
    f.task_head = total * out + out * static_cast<double>(config.task.num_classes);
    return f;
}

}  // namespace moef
