#pragma once

#include "moef/matrix.hpp"

#include <string>
#include <vector>

namespace moef {

// The four supported stream groups, in fused (append) order.
inline const std::vector<std::string>& known_groups() {
    static const std::vector<std::string> g = {"siglip", "dinov2", "convnext", "clip"};
    return g;
}

struct EncoderSpec {
    std::string group_name;
    int token_count = 0;
    int channel_dim = 0;
    bool needs_channel_pooling = false;
    std::uint64_t seed = 0;  // per-group salt mixed into stream generation

    void validate() const;
};

struct FeatureStream {
    EncoderSpec spec;
    Matrix features;  // token_count x channel_dim
};

// Generation profile for one group. Token t of a stream is
//   mean + scale * (factor^T loading + atom_gain * atoms.row(t % atoms.rows()) + noise * eps_t)
// where `factor` is shared by all groups of one sample and `atoms` is shared
// across groups, so cross-group token correspondence is plantable. Loading
// rows are zeroed for factor components the group does not observe, which
// makes encoder subsets genuinely complementary on the toy task.
struct GroupProfile {
    RowVector mean;
    double scale = 1.0;
    Matrix factor_loading;  // rank x channel_dim
    Matrix token_atoms;     // atom_count x channel_dim
    double atom_gain = 0.7;
    double noise = 0.25;
};

// Which factor components a group observes. Components at index >= 4 are
// visible to every group.
std::vector<int> visible_components(const std::string& group_name, int factor_rank);

GroupProfile make_group_profile(const EncoderSpec& spec, int factor_rank, int atom_count,
                                double noise, std::uint64_t master_seed);

// Deterministic: identical (spec, profile, factor, seed) gives a bitwise
// identical stream.
FeatureStream generate_stream(const EncoderSpec& spec, const GroupProfile& profile,
                              const Vector& factor, std::uint64_t seed);

// Non-overlapping channel-block averaging down to target_dim. channel_dim
// must be divisible by target_dim; no interpolation is performed.
FeatureStream standardize_channels(const FeatureStream& stream, Index target_dim);

// Class label as the sign pattern of the leading factor components.
int label_of_factor(const Vector& factor, int num_classes);

// Full-scale token counts at desk-scale channel dims: siglip 440, dinov2
// 576, convnext 100 (64 channels, pooled), clip 576.
std::vector<EncoderSpec> default_encoder_specs();

}  // namespace moef
