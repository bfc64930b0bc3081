#include "moef/encoders.hpp"

#include "moef/errors.hpp"
#include "moef/ops.hpp"

#include <algorithm>
#include <cmath>

namespace moef {

void EncoderSpec::validate() const {
    if (std::find(known_groups().begin(), known_groups().end(), group_name) ==
        known_groups().end()) {
        throw config_error("encoder group '" + group_name + "' is not one of siglip/dinov2/convnext/clip");
    }
    if (token_count < 1) throw config_error("encoder." + group_name + ".tokens must be >= 1");
    if (channel_dim < 1) throw config_error("encoder." + group_name + ".channels must be >= 1");
}

std::vector<int> visible_components(const std::string& group_name, int factor_rank) {
    // Overlapping pairs: every component is seen by two groups, no single
    // group sees everything.
    static const std::vector<std::vector<int>> table = {
        {0, 1},  // siglip
        {1, 2},  // dinov2
        {2, 3},  // convnext
        {0, 3},  // clip
    };
    const auto it = std::find(known_groups().begin(), known_groups().end(), group_name);
    if (it == known_groups().end()) {
        throw config_error("visible_components: unknown group '" + group_name + "'");
    }
    const auto& base = table[static_cast<size_t>(it - known_groups().begin())];
    std::vector<int> out;
    for (int c : base)
        if (c < factor_rank) out.push_back(c);
    for (int c = 4; c < factor_rank; ++c) out.push_back(c);
    return out;
}

GroupProfile make_group_profile(const EncoderSpec& spec, int factor_rank, int atom_count,
                                double noise, std::uint64_t master_seed) {
    spec.validate();
    if (factor_rank < 1) throw config_error("task.factor_rank must be >= 1");
    if (atom_count < 1) throw config_error("task.atoms must be >= 1");

    GroupProfile p;
    p.noise = noise;

    // Heterogeneous magnitudes across groups; cosine similarity has to cope.
    const auto it = std::find(known_groups().begin(), known_groups().end(), spec.group_name);
    static const double scales[] = {1.0, 0.8, 1.3, 0.6};
    p.scale = scales[it - known_groups().begin()];

    Rng group_rng(mix_seed(master_seed, fnv1a(spec.group_name)));
    p.mean = 0.5 * group_rng.normal_matrix(1, spec.channel_dim);

    const double load_scale = 1.0 / std::sqrt(static_cast<double>(spec.channel_dim));
    p.factor_loading = Matrix::Zero(factor_rank, spec.channel_dim);
    const std::vector<int> visible = visible_components(spec.group_name, factor_rank);
    for (int c : visible)
        p.factor_loading.row(c) = group_rng.normal_matrix(1, spec.channel_dim, load_scale);

    // Atoms are shared across groups: seeded per entry from a group-independent
    // salt, so atom (r, c) has the same value in every group that has channel c
    // regardless of the group's channel count.
    const std::uint64_t atom_seed = mix_seed(master_seed, fnv1a("token-atoms"));
    p.token_atoms.resize(atom_count, spec.channel_dim);
    for (Index r = 0; r < p.token_atoms.rows(); ++r) {
        for (Index c = 0; c < p.token_atoms.cols(); ++c) {
            Rng entry(mix_seed(atom_seed, static_cast<std::uint64_t>(r) * 0x10001ULL +
                                              static_cast<std::uint64_t>(c)));
            p.token_atoms(r, c) = entry.normal();
        }
    }
    return p;
}

FeatureStream generate_stream(const EncoderSpec& spec, const GroupProfile& profile,
                              const Vector& factor, std::uint64_t seed) {
    spec.validate();
    if (factor.size() != profile.factor_loading.rows()) {
        throw shape_error("generate_stream: factor rank " + std::to_string(factor.size()) +
                          " does not match profile rank " +
                          std::to_string(profile.factor_loading.rows()));
    }
    Rng rng(mix_seed(mix_seed(seed, spec.seed), fnv1a(spec.group_name)));
    const RowVector signal = factor.transpose() * profile.factor_loading;
    Matrix features(spec.token_count, spec.channel_dim);
    const Index atoms = profile.token_atoms.rows();
    for (Index t = 0; t < spec.token_count; ++t) {
        const RowVector eps = rng.normal_matrix(1, spec.channel_dim);
        features.row(t) = profile.mean +
                          profile.scale * (signal + profile.atom_gain * profile.token_atoms.row(t % atoms) +
                                           profile.noise * eps);
    }
    return FeatureStream{spec, std::move(features)};
}

FeatureStream standardize_channels(const FeatureStream& stream, Index target_dim) {
    FeatureStream out;
    out.features = block_mean_cols(stream.features, target_dim);
    out.spec = stream.spec;
    out.spec.channel_dim = static_cast<int>(target_dim);
    out.spec.needs_channel_pooling = false;
    return out;
}

int label_of_factor(const Vector& factor, int num_classes) {
    if (num_classes < 2) throw config_error("task.classes must be >= 2");
    int bits = 0;
    while ((1 << bits) < num_classes) ++bits;
    int label = 0;
    for (int b = 0; b < bits && b < factor.size(); ++b) {
        if (factor(b) > 0.0) label |= 1 << b;
    }
    return label % num_classes;
}

std::vector<EncoderSpec> default_encoder_specs() {
    return {
        {"siglip", 440, 16, false, 0},
        {"dinov2", 576, 16, false, 0},
        {"convnext", 100, 64, true, 0},
        {"clip", 576, 16, false, 0},
    };
}

}  // namespace moef
