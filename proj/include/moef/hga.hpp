#pragma once

#include "moef/tape.hpp"

#include <string>
#include <vector>

namespace moef {

struct HgaConfig {
    int intra_top_m = 3;  // M, within-group selection
    int inter_top_n = 7;  // N, cross-group selection
    double gate_slope = 10.0;
    double gate_shift = 0.2;

    void validate() const;
};

struct GroupSpan {
    std::string name;
    Index start = 0;
    Index length = 0;
};

struct FusedSequence {
    Var tokens;  // T x D
    std::vector<GroupSpan> groups;

    Index total() const;
    // span containing a global token index
    const GroupSpan& span_of(Index token) const;
};

// Row-wise concatenation in the given group order; offsets recorded. No
// interpolation, resampling or padding.
FusedSequence sequence_append(const std::vector<std::pair<std::string, Var>>& group_hidden);

struct Selection {
    IndexMatrix indices;  // one row per query token
    Matrix scores;        // similarity values at the selected positions
};

// Top-min(M, g-1) most similar tokens within the group for each token, after
// the self-masking of the pairwise similarity matrix. The query token itself
// is never selectable, even when every other score is negative. g < 2 yields
// an empty (g x 0) selection. Indices are local to the group.
Selection intra_group_select(const Matrix& group_tokens, int top_m);

// Top-min(N, rows(others)) most similar cross-group tokens per query token.
// other_row_to_global maps rows of `others` to fused-sequence coordinates;
// the returned indices are global.
Selection inter_group_select(const Matrix& query_tokens, const Matrix& others, int top_n,
                             const std::vector<int>& other_row_to_global);

struct GroupSelection {
    IndexMatrix intra_local;   // g x M'
    IndexMatrix intra_global;  // g x M'
    Matrix intra_scores;
    IndexMatrix inter_global;  // g x N'
    Matrix inter_scores;
};

struct SelectionSet {
    std::vector<GroupSelection> groups;
};

// Selection over every group of a fused sequence (values only; deterministic).
SelectionSet select_all(const Matrix& tokens, const std::vector<GroupSpan>& groups,
                        const HgaConfig& config);

// Value-level aggregation: out.row(t) = softmax(scores[t]) . tokens[indices[t]].
// Tokens with an empty selection copy their input row.
Matrix aggregate_values(const Matrix& tokens, const std::vector<std::vector<int>>& indices,
                        const std::vector<std::vector<double>>& scores);

// Elementwise gate on plain values; the tape op uses the same kernel.
Matrix adaptive_gate(const Matrix& x_in, const Matrix& x_agg, const HgaConfig& config);

struct HgaForward {
    FusedSequence input;  // X_in
    Var aggregated;       // X_in_agg
    Var output;           // X_out
    SelectionSet selections;
};

// Full differentiable pass: append -> intra/inter selection -> joint-softmax
// weighted aggregation -> adaptive gate. Selections are piecewise constant;
// gradients flow through similarities, weights and token values.
HgaForward hga_apply(const std::vector<std::pair<std::string, Var>>& group_hidden,
                     const HgaConfig& config);

}  // namespace moef
