#include "moef/hga.hpp"

#include "moef/errors.hpp"
#include "moef/ops.hpp"

#include <algorithm>
#include <limits>

namespace moef {

void HgaConfig::validate() const {
    if (intra_top_m < 1) throw config_error("hga.intra_top_m must be >= 1");
    if (inter_top_n < 1) throw config_error("hga.inter_top_n must be >= 1");
    if (!(gate_slope > 0.0)) throw config_error("hga.gate_slope must be > 0");
}

Index FusedSequence::total() const {
    Index t = 0;
    for (const auto& g : groups) t += g.length;
    return t;
}

const GroupSpan& FusedSequence::span_of(Index token) const {
    for (const auto& g : groups) {
        if (token >= g.start && token < g.start + g.length) return g;
    }
    throw shape_error("FusedSequence: token index " + std::to_string(token) + " out of range");
}

FusedSequence sequence_append(const std::vector<std::pair<std::string, Var>>& group_hidden) {
    if (group_hidden.empty()) throw shape_error("sequence_append: no groups");
    FusedSequence seq;
    std::vector<Var> parts;
    Index at = 0;
    Tape& tape = *group_hidden[0].second.tape;
    for (const auto& [name, var] : group_hidden) {
        const Index rows = tape.value(var).rows();
        seq.groups.push_back({name, at, rows});
        parts.push_back(var);
        at += rows;
    }
    seq.tokens = concat_rows(parts);
    return seq;
}

Selection intra_group_select(const Matrix& group_tokens, int top_m) {
    const Index g = group_tokens.rows();
    Selection sel;
    if (g < 2) {
        // degenerate group: nothing to select against, flagged by emptiness
        sel.indices.resize(g, 0);
        sel.scores.resize(g, 0);
        return sel;
    }
    Matrix masked = cosine_sim(group_tokens, group_tokens);
    masked.diagonal().setZero();  // the (1 - I) self-mask
    // ranking additionally bars the self index, which a zero score alone
    // would not when every other score is negative
    Matrix ranked = masked;
    ranked.diagonal().setConstant(-std::numeric_limits<double>::infinity());
    const int m = static_cast<int>(std::min<Index>(top_m, g - 1));
    TopK top = topk_rows(ranked, m);
    sel.indices = std::move(top.indices);
    sel.scores.resize(g, m);
    for (Index i = 0; i < g; ++i)
        for (int j = 0; j < m; ++j) sel.scores(i, j) = masked(i, sel.indices(i, j));
    return sel;
}

Selection inter_group_select(const Matrix& query_tokens, const Matrix& others, int top_n,
                             const std::vector<int>& other_row_to_global) {
    if (others.rows() == 0) {
        Selection sel;
        sel.indices.resize(query_tokens.rows(), 0);
        sel.scores.resize(query_tokens.rows(), 0);
        return sel;
    }
    if (other_row_to_global.size() != static_cast<size_t>(others.rows())) {
        throw shape_error("inter_group_select: global index map does not cover the union");
    }
    const Matrix sim = cosine_sim(query_tokens, others);
    const int n = static_cast<int>(std::min<Index>(top_n, others.rows()));
    TopK top = topk_rows(sim, n);
    Selection sel;
    sel.scores = std::move(top.values);
    sel.indices.resize(sim.rows(), n);
    for (Index i = 0; i < sim.rows(); ++i)
        for (int j = 0; j < n; ++j)
            sel.indices(i, j) = other_row_to_global[static_cast<size_t>(top.indices(i, j))];
    return sel;
}

SelectionSet select_all(const Matrix& tokens, const std::vector<GroupSpan>& groups,
                        const HgaConfig& config) {
    config.validate();
    SelectionSet set;
    const Index total = tokens.rows();
    for (const GroupSpan& span : groups) {
        const Matrix group = tokens.middleRows(span.start, span.length);
        Matrix others(total - span.length, tokens.cols());
        std::vector<int> to_global;
        to_global.reserve(static_cast<size_t>(others.rows()));
        Index at = 0;
        for (Index t = 0; t < total; ++t) {
            if (t >= span.start && t < span.start + span.length) continue;
            others.row(at++) = tokens.row(t);
            to_global.push_back(static_cast<int>(t));
        }

        GroupSelection gs;
        Selection intra = intra_group_select(group, config.intra_top_m);
        gs.intra_local = intra.indices;
        gs.intra_scores = std::move(intra.scores);
        gs.intra_global = gs.intra_local;
        gs.intra_global.array() += static_cast<int>(span.start);

        Selection inter =
            inter_group_select(group, others, config.inter_top_n, to_global);
        gs.inter_global = std::move(inter.indices);
        gs.inter_scores = std::move(inter.scores);
        set.groups.push_back(std::move(gs));
    }
    return set;
}

Matrix aggregate_values(const Matrix& tokens, const std::vector<std::vector<int>>& indices,
                        const std::vector<std::vector<double>>& scores) {
    if (indices.size() != static_cast<size_t>(tokens.rows()) || scores.size() != indices.size()) {
        throw shape_error("aggregate_values: one selection list per token required");
    }
    Matrix out(tokens.rows(), tokens.cols());
    for (Index t = 0; t < tokens.rows(); ++t) {
        const auto& idx = indices[static_cast<size_t>(t)];
        const auto& sc = scores[static_cast<size_t>(t)];
        if (idx.size() != sc.size()) {
            throw shape_error("aggregate_values: index/score count mismatch at token " +
                              std::to_string(t));
        }
        if (idx.empty()) {
            out.row(t) = tokens.row(t);
            continue;
        }
        Matrix s(1, static_cast<Index>(sc.size()));
        for (size_t j = 0; j < sc.size(); ++j) s(0, static_cast<Index>(j)) = sc[j];
        const Matrix w = softmax_rows(s);
        RowVector acc = RowVector::Zero(tokens.cols());
        for (size_t j = 0; j < idx.size(); ++j)
            acc += w(0, static_cast<Index>(j)) * tokens.row(idx[j]);
        out.row(t) = acc;
    }
    return out;
}

Matrix adaptive_gate(const Matrix& x_in, const Matrix& x_agg, const HgaConfig& config) {
    config.validate();
    return gate_blend(x_in, x_agg, config.gate_slope, config.gate_shift);
}

HgaForward hga_apply(const std::vector<std::pair<std::string, Var>>& group_hidden,
                     const HgaConfig& config) {
    config.validate();
    HgaForward fwd;
    fwd.input = sequence_append(group_hidden);
    Tape& tape = *fwd.input.tokens.tape;
    const Matrix& values = tape.value(fwd.input.tokens);
    fwd.selections = select_all(values, fwd.input.groups, config);

    std::vector<Var> group_agg;
    for (size_t gi = 0; gi < fwd.input.groups.size(); ++gi) {
        const GroupSpan& span = fwd.input.groups[gi];
        const GroupSelection& sel = fwd.selections.groups[gi];
        Var group = group_hidden[gi].second;

        const Index m = sel.intra_local.cols();
        const Index n = sel.inter_global.cols();
        if (m + n == 0) {
            // nothing selectable (single 1-token group); aggregated = input
            std::vector<int> own(static_cast<size_t>(span.length));
            for (Index r = 0; r < span.length; ++r)
                own[static_cast<size_t>(r)] = static_cast<int>(span.start + r);
            group_agg.push_back(gather_rows(fwd.input.tokens, std::move(own)));
            continue;
        }

        std::vector<Var> score_parts;
        if (m > 0) {
            Var sim = cosine_sim(group, group);
            Matrix mask = Matrix::Ones(span.length, span.length);
            mask.diagonal().setZero();
            Var masked = cwise_mul_const(sim, std::move(mask));
            score_parts.push_back(gather_entries(masked, sel.intra_local));
        }
        if (n > 0) {
            std::vector<Var> other_parts;
            for (size_t oi = 0; oi < group_hidden.size(); ++oi)
                if (oi != gi) other_parts.push_back(group_hidden[oi].second);
            Var others = other_parts.size() == 1 ? other_parts[0] : concat_rows(other_parts);
            Var sim = cosine_sim(group, others);
            // global -> union-local column indices (union keeps fused order)
            IndexMatrix local(sel.inter_global.rows(), n);
            for (Index i = 0; i < local.rows(); ++i) {
                for (Index j = 0; j < n; ++j) {
                    const int g = sel.inter_global(i, j);
                    local(i, j) = g < span.start ? g : g - static_cast<int>(span.length);
                }
            }
            score_parts.push_back(gather_entries(sim, std::move(local)));
        }

        Var sel_scores = score_parts.size() == 1 ? score_parts[0] : concat_cols(score_parts);
        Var weights = softmax_rows(sel_scores);  // joint over the M'+N' candidates

        IndexMatrix rows(span.length, m + n);
        if (m > 0) rows.leftCols(m) = sel.intra_global;
        if (n > 0) rows.rightCols(n) = sel.inter_global;
        group_agg.push_back(weighted_row_gather_sum(weights, fwd.input.tokens, std::move(rows)));
    }

    fwd.aggregated = group_agg.size() == 1 ? group_agg[0] : concat_rows(group_agg);
    fwd.output = adaptive_gate_blend(fwd.input.tokens, fwd.aggregated, config.gate_slope,
                                     config.gate_shift);
    return fwd;
}

}  // namespace moef
