// Acceptance suite: one check per shipped guarantee, each printing a single
// PASS/FAIL line. Exit status is nonzero if any check fails.

#include "moef/checkpoint.hpp"
#include "moef/errors.hpp"
#include "moef/ops.hpp"
#include "moef/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <unistd.h>
#include <vector>

using namespace moef;
namespace fs = std::filesystem;

namespace {

int failures = 0;
int dir_counter = 0;

std::string fresh_dir() {
    const std::string dir =
        (fs::temp_directory_path() / ("moef_accept_" + std::to_string(::getpid()) + "_" +
                                      std::to_string(dir_counter++)))
            .string();
    fs::remove_all(dir);
    return dir;
}

void report(const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "PASS" : "FAIL") << "  " << name;
    if (!detail.empty()) std::cout << "  [" << detail << "]";
    std::cout << "\n";
    std::cout.flush();
    if (!ok) ++failures;
}

void run_criterion(const std::string& name, const std::function<bool(std::string&)>& body) {
    std::string detail;
    bool ok = false;
    try {
        ok = body(detail);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
        ok = false;
    }
    report(name, ok, detail);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small heterogeneous model used where the criterion does not pin sizes.
ExperimentConfig desk_config() {
    ExperimentConfig cfg = default_experiment_config();
    apply_override(cfg, "encoder.siglip.tokens", "32");
    apply_override(cfg, "encoder.dinov2.tokens", "24");
    apply_override(cfg, "encoder.convnext.tokens", "16");
    apply_override(cfg, "encoder.clip.tokens", "24");
    cfg.out_dir = fresh_dir();
    return cfg;
}

// --- criteria ---

bool router_contract(std::string& detail) {
    MoecConfig cfg;
    cfg.num_experts = 4;
    cfg.top_k = 2;
    cfg.input_dim = 8;
    ParamSet params;
    MoecBank bank{"moec.check", cfg};
    add_bank_params(params, bank, 404, true);

    Rng rng(99);
    int tokens_checked = 0;
    for (int rep = 0; rep < 8; ++rep) {
        Tape tape;
        BoundBank bound = bind_bank(tape, params, bank, true);
        const Matrix features = 3.0 * rng.normal_matrix(160, 8);
        const RouterDecision d = route(tape.constant(features), bound, cfg);
        const Matrix& w = tape.value(d.selected_weights);
        const Matrix& dense = tape.value(d.dense_weights);
        for (Index t = 0; t < features.rows(); ++t) {
            ++tokens_checked;
            if (std::abs(w.row(t).sum() - 1.0) > 1e-9) return false;
            if (w.cols() != 2 || d.selected_indices.cols() != 2) return false;
            if (d.selected_indices(t, 0) == d.selected_indices(t, 1)) return false;
            // full-sort oracle
            std::vector<std::pair<double, int>> sorted;
            for (Index e = 0; e < 4; ++e) sorted.emplace_back(dense(t, e), static_cast<int>(e));
            std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            for (int j = 0; j < 2; ++j) {
                if (d.selected_indices(t, j) != sorted[static_cast<size_t>(j)].second)
                    return false;
            }
        }
    }
    detail = std::to_string(tokens_checked) + " tokens";
    return tokens_checked >= 1000;
}

bool degeneracy_equivalence(std::string& detail) {
    // (a) bank with one expert == plain connector, bitwise
    MoecConfig mcfg;
    mcfg.num_experts = 1;
    mcfg.top_k = 1;
    mcfg.input_dim = 6;
    mcfg.hidden_dim = 8;
    mcfg.output_dim = 6;
    ParamSet params;
    MoecBank bank{"moec.deg", mcfg};
    add_bank_params(params, bank, 7, true);
    Rng rng(5);
    Tape tape;
    BoundBank bound = bind_bank(tape, params, bank, true);
    const Matrix x = rng.normal_matrix(40, 6);
    auto [hidden, decision] = moec_forward(tape.constant(x), bound, mcfg);
    Var plain = expert_forward(tape.constant(x), bound.experts[0]);
    if (std::memcmp(tape.value(hidden).data(), tape.value(plain).data(),
                    sizeof(double) * 40 * 6) != 0) {
        detail = "bank/plain outputs differ bitwise";
        return false;
    }

    // (b) end-to-end: mlp vs moec ablation cells, E=1, K=1, identical task
    // trajectories over 100 steps
    ExperimentConfig base = desk_config();
    base.steps = 100;
    base.batch_size = 2;
    base.metric_cadence = 1;
    apply_override(base, "moec.experts", "1");
    apply_override(base, "moec.top_k", "1");

    AblationAxes axes;
    axes.connector = true;
    const std::vector<AblationRow> rows = run_ablation_matrix(base, axes);
    if (rows.size() != 2 || !rows[0].ok || !rows[1].ok) {
        detail = "ablation cells failed";
        return false;
    }
    const auto mlp_records =
        read_jsonl((fs::path(base.out_dir) / "cells" / "connector_mlp" / "metrics.jsonl").string());
    const auto moe_records =
        read_jsonl((fs::path(base.out_dir) / "cells" / "connector_moec" / "metrics.jsonl").string());
    if (mlp_records.size() != 100 || moe_records.size() != 100) {
        detail = "trajectory lengths differ";
        return false;
    }
    double worst = 0.0;
    for (size_t i = 0; i < 100; ++i) {
        worst = std::max(worst, std::abs(mlp_records[i]["task_loss"].get<double>() -
                                         moe_records[i]["task_loss"].get<double>()));
    }
    detail = "max trajectory gap " + std::to_string(worst);
    return worst <= 1e-12;
}

bool gradient_integrity(std::string& detail) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const GradCheckReport report = gradient_check(tiny_model_config(), 1e-5, seed);
        worst = std::max(worst, report.max_rel_error);
    }
    detail = "max rel err " + std::to_string(worst) + " over 5 seeds";
    return worst < 1e-4;
}

bool balance_calibration(std::string& detail) {
    ModelConfig cfg = tiny_model_config();
    Model model(cfg);
    for (const std::string& g : {"siglip", "dinov2", "convnext", "clip"}) {
        model.params().at("moec." + g + ".router.weight").setZero();
        model.params().at("moec." + g + ".router.bias").setZero();
    }
    TaskSampler sampler(cfg);
    const StepStats stats = model.evaluate(sampler.batch(1, 2));
    for (const auto& [name, v] : stats.loss.balance) {
        if (std::abs(v - 1.0) > 1e-8) {
            detail = "balance for " + name + " = " + std::to_string(v);
            return false;
        }
    }
    if (std::abs(stats.loss.balance_sum() - 4.0) > 1e-8) {
        detail = "balance sum " + std::to_string(stats.loss.balance_sum());
        return false;
    }
    const double reconstructed = stats.loss.task_loss + 0.1 * 4.0 + 0.01 * stats.loss.zloss_sum();
    const double gap = std::abs(stats.loss.total - reconstructed);
    detail = "recombination gap " + std::to_string(gap);
    return gap <= 1e-12 && stats.loss.balance_weight == 0.1 && stats.loss.zloss_weight == 0.01;
}

bool hga_structural(std::string& detail) {
    Rng rng(31);
    HgaConfig cfg;
    int instances = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        std::vector<Matrix> groups;
        std::vector<GroupSpan> spans;
        const size_t n_groups = 2 + rng.next_u64() % 3;
        Index at = 0;
        std::vector<Matrix> parts;
        for (size_t g = 0; g < n_groups; ++g) {
            const Index len = 2 + static_cast<Index>(rng.next_u64() % 5);
            parts.push_back(rng.normal_matrix(len, 4));
            spans.push_back({known_groups()[g], at, len});
            at += len;
        }
        Matrix tokens(at, 4);
        for (size_t g = 0; g < n_groups; ++g)
            tokens.middleRows(spans[g].start, spans[g].length) = parts[g];

        const SelectionSet set = select_all(tokens, spans, cfg);
        for (size_t g = 0; g < n_groups; ++g) {
            const GroupSpan& span = spans[g];
            const GroupSelection& sel = set.groups[g];
            for (Index t = 0; t < span.length; ++t) {
                for (Index j = 0; j < sel.intra_global.cols(); ++j) {
                    if (sel.intra_global(t, j) == span.start + t) {
                        detail = "self-selection violation";
                        return false;
                    }
                }
                for (Index j = 0; j < sel.inter_global.cols(); ++j) {
                    const int idx = sel.inter_global(t, j);
                    if (idx >= span.start && idx < span.start + span.length) {
                        detail = "own-group inter-selection violation";
                        return false;
                    }
                }
            }
        }
        ++instances;
    }

    // gate identities
    const Matrix x = rng.normal_matrix(64, 8);
    const Matrix same = adaptive_gate(x, x, cfg);
    if (std::memcmp(same.data(), x.data(), sizeof(double) * 64 * 8) != 0) {
        detail = "gate(X, X) not bitwise X";
        return false;
    }
    Matrix shifted = x;
    shifted.array() += cfg.gate_shift;
    const Matrix d = shifted - x;
    const Matrix gate = sigmoid((cfg.gate_slope * (d.array() - cfg.gate_shift)).matrix());
    if ((gate.array() - 0.5).abs().maxCoeff() > 1e-12) {
        detail = "gate midpoint off 0.5";
        return false;
    }
    detail = std::to_string(instances) + " random instances";
    return instances >= 1000;
}

bool default_constants(std::string& detail) {
    const ExperimentConfig cfg = parse_config_text("");
    const bool ok = cfg.model.moec.num_experts == 4 && cfg.model.moec.top_k == 2 &&
                    cfg.model.hga.intra_top_m == 3 && cfg.model.hga.inter_top_n == 7 &&
                    cfg.model.balance_weight == 0.1 && cfg.model.zloss_weight == 0.01;
    detail = "E=" + std::to_string(cfg.model.moec.num_experts) +
             " K=" + std::to_string(cfg.model.moec.top_k) +
             " M=" + std::to_string(cfg.model.hga.intra_top_m) +
             " N=" + std::to_string(cfg.model.hga.inter_top_n);
    return ok;
}

bool token_accounting(std::string& detail) {
    // encoder-subset ablation at the full default token counts, one step per cell
    ExperimentConfig base = default_experiment_config();
    base.steps = 1;
    base.batch_size = 1;
    base.out_dir = fresh_dir();
    AblationAxes axes;
    axes.encoders = true;
    const std::vector<AblationRow> rows = run_ablation_matrix(base, axes);
    const std::vector<Index> expected = {440, 540, 1116, 1692};
    if (rows.size() != 4) {
        detail = "expected 4 subset cells";
        return false;
    }
    for (size_t i = 0; i < 4; ++i) {
        if (!rows[i].ok || rows[i].token_total != expected[i]) {
            detail = "cell " + rows[i].cell.name + " tokens " +
                     std::to_string(rows[i].token_total);
            return false;
        }
    }

    const FlopsBreakdown flops = flops_estimate(default_model_config());
    const double ratio = flops.connector_delta() / flops.total_with_moec();
    detail = "totals 440/540/1116/1692, connector delta " +
             std::to_string(100.0 * ratio) + "% of total";
    return ratio < 0.02;
}

bool learnability(std::string& detail) {
    ExperimentConfig four = desk_config();
    four.steps = 500;
    four.batch_size = 16;
    four.learning_rate = 0.5;
    four.metric_cadence = 50;
    const RunResult four_run = run_experiment(four);

    ExperimentConfig single = four;
    single.out_dir = fresh_dir();
    apply_override(single, "encoders", "siglip");
    const RunResult single_run = run_experiment(single);

    const double initial = four_run.first.loss.task_loss;
    const double final_four = four_run.final.loss.task_loss;
    const double final_single = single_run.final.loss.task_loss;
    detail = "task loss " + std::to_string(initial) + " -> " + std::to_string(final_four) +
             " (four groups), " + std::to_string(final_single) + " (siglip only)";
    return final_four <= 0.5 * initial && final_four < final_single;
}

bool topk_sweep(std::string& detail) {
    ExperimentConfig base = desk_config();
    base.steps = 3;
    base.batch_size = 2;
    AblationAxes axes;
    axes.top_k = true;
    const std::vector<AblationRow> rows = run_ablation_matrix(base, axes);
    if (rows.size() != 4) {
        detail = "expected 4 cells";
        return false;
    }
    for (const AblationRow& row : rows) {
        if (!row.ok) {
            detail = "cell " + row.cell.name + " failed: " + row.error;
            return false;
        }
        if (row.utilization_entropy.size() != 4) {
            detail = "cell " + row.cell.name + " missing utilization entropy";
            return false;
        }
    }
    // expert flops linear in K
    const double unit = rows[0].flops_experts;
    for (size_t i = 0; i < 4; ++i) {
        if (std::abs(rows[i].flops_experts - unit * static_cast<double>(i + 1)) > 1e-9) {
            detail = "expert flops not linear in K";
            return false;
        }
    }
    detail = "4 cells, expert flops linear in K, entropy reported";
    return true;
}

bool reproducibility(std::string& detail) {
    // byte-identical metric streams
    ExperimentConfig cfg = desk_config();
    cfg.steps = 8;
    cfg.batch_size = 2;
    const RunResult r1 = run_experiment(cfg);
    ExperimentConfig cfg2 = cfg;
    cfg2.out_dir = fresh_dir();
    const RunResult r2 = run_experiment(cfg2);
    if (slurp(r1.paths.metrics) != slurp(r2.paths.metrics)) {
        detail = "metric streams differ";
        return false;
    }

    // checkpoint resume matches the uninterrupted run over 10 steps
    ExperimentConfig full = cfg;
    full.out_dir = fresh_dir();
    full.steps = 20;
    const RunResult uninterrupted = run_experiment(full);

    ExperimentConfig half = full;
    half.out_dir = fresh_dir();
    half.steps = 10;
    const RunResult first_half = run_experiment(half);

    ExperimentConfig rest = full;
    rest.out_dir = fresh_dir();
    RunOptions opts;
    opts.resume_from = first_half.paths.checkpoint;
    const RunResult resumed = run_experiment(rest, opts);

    const auto full_records = read_jsonl(uninterrupted.paths.metrics);
    const auto tail_records = read_jsonl(resumed.paths.metrics);
    if (full_records.size() != 20 || tail_records.size() != 10) {
        detail = "unexpected record counts";
        return false;
    }
    double worst = 0.0;
    for (size_t i = 0; i < 10; ++i) {
        worst = std::max(worst, std::abs(full_records[10 + i]["total"].get<double>() -
                                         tail_records[i]["total"].get<double>()));
    }
    detail = "resume gap " + std::to_string(worst);
    return worst <= 1e-12;
}

}  // namespace

int main(int argc, char** argv) {
    using Criterion = std::pair<std::string, std::function<bool(std::string&)>>;
    const std::vector<Criterion> criteria = {
        {"router-contract", router_contract},
        {"degeneracy-equivalence", degeneracy_equivalence},
        {"gradient-integrity", gradient_integrity},
        {"balance-loss-calibration", balance_calibration},
        {"hga-structural-invariants", hga_structural},
        {"default-constants", default_constants},
        {"token-accounting", token_accounting},
        {"learnability", learnability},
        {"topk-sweep-sanity", topk_sweep},
        {"reproducibility", reproducibility},
    };

    const std::string only = argc > 1 ? argv[1] : "";
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& [name, body] : criteria) {
        if (!only.empty() && name != only) continue;
        run_criterion(name, body);
    }
    const auto t1 = std::chrono::steady_clock::now();
    std::cout << (failures == 0 ? "acceptance: all criteria passed"
                                : "acceptance: " + std::to_string(failures) + " criteria FAILED")
              << " (" << std::chrono::duration<double>(t1 - t0).count() << " s)\n";
    return failures == 0 ? 0 : 1;
}
