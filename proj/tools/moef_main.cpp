#include "moef/config.hpp"
#include "moef/errors.hpp"
#include "moef/runner.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

using namespace moef;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<int> steps;
    std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config file");
    cmd->add_option("--set", opts.overrides, "override a config key, KEY=VALUE")
        ->type_name("KEY=VALUE");
    cmd->add_option("--seed", opts.seed, "override the experiment seed");
    cmd->add_option("--steps", opts.steps, "override the step count");
    cmd->add_option("--out", opts.out_dir, "override the output directory");
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
    ExperimentConfig cfg = opts.config_path.empty() ? default_experiment_config()
                                                    : load_config(opts.config_path);
    if (const char* env = std::getenv("MOEF_OUT_DIR"); env != nullptr && *env != '\0') {
        cfg.out_dir = env;
    }
    for (const std::string& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw config_error("--set expects KEY=VALUE, got '" + kv + "'");
        }
        apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (opts.seed) cfg.model.seed = *opts.seed;
    if (opts.steps) cfg.steps = *opts.steps;
    if (opts.out_dir) cfg.out_dir = *opts.out_dir;
    cfg.validate();
    return cfg;
}

int cmd_run(const CommonOpts& opts, const std::string& resume_from) {
    const ExperimentConfig cfg = resolve_config(opts);
    RunOptions run_opts;
    if (!resume_from.empty()) run_opts.resume_from = resume_from;
    const RunResult result = run_experiment(cfg, run_opts);
    std::cout << "completed " << result.steps_completed << " steps\n"
              << "task_loss " << result.final.loss.task_loss << "  total "
              << result.final.loss.total << "\n"
              << "metrics    " << result.paths.metrics << "\n"
              << "checkpoint " << result.paths.checkpoint << "\n";
    return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::vector<std::string>& axis_names,
               const std::vector<int>& top_k_values) {
    const ExperimentConfig cfg = resolve_config(opts);
    AblationAxes axes;
    for (const std::string& a : axis_names) {
        if (a == "connector") axes.connector = true;
        else if (a == "fusion") axes.fusion = true;
        else if (a == "encoders") axes.encoders = true;
        else if (a == "top_k") axes.top_k = true;
        else throw config_error("unknown ablation axis '" + a +
                                "' (expected connector/fusion/encoders/top_k)");
    }
    if (!top_k_values.empty()) axes.top_k_values = top_k_values;
    const std::vector<AblationRow> rows = run_ablation_matrix(cfg, axes);
    std::cout << ablation_table(rows);
    for (const AblationRow& row : rows) {
        if (!row.ok) return 2;
    }
    return 0;
}

int cmd_grad_check(const CommonOpts& opts, double tolerance, double fd_step, int seeds) {
    ModelConfig model = opts.config_path.empty() && opts.overrides.empty()
                            ? tiny_model_config()
                            : resolve_config(opts).model;
    if (opts.seed) model.seed = *opts.seed;
    bool ok = true;
    for (int s = 0; s < seeds; ++s) {
        const GradCheckReport report = gradient_check(model, fd_step, static_cast<std::uint64_t>(s));
        for (const GradCheckBlock& block : report.blocks) {
            const bool pass = block.max_rel_error < tolerance;
            ok = ok && pass;
            std::cout << (pass ? "PASS" : "FAIL") << "  seed " << s << "  " << block.name
                      << "  max_rel_err " << block.max_rel_error << "\n";
        }
    }
    std::cout << (ok ? "gradient check passed" : "gradient check FAILED") << " (tolerance "
              << tolerance << ")\n";
    return ok ? 0 : 2;
}

int cmd_flops(const CommonOpts& opts, bool as_json) {
    const ExperimentConfig cfg = resolve_config(opts);
    const FlopsBreakdown f = flops_estimate(cfg.model);
    if (as_json) {
        Json j;
        j["connector_dense"] = f.connector_dense;
        j["connector_experts"] = f.connector_experts;
        j["router"] = f.router;
        j["hga_similarity"] = f.hga_similarity;
        j["hga_aggregate"] = f.hga_aggregate;
        j["gate"] = f.gate;
        j["task_head"] = f.task_head;
        j["total_with_mlp"] = f.total_with_mlp();
        j["total_with_moec"] = f.total_with_moec();
        j["connector_delta"] = f.connector_delta();
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    std::cout << "multiply-add counts per forward pass (" << cfg.model.total_tokens()
              << " tokens)\n"
              << "  connector (dense mlp)   " << f.connector_dense << "\n"
              << "  connector (expert bank) " << f.connector_experts << "\n"
              << "  router                  " << f.router << "\n"
              << "  group similarity        " << f.hga_similarity << "\n"
              << "  aggregation             " << f.hga_aggregate << "\n"
              << "  gate                    " << f.gate << "\n"
              << "  task head               " << f.task_head << "\n"
              << "  total with mlp          " << f.total_with_mlp() << "\n"
              << "  total with experts      " << f.total_with_moec() << "\n"
              << "  connector delta         " << f.connector_delta() << " ("
              << 100.0 * f.connector_delta() / f.total_with_moec() << "% of total)\n";
    return 0;
}

int cmd_inspect(const std::string& path) {
    const TrainState state = load_checkpoint(path);
    std::cout << "checkpoint " << path << "\n"
              << "  step     " << state.step << "\n"
              << "  seed     " << state.rng_seed << "\n"
              << "  encoders ";
    for (size_t i = 0; i < state.config.model.encoders.size(); ++i) {
        if (i > 0) std::cout << ",";
        std::cout << state.config.model.encoders[i].group_name;
    }
    std::cout << "\n  connector " << to_string(state.config.model.connector) << ", fusion "
              << to_string(state.config.model.fusion) << "\n"
              << "  tokens    " << state.config.model.total_tokens() << "\n"
              << "  params    " << state.params.size() << " blocks\n";
    for (const auto& [name, values] : state.params.items()) {
        std::cout << "    " << name << "  " << values.rows() << "x" << values.cols()
                  << "  |v| " << values.norm() << "\n";
    }
    if (!state.velocity.empty()) {
        std::cout << "  momentum state for " << state.velocity.size() << " blocks\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse expert connectors + hierarchical group attention, desk-scale harness"};
    app.require_subcommand(1);

    CommonOpts run_opts;
    std::string resume_from;
    CLI::App* run = app.add_subcommand("run", "train with a config, emit metrics + checkpoint");
    add_common(run, run_opts);
    run->add_option("--resume", resume_from, "resume from a checkpoint file");

    CommonOpts ablate_opts;
    std::vector<std::string> axis_names;
    std::vector<int> top_k_values;
    CLI::App* ablate = app.add_subcommand("ablate", "run an ablation matrix");
    add_common(ablate, ablate_opts);
    ablate->add_option("--axes", axis_names, "axes: connector,fusion,encoders,top_k")
        ->delimiter(',');
    ablate->add_option("--top-k-values", top_k_values, "Top-K values for the top_k axis")
        ->delimiter(',');

    CommonOpts grad_opts;
    double tolerance = 1e-4;
    double fd_step = 1e-5;
    int grad_seeds = 5;
    CLI::App* grad = app.add_subcommand(
        "grad-check", "compare reverse-mode gradients against finite differences");
    add_common(grad, grad_opts);
    grad->add_option("--tolerance", tolerance, "max relative error to pass");
    grad->add_option("--fd-step", fd_step, "central-difference step");
    grad->add_option("--seeds", grad_seeds, "number of sample seeds");

    CommonOpts flops_opts;
    bool flops_json = false;
    CLI::App* flops = app.add_subcommand("flops", "analytic multiply-add estimate");
    add_common(flops, flops_opts);
    flops->add_flag("--json", flops_json, "emit JSON");

    std::string inspect_path;
    CLI::App* inspect = app.add_subcommand("inspect-checkpoint", "describe a checkpoint file");
    inspect->add_option("path", inspect_path, "checkpoint file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(run_opts, resume_from);
        if (ablate->parsed()) return cmd_ablate(ablate_opts, axis_names, top_k_values);
        if (grad->parsed()) return cmd_grad_check(grad_opts, tolerance, fd_step, grad_seeds);
        if (flops->parsed()) return cmd_flops(flops_opts, flops_json);
        if (inspect->parsed()) return cmd_inspect(inspect_path);
    } catch (const moef::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const moef::shape_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const moef::io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const moef::numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
