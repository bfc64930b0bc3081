#include "moef/runner.hpp"

#include "moef/errors.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

namespace moef {

namespace fs = std::filesystem;

RunPaths run_paths(const std::string& out_dir) {
    RunPaths p;
    p.dir = out_dir;
    p.metrics = (fs::path(out_dir) / "metrics.jsonl").string();
    p.timing = (fs::path(out_dir) / "timing.jsonl").string();
    p.checkpoint = (fs::path(out_dir) / "checkpoint.bin").string();
    p.config_echo = (fs::path(out_dir) / "config.echo").string();
    return p;
}

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    RunResult result;
    result.paths = run_paths(config.out_dir);

    std::error_code ec;
    fs::create_directories(result.paths.dir, ec);
    if (ec) throw io_error("cannot create output directory '" + result.paths.dir + "': " +
                           ec.message());

    // the config actually trained: on resume, model identity comes from the
    // checkpoint and only run controls come from the caller
    ExperimentConfig effective = config;
    std::uint64_t start_step = 0;
    std::optional<Model> model;
    Optimizer opt;
    if (options.resume_from.has_value()) {
        TrainState state = load_checkpoint(*options.resume_from);
        effective.model = state.config.model;
        effective.validate();
        model.emplace(effective.model);
        model->params() = std::move(state.params);
        opt.velocity = std::move(state.velocity);
        start_step = state.step;
    } else {
        model.emplace(effective.model);
    }
    opt.learning_rate = effective.learning_rate;
    opt.momentum = effective.momentum;
    opt.cosine_schedule = effective.cosine_schedule;
    opt.schedule_steps = static_cast<std::uint64_t>(effective.steps);
    opt.freeze_connector = effective.freeze_connector;

    {
        std::ofstream echo(result.paths.config_echo, std::ios::trunc);
        echo << serialize_config(effective);
    }

    const bool append = start_step > 0 && fs::exists(result.paths.metrics);
    JsonlWriter metrics(result.paths.metrics, append);
    JsonlWriter timing(result.paths.timing, append);

    TaskSampler sampler(model->config());
    const auto total_steps = static_cast<std::uint64_t>(effective.steps);
    bool first_captured = false;
    for (std::uint64_t step = start_step + 1; step <= total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const SampleBatch batch = sampler.batch(step, effective.batch_size);
        StepStats stats = model->train_step(batch, opt, step);
        const auto t1 = std::chrono::steady_clock::now();
        const double wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

        if (!first_captured) {
            result.first = stats;
            first_captured = true;
        }
        result.final = stats;
        result.steps_completed = step;

        if (step % static_cast<std::uint64_t>(effective.metric_cadence) == 0 ||
            step == total_steps) {
            metrics.write(metric_record(step, stats));
            timing.write(timing_record(step, wall_ms));
        }
    }

    TrainState state;
    state.config = effective;
    state.params = model->params();
    state.velocity = opt.velocity;
    state.step = result.steps_completed == 0 ? start_step : result.steps_completed;
    state.rng_seed = model->config().seed;
    save_checkpoint(state, result.paths.checkpoint);
    return result;
}

std::vector<AblationCell> ablation_cells(const AblationAxes& axes) {
    using Axis = std::vector<std::pair<std::string, std::string>>;
    std::vector<Axis> active;
    if (axes.connector) active.push_back({{"connector", "mlp"}, {"connector", "moec"}});
    if (axes.fusion) active.push_back({{"fusion", "append_only"}, {"fusion", "hga"}});
    if (axes.encoders) {
        active.push_back({{"encoders", "siglip"},
                          {"encoders", "siglip,convnext"},
                          {"encoders", "siglip,clip,convnext"},
                          {"encoders", "siglip,dinov2,convnext,clip"}});
    }
    if (axes.top_k) {
        Axis k_axis;
        for (int k : axes.top_k_values) k_axis.emplace_back("moec.top_k", std::to_string(k));
        active.push_back(std::move(k_axis));
    }

    std::vector<AblationCell> cells;
    std::vector<size_t> cursor(active.size(), 0);
    std::set<std::string> seen;
    while (true) {
        AblationCell cell;
        std::ostringstream name;
        for (size_t a = 0; a < active.size(); ++a) {
            const auto& [key, value] = active[a][cursor[a]];
            cell.overrides.emplace_back(key, value);
            if (a > 0) name << " ";
            name << key << "=" << value;
        }
        cell.name = active.empty() ? "base" : name.str();
        std::string dedup_key;
        for (const auto& [k, v] : cell.overrides) dedup_key += k + "=" + v + ";";
        if (seen.insert(dedup_key).second) cells.push_back(std::move(cell));

        size_t a = 0;
        for (; a < active.size(); ++a) {
            if (++cursor[a] < active[a].size()) break;
            cursor[a] = 0;
        }
        if (a == active.size()) break;
    }
    return cells;
}

namespace {

std::string cell_dir_name(const AblationCell& cell) {
    std::string s = cell.name;
    for (char& c : s) {
        if (c == ' ' || c == ',' || c == '=') c = '_';
    }
    return s.empty() ? "base" : s;
}

double histogram_entropy(const std::vector<double>& f) {
    double h = 0.0;
    for (double v : f) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

}  // namespace

std::vector<AblationRow> run_ablation_matrix(const ExperimentConfig& base,
                                             const AblationAxes& axes) {
    base.validate();
    const std::vector<AblationCell> cells = ablation_cells(axes);
    std::vector<AblationRow> rows;
    for (const AblationCell& cell : cells) {
        AblationRow row;
        row.cell = cell;
        try {
            ExperimentConfig cfg = base;
            for (const auto& [key, value] : cell.overrides) apply_override(cfg, key, value);
            cfg.out_dir =
                (fs::path(base.out_dir) / "cells" / cell_dir_name(cell)).string();
            cfg.validate();

            const RunResult run = run_experiment(cfg);
            const FlopsBreakdown flops = flops_estimate(cfg.model);
            row.token_total = cfg.model.total_tokens();
            row.final_task_loss = run.final.loss.task_loss;
            row.final_total = run.final.loss.total;
            const bool moe = cfg.model.connector == ConnectorKind::moec;
            row.flops_total = moe ? flops.total_with_moec() : flops.total_with_mlp();
            row.flops_experts = moe ? flops.connector_experts : flops.connector_dense;
            row.flops_connector_delta = flops.connector_delta();
            for (const auto& [name, f] : run.final.utilization) {
                row.utilization_entropy.emplace_back(name, histogram_entropy(f));
            }
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }

    std::error_code ec;
    fs::create_directories(base.out_dir, ec);
    if (!ec) {
        JsonlWriter summary((fs::path(base.out_dir) / "summary.jsonl").string(), false);
        for (const AblationRow& row : rows) summary.write(ablation_row_json(row));
        std::ofstream table((fs::path(base.out_dir) / "summary.txt").string(), std::ios::trunc);
        table << ablation_table(rows);
    }
    return rows;
}

Json ablation_row_json(const AblationRow& row) {
    Json j;
    j["cell"] = row.cell.name;
    Json overrides = Json::object();
    for (const auto& [k, v] : row.cell.overrides) overrides[k] = v;
    j["overrides"] = std::move(overrides);
    j["ok"] = row.ok;
    if (!row.ok) {
        j["error"] = row.error;
        return j;
    }
    j["token_total"] = row.token_total;
    j["final_task_loss"] = row.final_task_loss;
    j["final_total"] = row.final_total;
    j["flops_total"] = row.flops_total;
    j["flops_experts"] = row.flops_experts;
    j["flops_connector_delta"] = row.flops_connector_delta;
    Json entropy = Json::object();
    for (const auto& [name, h] : row.utilization_entropy) entropy[name] = h;
    j["utilization_entropy"] = std::move(entropy);
    return j;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::vector<std::array<std::string, 6>> grid;
    grid.push_back({"cell", "tokens", "task_loss", "total_loss", "flops_total", "util_entropy"});
    for (const AblationRow& row : rows) {
        std::array<std::string, 6> r;
        r[0] = row.cell.name;
        if (!row.ok) {
            r[1] = "ERROR: " + row.error;
            grid.push_back(std::move(r));
            continue;
        }
        r[1] = std::to_string(row.token_total);
        auto fmt = [](double v) {
            std::ostringstream os;
            os.precision(6);
            os << v;
            return os.str();
        };
        r[2] = fmt(row.final_task_loss);
        r[3] = fmt(row.final_total);
        r[4] = fmt(row.flops_total);
        double mean_h = 0.0;
        for (const auto& [name, h] : row.utilization_entropy) mean_h += h;
        r[5] = row.utilization_entropy.empty()
                   ? "-"
                   : fmt(mean_h / static_cast<double>(row.utilization_entropy.size()));
        grid.push_back(std::move(r));
    }
    std::array<size_t, 6> width{};
    for (const auto& r : grid)
        for (size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    std::ostringstream os;
    for (const auto& r : grid) {
        for (size_t c = 0; c < r.size(); ++c) {
            os << r[c] << std::string(width[c] - r[c].size() + 2, ' ');
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace moef
