#include "moef/checkpoint.hpp"
#include "moef/errors.hpp"
#include "moef/runner.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>

using namespace moef;
namespace fs = std::filesystem;

namespace {

int dir_counter = 0;

std::string fresh_dir() {
    const std::string dir =
        (fs::temp_directory_path() / ("moef_test_" + std::to_string(::getpid()) + "_" +
                                      std::to_string(dir_counter++)))
            .string();
    fs::remove_all(dir);
    return dir;
}

ExperimentConfig small_config() {
    ExperimentConfig cfg = default_experiment_config();
    apply_override(cfg, "encoder.siglip.tokens", "6");
    apply_override(cfg, "encoder.dinov2.tokens", "5");
    apply_override(cfg, "encoder.convnext.tokens", "4");
    apply_override(cfg, "encoder.clip.tokens", "5");
    cfg.steps = 5;
    cfg.batch_size = 2;
    cfg.learning_rate = 0.2;
    cfg.out_dir = fresh_dir();
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("steps=1 produces exactly one metric record and one checkpoint") {
    ExperimentConfig cfg = small_config();
    cfg.steps = 1;
    const RunResult result = run_experiment(cfg);
    CHECK(result.steps_completed == 1);
    CHECK(read_jsonl(result.paths.metrics).size() == 1);
    CHECK(fs::exists(result.paths.checkpoint));
}

TEST_CASE("metric records carry the full field set") {
    ExperimentConfig cfg = small_config();
    cfg.steps = 3;
    const RunResult result = run_experiment(cfg);
    const auto records = read_jsonl(result.paths.metrics);
    REQUIRE(records.size() == 3);
    for (const Json& rec : records) {
        CHECK(rec.contains("step"));
        CHECK(rec.contains("task_loss"));
        CHECK(rec.contains("balance"));
        CHECK(rec.contains("zloss"));
        CHECK(rec.contains("total"));
        CHECK(rec.contains("utilization"));
        CHECK(rec["balance"].size() == 4);
        CHECK(rec["utilization"]["siglip"].size() == 4);  // E entries
    }
    // the timing sidecar exists and has matching steps
    const auto timing = read_jsonl(result.paths.timing);
    REQUIRE(timing.size() == 3);
    CHECK(timing[0].contains("wall_ms"));
}

TEST_CASE("metric cadence thins records but always keeps the final step") {
    ExperimentConfig cfg = small_config();
    cfg.steps = 5;
    cfg.metric_cadence = 2;
    const RunResult result = run_experiment(cfg);
    const auto records = read_jsonl(result.paths.metrics);
    REQUIRE(records.size() == 3);
    CHECK(records[0]["step"] == 2);
    CHECK(records[1]["step"] == 4);
    CHECK(records[2]["step"] == 5);
}

TEST_CASE("identical config and seed give byte-identical metric streams") {
    ExperimentConfig cfg1 = small_config();
    const RunResult r1 = run_experiment(cfg1);
    ExperimentConfig cfg2 = cfg1;
    cfg2.out_dir = fresh_dir();
    const RunResult r2 = run_experiment(cfg2);
    CHECK(slurp(r1.paths.metrics) == slurp(r2.paths.metrics));
}

TEST_CASE("mlp cells report zero auxiliary losses") {
    ExperimentConfig cfg = small_config();
    apply_override(cfg, "connector", "mlp");
    cfg.steps = 2;
    const RunResult result = run_experiment(cfg);
    const auto records = read_jsonl(result.paths.metrics);
    for (const Json& rec : records) {
        for (const auto& [group, v] : rec["balance"].items()) CHECK(v.get<double>() == 0.0);
        for (const auto& [group, v] : rec["zloss"].items()) CHECK(v.get<double>() == 0.0);
        CHECK(rec["total"].get<double>() == rec["task_loss"].get<double>());
    }
}

TEST_CASE("checkpoint round trip preserves parameters bitwise") {
    ExperimentConfig cfg = small_config();
    cfg.steps = 2;
    const RunResult result = run_experiment(cfg);

    const TrainState state = load_checkpoint(result.paths.checkpoint);
    CHECK(state.step == 2);

    Model expected(state.config.model);
    // parameters differ from init (training happened) but shapes must match
    for (const auto& [name, values] : expected.params().items()) {
        CHECK(state.params.at(name).rows() == values.rows());
        CHECK(state.params.at(name).cols() == values.cols());
    }

    // save -> load -> identical bytes for every array
    const std::string copy_path = (fs::path(cfg.out_dir) / "copy.bin").string();
    save_checkpoint(state, copy_path);
    const TrainState reloaded = load_checkpoint(copy_path);
    for (const auto& [name, values] : state.params.items()) {
        const Matrix& other = reloaded.params.at(name);
        CHECK(std::memcmp(values.data(), other.data(),
                          sizeof(double) * static_cast<size_t>(values.size())) == 0);
    }
}

TEST_CASE("resume reproduces the uninterrupted trajectory") {
    ExperimentConfig full = small_config();
    full.steps = 12;
    const RunResult uninterrupted = run_experiment(full);

    ExperimentConfig half = full;
    half.out_dir = fresh_dir();
    half.steps = 6;
    const RunResult first_half = run_experiment(half);

    ExperimentConfig rest = full;
    rest.out_dir = fresh_dir();
    rest.steps = 12;
    RunOptions opts;
    opts.resume_from = first_half.paths.checkpoint;
    const RunResult resumed = run_experiment(rest, opts);

    const auto full_records = read_jsonl(uninterrupted.paths.metrics);
    const auto tail_records = read_jsonl(resumed.paths.metrics);
    REQUIRE(full_records.size() == 12);
    REQUIRE(tail_records.size() == 6);
    for (size_t i = 0; i < 6; ++i) {
        const Json& a = full_records[6 + i];
        const Json& b = tail_records[i];
        CHECK(a["step"] == b["step"]);
        CHECK(std::abs(a["total"].get<double>() - b["total"].get<double>()) <= 1e-12);
        CHECK(std::abs(a["task_loss"].get<double>() - b["task_loss"].get<double>()) <= 1e-12);
    }
}

TEST_CASE("momentum state survives the checkpoint round trip") {
    ExperimentConfig full = small_config();
    full.steps = 12;
    full.momentum = 0.5;
    const RunResult uninterrupted = run_experiment(full);

    ExperimentConfig half = full;
    half.out_dir = fresh_dir();
    half.steps = 6;
    const RunResult first_half = run_experiment(half);
    CHECK_FALSE(load_checkpoint(first_half.paths.checkpoint).velocity.empty());

    ExperimentConfig rest = full;
    rest.out_dir = fresh_dir();
    RunOptions opts;
    opts.resume_from = first_half.paths.checkpoint;
    const RunResult resumed = run_experiment(rest, opts);

    const auto full_records = read_jsonl(uninterrupted.paths.metrics);
    const auto tail_records = read_jsonl(resumed.paths.metrics);
    REQUIRE(tail_records.size() == 6);
    for (size_t i = 0; i < 6; ++i) {
        CHECK(std::abs(full_records[6 + i]["total"].get<double>() -
                       tail_records[i]["total"].get<double>()) <= 1e-12);
    }
}

TEST_CASE("resume takes the model from the checkpoint, run controls from the caller") {
    ExperimentConfig base = small_config();
    base.steps = 2;
    const RunResult first = run_experiment(base);

    ExperimentConfig cont = base;
    cont.out_dir = fresh_dir();
    cont.steps = 4;
    apply_override(cont, "encoders", "siglip");  // ignored on resume
    RunOptions opts;
    opts.resume_from = first.paths.checkpoint;
    const RunResult resumed = run_experiment(cont, opts);
    CHECK(resumed.steps_completed == 4);
    const auto records = read_jsonl(resumed.paths.metrics);
    REQUIRE_FALSE(records.empty());
    CHECK(records.back()["balance"].size() == 4);  // still the four-group model

    const TrainState state = load_checkpoint(resumed.paths.checkpoint);
    CHECK(state.config.model.encoders.size() == 4);
    CHECK(state.step == 4);
}

TEST_CASE("corrupt checkpoints load cleanly as errors") {
    ExperimentConfig cfg = small_config();
    cfg.steps = 1;
    const RunResult result = run_experiment(cfg);
    const std::string data = slurp(result.paths.checkpoint);

    const std::string trunc_path = (fs::path(cfg.out_dir) / "trunc.bin").string();
    {
        std::ofstream out(trunc_path, std::ios::binary | std::ios::trunc);
        out.write(data.data(), static_cast<std::streamsize>(data.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(trunc_path), io_error);

    const std::string magic_path = (fs::path(cfg.out_dir) / "magic.bin").string();
    {
        std::string bad = data;
        bad[0] = 'X';
        std::ofstream out(magic_path, std::ios::binary | std::ios::trunc);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(magic_path), io_error);

    const std::string version_path = (fs::path(cfg.out_dir) / "version.bin").string();
    {
        std::string bad = data;
        bad[8] = 9;  // version field follows the 8 magic bytes
        std::ofstream out(version_path, std::ios::binary | std::ios::trunc);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(version_path), doctest::Contains("version"), io_error);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), io_error);
}

TEST_CASE("ablation cells cover axes and deduplicate") {
    AblationAxes axes;
    axes.top_k = true;
    axes.top_k_values = {1, 2, 2, 3, 4, 1};
    CHECK(ablation_cells(axes).size() == 4);

    axes.connector = true;
    CHECK(ablation_cells(axes).size() == 8);

    AblationAxes none;
    CHECK(ablation_cells(none).size() == 1);

    AblationAxes enc;
    enc.encoders = true;
    const auto cells = ablation_cells(enc);
    REQUIRE(cells.size() == 4);
    CHECK(cells[0].overrides[0].second == "siglip");
    CHECK(cells[3].overrides[0].second == "siglip,dinov2,convnext,clip");
}

TEST_CASE("ablation matrix runs cells, reports rows, and survives cell failures") {
    ExperimentConfig cfg = small_config();
    cfg.steps = 2;
    apply_override(cfg, "moec.experts", "3");  // top_k = 4 cell must fail

    AblationAxes axes;
    axes.top_k = true;
    axes.top_k_values = {1, 4};
    const auto rows = run_ablation_matrix(cfg, axes);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].ok);
    CHECK_FALSE(rows[1].ok);
    CHECK(rows[1].error.find("top_k") != std::string::npos);

    CHECK(fs::exists(fs::path(cfg.out_dir) / "summary.jsonl"));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "summary.txt"));
    const std::string table = ablation_table(rows);
    CHECK(table.find("ERROR") != std::string::npos);
    CHECK(table.find("task_loss") != std::string::npos);
}

TEST_CASE("encoder-subset ablation reports the cumulative token totals") {
    ExperimentConfig cfg = default_experiment_config();
    cfg.steps = 1;
    cfg.batch_size = 1;
    // shrink tokens for speed; totals come from the real default config below
    const AblationAxes axes = [] {
        AblationAxes a;
        a.encoders = true;
        return a;
    }();
    const auto cells = ablation_cells(axes);
    std::vector<Index> expected = {440, 540, 1116, 1692};
    for (size_t i = 0; i < cells.size(); ++i) {
        ExperimentConfig cell_cfg = cfg;
        for (const auto& [k, v] : cells[i].overrides) apply_override(cell_cfg, k, v);
        CHECK(cell_cfg.model.total_tokens() == expected[i]);
    }
}
