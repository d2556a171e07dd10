#include "asyncdiff/experiment.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace asyncdiff;
using namespace asyncdiff::testutil;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), {});
}

// small config so CLI-level tests stay fast
ExperimentConfig tiny_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.seed = 9;
    cfg.out_dir = out_dir;
    cfg.T = 16;
    cfg.beta_start = 0.01;
    cfg.beta_end = 0.18;
    cfg.schedule_kind = ScheduleKind::Linear;
    Vec m1(2), m2(2);
    m1 << 1.5, 1.5;
    m2 << -1.5, -1.5;
    cfg.mixture = isotropic_mixture({0.5, 0.5}, {m1, m2}, 0.25);
    cfg.L = 4;
    cfg.widths = {2, 8, 8, 8, 2};
    cfg.skips = SkipSpec::UnetMirror;
    cfg.model_seed = 7;
    cfg.time_embed_dim = 8;
    cfg.train_steps = 60;
    cfg.train_batch = 8;
    cfg.train_lr = 0.005;
    cfg.train_seed = 11;
    cfg.validate();
    return cfg;
}

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "asyncdiff_cli" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("config JSON round trip") {
    ExperimentConfig cfg = tiny_config("x");
    cfg.matrix = {{2, 1, 3, false}, {3, 2, 5, true}};
    cfg.delays_ms = {10, 10, 10};
    cfg.sweep_seeds = {1, 2, 3};
    Json j = config_to_json(cfg);
    ExperimentConfig back = config_from_json(j);
    CHECK(config_to_json(back) == j);
    CHECK(back.matrix.size() == 2);
    CHECK(back.matrix[1].time_shift);
}

TEST_CASE("config validation rejects infeasible matrix entries") {
    ExperimentConfig cfg = tiny_config("x");
    cfg.matrix = {{1, 2, 1, false}};  // S=2 needs N>=2
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.matrix = {{2, 1, 17, false}};  // w > T
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("cmd_train: byte-identical checkpoints for identical config") {
    fs::path d1 = fresh_dir("train1");
    fs::path d2 = fresh_dir("train2");
    ExperimentConfig a = tiny_config(d1.string());
    ExperimentConfig b = tiny_config(d2.string());
    REQUIRE(cmd_train(a) == 0);
    REQUIRE(cmd_train(b) == 0);
    CHECK(slurp(d1 / "model.json") == slurp(d2 / "model.json"));
    CHECK(slurp(d1 / "model.bin") == slurp(d2 / "model.bin"));
    CHECK(slurp(d1 / "train_loss.csv") == slurp(d2 / "train_loss.csv"));
}

TEST_CASE("cmd_train: steps=0 checkpoint equals initialization") {
    fs::path d = fresh_dir("train0");
    ExperimentConfig cfg = tiny_config(d.string());
    cfg.train_steps = 0;
    REQUIRE(cmd_train(cfg) == 0);
    LayeredDenoiser loaded = load_checkpoint(d / "model");
    LayeredDenoiser init =
        build_toy_denoiser(cfg.L, cfg.widths, cfg.skips, cfg.model_seed, cfg.time_embed_dim);
    CHECK(loaded.time_embed.proj == init.time_embed.proj);
    for (size_t i = 0; i < init.stages.size(); ++i)
        CHECK(loaded.stages[i].w1 == init.stages[i].w1);
}

TEST_CASE("cmd_run: N=1 S=1 matrix row has zero divergence") {
    fs::path d = fresh_dir("run1");
    ExperimentConfig cfg = tiny_config(d.string());
    cfg.matrix = {{1, 1, 1, false}};
    REQUIRE(cmd_train(cfg) == 0);
    std::vector<ResultRow> rows;
    REQUIRE(cmd_run(cfg, &rows) == 0);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].final_mse == 0.0);
    CHECK(rows[0].device_count == 1);
    CHECK(rows[0].broadcast_count == 15);  // T - w
    CHECK(fs::exists(d / "results.csv"));
}

TEST_CASE("cmd_run: broadcast counts match the analytic formulas") {
    fs::path d = fresh_dir("run2");
    ExperimentConfig cfg = tiny_config(d.string());
    cfg.matrix = {{2, 1, 3, false}, {2, 2, 3, false}, {3, 2, 2, true}};
    REQUIRE(cmd_train(cfg) == 0);
    std::vector<ResultRow> rows;
    REQUIRE(cmd_run(cfg, &rows) == 0);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].broadcast_count == 16 - 3);
    CHECK(rows[1].broadcast_count == (16 - 3 + 1) / 2);
    CHECK(rows[2].broadcast_count == (16 - 2 + 1) / 2);
    for (const auto& r : rows) CHECK(r.final_mse >= 0.0);
}

TEST_CASE("cmd_sweep: one seed equals the cmd_run row; reruns are byte-identical") {
    fs::path d = fresh_dir("sweep1");
    ExperimentConfig cfg = tiny_config(d.string());
    cfg.matrix = {{2, 1, 3, false}};
    cfg.sweep_seeds = {9};  // same seed cmd_run uses
    REQUIRE(cmd_train(cfg) == 0);

    std::vector<ResultRow> rows;
    REQUIRE(cmd_run(cfg, &rows) == 0);
    REQUIRE(cmd_sweep(cfg) == 0);
    std::string sweep1 = slurp(d / "sweep.csv");

    // mean over the single seed equals the run row's final_mse
    CHECK(sweep1.find(csv_double(rows[0].final_mse)) != std::string::npos);
    CHECK(sweep1.find("final_mse_mean") != std::string::npos);

    REQUIRE(cmd_sweep(cfg) == 0);
    std::string sweep2 = slurp(d / "sweep.csv");
    CHECK(sweep1 == sweep2);

    // multiple seeds populate the std columns
    cfg.sweep_seeds = {9, 10, 11};
    REQUIRE(cmd_sweep(cfg) == 0);
    std::string sweep3 = slurp(d / "sweep.csv");
    CHECK(sweep3 != sweep1);
}

TEST_CASE("cmd_sweep: empty seed list fails") {
    fs::path d = fresh_dir("sweep2");
    ExperimentConfig cfg = tiny_config(d.string());
    cfg.matrix = {{2, 1, 3, false}};
    REQUIRE(cmd_train(cfg) == 0);
    CHECK(cmd_sweep(cfg) != 0);
}

TEST_CASE("run_one: determinism across calls") {
    fs::path d = fresh_dir("runone");
    ExperimentConfig cfg = tiny_config(d.string());
    cfg.matrix = {{3, 2, 2, false}};
    LayeredDenoiser model = train_or_load_model(cfg, true);
    ResultRow a = run_one(cfg, model, cfg.matrix[0], 42, false);
    ResultRow b = run_one(cfg, model, cfg.matrix[0], 42, false);
    CHECK(a.final_mse == b.final_mse);
    CHECK(a.avg_nll == b.avg_nll);
    ResultRow c = run_one(cfg, model, cfg.matrix[0], 43, false);
    CHECK(a.final_mse != c.final_mse);
}
