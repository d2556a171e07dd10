#include "asyncdiff/experiment.hpp"
#include "asyncdiff/log.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace asyncdiff;

int main(int argc, char** argv) {
    CLI::App app{"asyncdiff: model-parallel asynchronous denoising engine"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
    int jobs = 1;
    double timeout_secs = 0.0;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config", config_path, "experiment config JSON");
        if (needs_config) c->required();
        sub->add_option("--out", out_dir, "output directory override");
        sub->add_option_function<uint64_t>(
            "--seed", [&](uint64_t v) { seed = v; seed_set = true; },
            "global seed override");
        sub->add_option("--timeout-secs", timeout_secs, "round timeout override");
    };

    auto* train = app.add_subcommand("train", "train the toy denoiser, write checkpoint");
    add_common(train, true);

    auto* plan = app.add_subcommand("plan", "compile and print one execution plan");
    int pT = 50, pw = 1, pN = 2, pS = 1;
    bool pshift = false;
    plan->add_option("T", pT, "denoising steps")->required();
    plan->add_option("w", pw, "warm-up steps")->required();
    plan->add_option("N", pN, "segment count")->required();
    plan->add_option("S", pS, "stride")->required();
    plan->add_flag("--time-shift", pshift, "shift post-warm-up time embeddings");
    plan->add_option("--out", out_dir, "write plan JSON under this directory");

    auto* run = app.add_subcommand("run", "sequential baseline + async runs per matrix entry");
    add_common(run, true);

    auto* sweep = app.add_subcommand("sweep", "aggregate quality metrics across seeds");
    add_common(sweep, true);
    sweep->add_option("--jobs", jobs, "concurrent configs (default 1)");

    auto* bench = app.add_subcommand("bench", "delay-injected cost-model validation");
    add_common(bench, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (plan->parsed()) {
            std::optional<std::filesystem::path> out;
            if (!out_dir.empty()) out = out_dir;
            return cmd_plan(pT, pw, pN, pS, pshift, out);
        }

        ExperimentConfig cfg = load_config(config_path);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (seed_set) cfg.seed = seed;
        if (timeout_secs > 0.0) cfg.round_timeout_s = timeout_secs;

        if (train->parsed()) return cmd_train(cfg);
        if (run->parsed()) return cmd_run(cfg);
        if (sweep->parsed()) return cmd_sweep(cfg, jobs);
        if (bench->parsed()) return cmd_bench(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
