#pragma once

#include "asyncdiff/costsim.hpp"
#include "asyncdiff/denoiser.hpp"
#include "asyncdiff/diffusion.hpp"
#include "asyncdiff/executor.hpp"
#include "asyncdiff/metrics.hpp"
#include "asyncdiff/mixture.hpp"
#include "asyncdiff/partition.hpp"
#include "asyncdiff/plan.hpp"
#include "asyncdiff/serialize.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace asyncdiff {

struct RunSpec {
    int N = 1;
    int S = 1;
    int w = 1;
    bool time_shift = false;

    std::string label() const;
};

struct ExperimentConfig {
    uint64_t seed = 0;
    std::string out_dir = "out";

    // schedule
    int T = 50;
    double beta_start = 0.01;
    double beta_end = 0.19;
    ScheduleKind schedule_kind = ScheduleKind::Linear;

    GaussianMixture mixture;

    // model
    int L = 6;
    std::vector<int> widths;
    SkipSpec skips = SkipSpec::UnetMirror;
    uint64_t model_seed = 7;
    int time_embed_dim = 8;

    // training
    int train_steps = 4000;
    int train_batch = 64;
    double train_lr = 0.003;
    uint64_t train_seed = 11;

    std::vector<RunSpec> matrix;
    std::vector<double> delays_ms;       // cost-validation delays, per segment
    std::vector<uint64_t> sweep_seeds;
    double round_timeout_s = 30.0;

    NoiseSchedule schedule() const;
    void validate() const;
};

ExperimentConfig config_from_json(const Json& j);
Json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

// one cmd_run / cmd_sweep result row
struct ResultRow {
    std::string config_label;
    uint64_t run_seed = 0;
    long long per_device_macs = 0;  // max over devices
    int device_count = 0;
    int broadcast_count = 0;
    double measured_latency_s = 0.0;
    double speedup = 0.0;
    double comm_ratio = 0.0;
    double final_mse = 0.0;
    double avg_nll = 0.0;
};

// train the toy model, save checkpoint + loss CSV under out_dir
int cmd_train(const ExperimentConfig& cfg);

// compile and print one plan; optionally write plan JSON to out_dir
int cmd_plan(int T, int w, int N, int S, bool time_shift,
             const std::optional<std::filesystem::path>& out_dir);

// sequential baseline + async runs for every matrix entry; returns rows and
// enforces the determinism invariants (nonzero exit on violation)
int cmd_run(const ExperimentConfig& cfg, std::vector<ResultRow>* rows_out = nullptr);

// per-config mean/std aggregation over sweep seeds (deterministic bytes)
int cmd_sweep(const ExperimentConfig& cfg, int jobs = 1);

// delay-injected measurement vs cost-model prediction
int cmd_bench(const ExperimentConfig& cfg);

// internals shared with tests
LayeredDenoiser train_or_load_model(const ExperimentConfig& cfg, bool retrain);
ResultRow run_one(const ExperimentConfig& cfg, const LayeredDenoiser& model,
                  const RunSpec& spec, uint64_t run_seed, bool measure_parallel);

}  // namespace asyncdiff
