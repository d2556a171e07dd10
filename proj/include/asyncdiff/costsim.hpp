#pragma once

#include "asyncdiff/executor.hpp"
#include "asyncdiff/plan.hpp"

#include <vector>

namespace asyncdiff {

struct CostModel {
    std::vector<double> segment_cost_s;  // per-segment compute time
    double comm_cost_s = 0.0;            // flat per-broadcast time
    double sampler_cost_s = 0.0;

    double total_segment_cost_s() const;
};

struct LatencyReport {
    double sequential_total_s = 0.0;
    double async_total_s = 0.0;
    double warmup_s = 0.0;
    std::vector<double> round_compute_s;  // max over devices, per round
    std::vector<double> round_comm_s;
    double comm_total_s = 0.0;
    double speedup = 1.0;     // sequential / async
    double comm_ratio = 0.0;  // comm_total / async_total
    // per-step approximation C_seq/N + comm and its whole-run total
    double approx_step_s = 0.0;
    double approx_total_s = 0.0;
};

// Sequential baseline: every step pays the full cascade.
double predict_sequential(int T, const CostModel& cm);

// Per-round cost is the per-device maximum plus the broadcast cost.
LatencyReport predict_async(const ExecutionPlan& plan, const CostModel& cm);

struct CostComparison {
    double predicted_total_s = 0.0;
    double measured_total_s = 0.0;
    double rel_error_total = 0.0;
    double predicted_comm_ratio = 0.0;
    double measured_comm_ratio = 0.0;
    double rel_error_comm_ratio = 0.0;
    double calibrated_comm_cost_s = 0.0;
};

// Prediction from the injected per-segment delays, with the per-broadcast
// cost calibrated from the measured run, against the measured totals.
CostComparison calibrate_and_compare(const ExecutionPlan& plan,
                                     const std::vector<double>& delays_s,
                                     const RunStats& measured);

}  // namespace asyncdiff
