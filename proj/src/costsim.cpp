#include "asyncdiff/costsim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace asyncdiff {

double CostModel::total_segment_cost_s() const {
    return std::accumulate(segment_cost_s.begin(), segment_cost_s.end(), 0.0);
}

double predict_sequential(int T, const CostModel& cm) {
    return static_cast<double>(T) * (cm.total_segment_cost_s() + cm.sampler_cost_s);
}

LatencyReport predict_async(const ExecutionPlan& plan, const CostModel& cm) {
    if (static_cast<int>(cm.segment_cost_s.size()) != plan.N)
        throw std::invalid_argument("predict_async: cost model has " +
                                    std::to_string(cm.segment_cost_s.size()) +
                                    " segment costs, plan expects " +
                                    std::to_string(plan.N));
    LatencyReport rep;
    rep.sequential_total_s = predict_sequential(plan.T, cm);
    rep.warmup_s = static_cast<double>(plan.w) *
                   (cm.total_segment_cost_s() + cm.sampler_cost_s);

    double total = rep.warmup_s;
    for (const Round& r : plan.rounds) {
        double compute = 0.0;
        for (const Eval& e : r.evals)
            compute = std::max(compute, cm.segment_cost_s[static_cast<size_t>(e.segment - 1)]);
        double comm = r.broadcast ? cm.comm_cost_s : 0.0;
        double sampler = cm.sampler_cost_s * static_cast<double>(r.sampler_steps.size());
        rep.round_compute_s.push_back(compute);
        rep.round_comm_s.push_back(comm);
        rep.comm_total_s += comm;
        total += compute + comm + sampler;
    }
    rep.async_total_s = total;
    rep.speedup = total > 0.0 ? rep.sequential_total_s / total : 1.0;
    rep.comm_ratio = total > 0.0 ? rep.comm_total_s / total : 0.0;

    rep.approx_step_s = cm.total_segment_cost_s() / static_cast<double>(plan.N) +
                        cm.comm_cost_s;
    rep.approx_total_s =
        rep.warmup_s + static_cast<double>(plan.rounds.size()) * rep.approx_step_s;
    return rep;
}

CostComparison calibrate_and_compare(const ExecutionPlan& plan,
                                     const std::vector<double>& delays_s,
                                     const RunStats& measured) {
    CostModel cm;
    cm.segment_cost_s = delays_s;
    double measured_comm = measured.comm_total_s();
    int broadcasts = std::max(1, measured.broadcast_count);
    cm.comm_cost_s = measured_comm / static_cast<double>(broadcasts);

    LatencyReport pred = predict_async(plan, cm);

    CostComparison cmp;
    cmp.calibrated_comm_cost_s = cm.comm_cost_s;
    cmp.predicted_total_s = pred.async_total_s;
    cmp.measured_total_s = measured.total_wall_s;
    cmp.rel_error_total =
        measured.total_wall_s > 0.0
            ? std::abs(pred.async_total_s - measured.total_wall_s) / measured.total_wall_s
            : 0.0;
    cmp.predicted_comm_ratio = pred.comm_ratio;
    cmp.measured_comm_ratio = measured.comm_ratio();
    cmp.rel_error_comm_ratio =
        cmp.measured_comm_ratio > 0.0
            ? std::abs(cmp.predicted_comm_ratio - cmp.measured_comm_ratio) /
                  cmp.measured_comm_ratio
            : 0.0;
    return cmp;
}

}  // namespace asyncdiff
