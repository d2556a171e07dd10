#pragma once

#include "asyncdiff/denoiser.hpp"
#include "asyncdiff/diffusion.hpp"
#include "asyncdiff/partition.hpp"
#include "asyncdiff/plan.hpp"

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

namespace asyncdiff {

// Broadcast state: one immutable bundle per (segment, round). Retains the
// warm-up tail plus the last two rounds; entries are never overwritten.
class BundleStore {
public:
    void put(int segment, int round, HiddenBundle bundle);
    const HiddenBundle* find(int segment, int round) const;
    const HiddenBundle* newest(int segment) const;
    // drop rounds older than current_round - 1, keeping the warm-up tail
    void prune(int current_round);
    size_t size() const { return entries_.size(); }

private:
    std::map<std::pair<int, int>, HiddenBundle> entries_;  // (segment, round)
};

struct RunStats {
    std::vector<double> round_wall_s;
    std::vector<double> round_comm_s;      // sync/publish residual per round
    std::vector<double> device_busy_s;     // eval time per device, warm-up included
    std::vector<long long> device_evals;   // evals executed per device
    std::vector<size_t> store_entries_per_round;
    int broadcast_count = 0;               // one per async round (paper convention)
    double warmup_wall_s = 0.0;
    double total_wall_s = 0.0;

    double comm_total_s() const;
    double comm_ratio() const;  // comm_total / total_wall
};

struct RunOptions {
    double round_timeout_s = 30.0;
    // randomized worker start jitter for determinism stress tests
    uint64_t jitter_seed = 0;
    double max_jitter_s = 0.0;
};

// Model with per-segment sleep injected into every segment evaluation;
// numerics are unchanged. Zero delays = plain model.
struct InstrumentedDenoiser {
    LayeredDenoiser model;
    std::vector<double> segment_delay_s;  // index 0 = segment 1; may be empty
};

InstrumentedDenoiser inject_delay(const LayeredDenoiser& m,
                                  const std::vector<double>& per_segment_delay_s);

// Serial reference interpreter: warm-up, then per round all evals against the
// round-start snapshot, sampler steps, commit, prune.
std::pair<Trajectory, RunStats> run_serial(const ExecutionPlan& plan,
                                           const InstrumentedDenoiser& m,
                                           const Partition& partition,
                                           const Latent& x_T,
                                           const NoiseSchedule& schedule,
                                           const RunOptions& opts = {});

std::pair<Trajectory, RunStats> run_serial(const ExecutionPlan& plan,
                                           const LayeredDenoiser& m,
                                           const Partition& partition,
                                           const Latent& x_T,
                                           const NoiseSchedule& schedule,
                                           const RunOptions& opts = {});

// One worker per simulated device; barrier-synchronized all-to-all broadcast
// between rounds. Output is bit-identical to run_serial.
std::pair<Trajectory, RunStats> run_parallel(const ExecutionPlan& plan,
                                             const InstrumentedDenoiser& m,
                                             const Partition& partition,
                                             const Latent& x_T,
                                             const NoiseSchedule& schedule,
                                             int workers,
                                             const RunOptions& opts = {});

std::pair<Trajectory, RunStats> run_parallel(const ExecutionPlan& plan,
                                             const LayeredDenoiser& m,
                                             const Partition& partition,
                                             const Latent& x_T,
                                             const NoiseSchedule& schedule,
                                             int workers,
                                             const RunOptions& opts = {});

}  // namespace asyncdiff
