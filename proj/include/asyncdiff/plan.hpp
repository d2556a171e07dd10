#pragma once

#include "asyncdiff/partition.hpp"

#include <optional>
#include <string>
#include <vector>

namespace asyncdiff {

// round index standing for the final warm-up step
constexpr int kWarmupRound = -1;

struct InputRef {
    enum class Kind { CurrentLatent, Cached };
    Kind kind = Kind::CurrentLatent;
    int producer_segment = 0;          // Cached only, 1-based
    int producer_round = kWarmupRound; // Cached only

    static InputRef current_latent() { return InputRef{}; }
    static InputRef cached(int segment, int round) {
        return InputRef{Kind::Cached, segment, round};
    }
};

struct Eval {
    int segment = 0;  // 1-based
    int device = 0;   // 0-based
    int embed_t = 0;  // timestep used as time embedding
    InputRef input;
    std::optional<int> emits_eps_for;  // set only on final-segment evals
};

struct Round {
    int index = 0;
    std::vector<Eval> evals;
    std::vector<int> sampler_steps;  // strictly decreasing
    bool broadcast = true;
};

struct ExecutionPlan {
    int T = 0;
    int w = 0;  // warm-up steps
    int N = 0;  // segment count
    int S = 1;  // stride
    int D = 0;  // device count = N + S - 1
    bool time_shift = false;
    std::vector<int> warmup_steps;  // T .. T-w+1
    std::vector<Round> rounds;
};

// Compiles (T, w, N, S, time_shift) into an explicit execution plan.
ExecutionPlan plan_async(int T, int w, int N, int S, bool time_shift = false);

// Returns all invariant violations; empty means valid.
std::vector<std::string> validate_plan(const ExecutionPlan& plan);

struct PlanCounts {
    int broadcasts_paper_convention = 0;   // one per async round (Table 5 convention)
    int broadcasts_strictly_needed = 0;    // rounds that publish state someone reads
    int device_count = 0;
    std::vector<long long> evals_per_segment;  // async evals, index 0 = segment 1
    std::vector<long long> per_device_macs;    // warm-up share + async evals
    long long max_device_macs = 0;
    long long sequential_total_macs = 0;       // T x full-model cost
};

PlanCounts plan_counts(const ExecutionPlan& plan, const Partition& partition);

// Replaces entries after position w by their predecessor's value.
std::vector<int> shift_embeddings(const std::vector<int>& timesteps, int w);

// Text grid, one row per device, one column per round.
std::string render_plan(const ExecutionPlan& plan);

}  // namespace asyncdiff
