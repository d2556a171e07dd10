#include "asyncdiff/plan.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace asyncdiff {

namespace {

int clamp_embed(int t, int T) { return std::min(t, T); }

}  // namespace

ExecutionPlan plan_async(int T, int w, int N, int S, bool time_shift) {
    if (T < 1) throw std::invalid_argument("plan_async: T must be >= 1");
    if (w < 1 || w > T)
        throw std::invalid_argument("plan_async: w=" + std::to_string(w) +
                                    " outside [1, T=" + std::to_string(T) + "]");
    if (N < 1) throw std::invalid_argument("plan_async: N must be >= 1");
    if (S != 1 && S != 2)
        throw std::invalid_argument("plan_async: S must be 1 or 2, got " +
                                    std::to_string(S));
    if (S == 2 && N < 2)
        throw std::invalid_argument("plan_async: S=2 requires N >= 2");

    ExecutionPlan plan;
    plan.T = T;
    plan.w = w;
    plan.N = N;
    plan.S = S;
    plan.D = N + S - 1;
    plan.time_shift = time_shift;
    for (int t = T; t > T - w; --t) plan.warmup_steps.push_back(t);

    auto embed = [&](int t) { return time_shift ? clamp_embed(t + 1, T) : t; };

    int t = T - w;  // first post-warm-up timestep
    int r = 0;
    while (t >= 1) {
        Round round;
        round.index = r;
        int prev = (r == 0) ? kWarmupRound : r - 1;
        if (S == 2 && t >= 2) {
            // stride round: finish timesteps t and t-1 in one parallel batch;
            // segments 1..N-1 are evaluated once (at the broadcasting step t-1),
            // segment N twice, sharing the previous round's bundle
            for (int n = 1; n < N; ++n) {
                Eval e;
                e.segment = n;
                e.device = n - 1;
                e.embed_t = embed(t - 1);
                e.input = (n == 1) ? InputRef::current_latent()
                                   : InputRef::cached(n - 1, prev);
                round.evals.push_back(e);
            }
            Eval lead;
            lead.segment = N;
            lead.device = N - 1;
            lead.embed_t = embed(t);
            lead.input = InputRef::cached(N - 1, prev);
            lead.emits_eps_for = t;
            round.evals.push_back(lead);

            Eval extra;
            extra.segment = N;
            extra.device = N;  // the (N+S-1)-th device
            extra.embed_t = embed(t - 1);
            extra.input = InputRef::cached(N - 1, prev);
            extra.emits_eps_for = t - 1;
            round.evals.push_back(extra);

            round.sampler_steps = {t, t - 1};
            t -= 2;
        } else {
            // plain async round (also the odd-remainder tail under S=2)
            for (int n = 1; n <= N; ++n) {
                Eval e;
                e.segment = n;
                e.device = n - 1;
                e.embed_t = embed(t);
                e.input = (n == 1) ? InputRef::current_latent()
                                   : InputRef::cached(n - 1, prev);
                if (n == N) e.emits_eps_for = t;
                round.evals.push_back(e);
            }
            round.sampler_steps = {t};
            t -= 1;
        }
        plan.rounds.push_back(std::move(round));
        ++r;
    }
    if (!plan.rounds.empty()) plan.rounds.back().broadcast = false;
    return plan;
}

std::vector<std::string> validate_plan(const ExecutionPlan& plan) {
    std::vector<std::string> v;
    auto fail = [&](const std::string& msg) { v.push_back(msg); };

    if (plan.D != plan.N + plan.S - 1)
        fail("device count " + std::to_string(plan.D) + " != N+S-1");
    if (static_cast<int>(plan.warmup_steps.size()) != plan.w)
        fail("warm-up step list length != w");
    for (size_t i = 0; i < plan.warmup_steps.size(); ++i)
        if (plan.warmup_steps[i] != plan.T - static_cast<int>(i))
            fail("warm-up step " + std::to_string(i) + " is not T-" + std::to_string(i));

    // timestep coverage: warm-up steps then emits_eps_for must hit T..1 once each
    std::vector<int> covered = plan.warmup_steps;
    std::map<int, int> eps_count;

    for (size_t ri = 0; ri < plan.rounds.size(); ++ri) {
        const Round& round = plan.rounds[ri];
        int r = static_cast<int>(ri);
        if (round.index != r)
            fail("round " + std::to_string(r) + " carries index " +
                 std::to_string(round.index));

        std::set<int> devices;
        for (const Eval& e : round.evals) {
            std::string where = "round " + std::to_string(r) + " segment " +
                                std::to_string(e.segment);
            if (e.segment < 1 || e.segment > plan.N)
                fail(where + ": segment out of range");
            if (e.device < 0 || e.device >= plan.D)
                fail(where + ": device " + std::to_string(e.device) + " out of range");
            if (!devices.insert(e.device).second)
                fail("round " + std::to_string(r) + ": device " +
                     std::to_string(e.device) + " evaluated twice");
            if (e.emits_eps_for.has_value() != (e.segment == plan.N))
                fail(where + ": emits_eps_for must be set iff segment == N");
            if (e.emits_eps_for) eps_count[*e.emits_eps_for] += 1;

            if (e.segment == 1) {
                if (e.input.kind != InputRef::Kind::CurrentLatent)
                    fail(where + ": segment 1 must read the current latent");
            } else {
                if (e.input.kind != InputRef::Kind::Cached)
                    fail(where + ": segment > 1 must read a cached bundle");
            }
            if (e.input.kind == InputRef::Kind::Cached) {
                if (e.input.producer_segment != e.segment - 1)
                    fail(where + ": cached ref names segment " +
                         std::to_string(e.input.producer_segment) +
                         ", expected " + std::to_string(e.segment - 1));
                int expect_round = (r == 0) ? kWarmupRound : r - 1;
                if (e.input.producer_round != expect_round)
                    fail(where + ": cached ref round " +
                         std::to_string(e.input.producer_round) +
                         " is not one round old");
                if (e.input.producer_round != kWarmupRound) {
                    const Round& src = plan.rounds[static_cast<size_t>(e.input.producer_round)];
                    if (!src.broadcast)
                        fail(where + ": cached ref points to non-broadcast round " +
                             std::to_string(e.input.producer_round));
                    bool found = false;
                    for (const Eval& se : src.evals)
                        if (se.segment == e.input.producer_segment) found = true;
                    if (!found)
                        fail(where + ": dangling cached ref, no eval of segment " +
                             std::to_string(e.input.producer_segment) + " in round " +
                             std::to_string(e.input.producer_round));
                }
            }
        }

        for (size_t i = 0; i + 1 < round.sampler_steps.size(); ++i)
            if (round.sampler_steps[i] <= round.sampler_steps[i + 1])
                fail("round " + std::to_string(r) + ": sampler steps not strictly decreasing");

        std::set<int> emitted;
        for (const Eval& e : round.evals)
            if (e.emits_eps_for) emitted.insert(*e.emits_eps_for);
        std::set<int> sampled(round.sampler_steps.begin(), round.sampler_steps.end());
        if (emitted != sampled)
            fail("round " + std::to_string(r) +
                 ": eps-emitting evals do not match the round's sampler steps");
        for (int st : round.sampler_steps) covered.push_back(st);
    }

    for (const auto& [ts, cnt] : eps_count)
        if (cnt > 1)
            fail("timestep " + std::to_string(ts) + " covered twice by eps evals");

    std::vector<int> expected;
    for (int ts = plan.T; ts >= 1; --ts) expected.push_back(ts);
    if (covered != expected) {
        std::set<int> have(covered.begin(), covered.end());
        for (int ts : expected)
            if (!have.count(ts))
                fail("timestep " + std::to_string(ts) + " never sampled");
        if (covered.size() != expected.size() ||
            (have.size() == expected.size() && covered != expected))
            fail("sampler steps across warm-up + rounds are not T..1 in order");
    }
    return v;
}

PlanCounts plan_counts(const ExecutionPlan& plan, const Partition& partition) {
    if (partition.num_segments() != plan.N)
        throw std::invalid_argument("plan_counts: partition has " +
                                    std::to_string(partition.num_segments()) +
                                    " segments, plan expects " + std::to_string(plan.N));
    PlanCounts c;
    c.device_count = plan.D;
    c.broadcasts_paper_convention = static_cast<int>(plan.rounds.size());
    for (const Round& r : plan.rounds)
        if (r.broadcast) c.broadcasts_strictly_needed += 1;

    c.evals_per_segment.assign(static_cast<size_t>(plan.N), 0);
    c.per_device_macs.assign(static_cast<size_t>(plan.D), 0);

    // warm-up: device n runs segment n once per warm-up step
    for (int n = 0; n < plan.N; ++n) {
        int dev = partition.device_of_segment[static_cast<size_t>(n)];
        c.per_device_macs[static_cast<size_t>(dev)] +=
            static_cast<long long>(plan.w) * partition.segment_macs[static_cast<size_t>(n)];
    }
    for (const Round& r : plan.rounds) {
        for (const Eval& e : r.evals) {
            c.evals_per_segment[static_cast<size_t>(e.segment - 1)] += 1;
            c.per_device_macs[static_cast<size_t>(e.device)] +=
                partition.segment_macs[static_cast<size_t>(e.segment - 1)];
        }
    }
    for (long long v : c.per_device_macs) c.max_device_macs = std::max(c.max_device_macs, v);
    c.sequential_total_macs = static_cast<long long>(plan.T) * partition.total_macs();
    return c;
}

std::vector<int> shift_embeddings(const std::vector<int>& timesteps, int w) {
    for (size_t i = 0; i + 1 < timesteps.size(); ++i)
        if (timesteps[i] <= timesteps[i + 1])
            throw std::invalid_argument("shift_embeddings: list not strictly decreasing");
    if (w < 0) throw std::invalid_argument("shift_embeddings: w must be >= 0");
    std::vector<int> out = timesteps;
    for (size_t i = timesteps.size(); i-- > static_cast<size_t>(std::max(w, 1));)
        out[i] = timesteps[i - 1];
    // position w is 1-based; entries 1..w keep their values
    return out;
}

std::string render_plan(const ExecutionPlan& plan) {
    std::ostringstream os;
    os << "plan T=" << plan.T << " w=" << plan.w << " N=" << plan.N
       << " S=" << plan.S << " D=" << plan.D
       << (plan.time_shift ? " time-shift" : "") << "\n";
    os << "warm-up steps:";
    for (int t : plan.warmup_steps) os << " " << t;
    os << "\n";
    if (plan.rounds.empty()) {
        os << "(warm-up only)\n";
        return os.str();
    }

    for (int d = 0; d < plan.D; ++d) {
        os << "dev" << d << " |";
        for (const Round& r : plan.rounds) {
            std::string cell = "      .";
            for (const Eval& e : r.evals) {
                if (e.device != d) continue;
                std::string tag = "s" + std::to_string(e.segment) + "@" +
                                  std::to_string(e.embed_t) +
                                  (e.emits_eps_for ? "*" : " ");
                cell = std::string(7 > tag.size() ? 7 - tag.size() : 0, ' ') + tag;
            }
            os << cell;
        }
        os << "\n";
    }
    os << "samp |";
    for (const Round& r : plan.rounds) {
        std::string cell;
        for (size_t i = 0; i < r.sampler_steps.size(); ++i)
            cell += (i ? "," : "") + std::to_string(r.sampler_steps[i]);
        os << std::string(7 > cell.size() ? 7 - cell.size() : 0, ' ') << cell;
    }
    os << "\n";
    os << "bcast|";
    for (const Round& r : plan.rounds) os << (r.broadcast ? "      y" : "      n");
    os << "\n";
    return os.str();
}

}  // namespace asyncdiff
