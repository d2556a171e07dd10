#include "asyncdiff/executor.hpp"

#include "asyncdiff/rng.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace asyncdiff {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

// ---------------------------------------------------------------------------
// BundleStore

void BundleStore::put(int segment, int round, HiddenBundle bundle) {
    auto key = std::make_pair(segment, round);
    if (entries_.count(key))
        throw std::logic_error("BundleStore: entry (" + std::to_string(segment) +
                               ", " + std::to_string(round) + ") already written");
    entries_.emplace(key, std::move(bundle));
}

const HiddenBundle* BundleStore::find(int segment, int round) const {
    auto it = entries_.find({segment, round});
    return it == entries_.end() ? nullptr : &it->second;
}

const HiddenBundle* BundleStore::newest(int segment) const {
    const HiddenBundle* best = nullptr;
    int best_round = kWarmupRound - 1;
    for (const auto& [key, bundle] : entries_) {
        if (key.first == segment && key.second > best_round) {
            best = &bundle;
            best_round = key.second;
        }
    }
    return best;
}

void BundleStore::prune(int current_round) {
    // keep the warm-up tail and the last two committed rounds
    for (auto it = entries_.begin(); it != entries_.end();) {
        int round = it->first.second;
        if (round != kWarmupRound && round < current_round - 2)
            it = entries_.erase(it);
        else
            ++it;
    }
}

double RunStats::comm_total_s() const {
    double s = 0.0;
    for (double c : round_comm_s) s += c;
    return s;
}

double RunStats::comm_ratio() const {
    return total_wall_s > 0.0 ? comm_total_s() / total_wall_s : 0.0;
}

InstrumentedDenoiser inject_delay(const LayeredDenoiser& m,
                                  const std::vector<double>& per_segment_delay_s) {
    for (double d : per_segment_delay_s)
        if (d < 0.0)
            throw std::invalid_argument("inject_delay: delays must be >= 0");
    return InstrumentedDenoiser{m, per_segment_delay_s};
}

// ---------------------------------------------------------------------------
// shared execution pieces

namespace {

struct EvalOutcome {
    std::optional<HiddenBundle> bundle;          // segments 1..N-1
    std::optional<std::pair<int, Vec>> eps;      // (timestep, eps) for segment N
    double eval_s = 0.0;
};

// immutable per-round context shared by all evaluators; heap-owned in the
// parallel runtime so workers can outlive a coordinator timeout safely
struct RoundCtx {
    const InstrumentedDenoiser* m = nullptr;
    const Partition* partition = nullptr;
    const BundleStore* store = nullptr;  // round-start snapshot
    SkipMap skips;                       // newest crossing features, all segments
    Latent latent;                       // round-start latent
    int round = 0;
};

void apply_delay(const InstrumentedDenoiser& m, int segment) {
    const auto& d = m.segment_delay_s;
    if (static_cast<size_t>(segment - 1) < d.size() && d[static_cast<size_t>(segment - 1)] > 0.0)
        std::this_thread::sleep_for(std::chrono::duration<double>(d[static_cast<size_t>(segment - 1)]));
}

// union of the newest crossing skip features from every segment's bundle
SkipMap collect_skips(const BundleStore& store, int num_segments) {
    SkipMap out;
    for (int seg = 1; seg < num_segments; ++seg) {
        const HiddenBundle* b = store.newest(seg);
        if (!b) continue;
        for (const auto& [link, feature] : b->skips) out[link] = feature;
    }
    return out;
}

EvalOutcome execute_eval(const Eval& ev, const RoundCtx& ctx) {
    auto start = Clock::now();
    apply_delay(*ctx.m, ev.segment);

    SegmentOutput out = [&]() -> SegmentOutput {
        if (ev.input.kind == InputRef::Kind::CurrentLatent) {
            return eval_segment(ctx.m->model, *ctx.partition, ev.segment, ctx.latent,
                                ctx.skips, ev.embed_t);
        }
        // snapshot isolation: a cached ref must predate this round
        if (ev.input.producer_round >= ctx.round)
            throw std::logic_error("executor: round " + std::to_string(ctx.round) +
                                   " reads a bundle from round " +
                                   std::to_string(ev.input.producer_round));
        const HiddenBundle* b = ctx.store->find(ev.input.producer_segment,
                                                ev.input.producer_round);
        if (!b)
            throw std::logic_error("executor: unresolvable cached ref (segment " +
                                   std::to_string(ev.input.producer_segment) +
                                   ", round " + std::to_string(ev.input.producer_round) +
                                   ") in round " + std::to_string(ctx.round));
        return eval_segment(ctx.m->model, *ctx.partition, ev.segment, *b, ctx.skips,
                            ev.embed_t);
    }();

    EvalOutcome res;
    res.eval_s = seconds_since(start);
    if (std::holds_alternative<Vec>(out)) {
        if (!ev.emits_eps_for)
            throw std::logic_error("executor: final segment produced eps without a target");
        res.eps = {*ev.emits_eps_for, std::get<Vec>(std::move(out))};
    } else {
        res.bundle = std::get<HiddenBundle>(std::move(out));
    }
    return res;
}

struct WarmupResult {
    Vec eps;
    std::vector<HiddenBundle> bundles;      // segments 1..N-1
    std::vector<double> segment_eval_s;     // per segment
};

// one fully sequential cascade at timestep t; evaluator(seg, fn) runs fn for
// the segment's owner (identity in serial mode, device hand-off in parallel).
// Work items copy their inputs so a timed-out coordinator can unwind while a
// straggling worker is still executing one.
template <typename Evaluator>
WarmupResult warmup_cascade(const InstrumentedDenoiser& m, const Partition& partition,
                            const Latent& x, int t, Evaluator&& evaluate) {
    int N = partition.num_segments();
    WarmupResult res;
    res.segment_eval_s.assign(static_cast<size_t>(N), 0.0);

    SkipMap skips;
    HiddenBundle carry;
    for (int seg = 1; seg <= N; ++seg) {
        std::function<SegmentOutput()> work;
        if (seg == 1) {
            work = [&m, &partition, seg, x, skips, t]() -> SegmentOutput {
                apply_delay(m, seg);
                return eval_segment(m.model, partition, seg, x, skips, t);
            };
        } else {
            work = [&m, &partition, seg, carry, skips, t]() -> SegmentOutput {
                apply_delay(m, seg);
                return eval_segment(m.model, partition, seg, carry, skips, t);
            };
        }
        auto start = Clock::now();
        SegmentOutput out = evaluate(seg, std::move(work));
        res.segment_eval_s[static_cast<size_t>(seg - 1)] = seconds_since(start);
        if (std::holds_alternative<Vec>(out)) {
            res.eps = std::get<Vec>(std::move(out));
        } else {
            carry = std::get<HiddenBundle>(std::move(out));
            for (const auto& [link, feature] : carry.skips) skips[link] = feature;
            res.bundles.push_back(carry);
        }
    }
    return res;
}

void check_preconditions(const ExecutionPlan& plan, const InstrumentedDenoiser& m,
                         const Partition& partition, const Latent& x_T,
                         const NoiseSchedule& schedule) {
    auto violations = validate_plan(plan);
    if (!violations.empty())
        throw std::invalid_argument("run: invalid plan: " + violations.front());
    if (partition.num_segments() != plan.N)
        throw std::invalid_argument("run: partition segment count != plan.N");
    partition.validate(m.model);
    if (!partition.contiguous())
        throw std::invalid_argument("run: partition must be a contiguous cascade");
    if (plan.T != schedule.T)
        throw std::invalid_argument("run: plan T != schedule T");
    if (x_T.timestep != plan.T)
        throw std::invalid_argument("run: x_T.timestep != T");
    if (!m.segment_delay_s.empty() &&
        static_cast<int>(m.segment_delay_s.size()) != plan.N)
        throw std::invalid_argument("run: delay list length != segment count");
}

// sampler steps for one round; eps values keyed by timestep
void apply_sampler_steps(const Round& round,
                         const std::map<int, Vec>& eps_by_timestep, Latent& x,
                         const NoiseSchedule& schedule, Trajectory& traj) {
    for (int t : round.sampler_steps) {
        auto it = eps_by_timestep.find(t);
        if (it == eps_by_timestep.end())
            throw std::logic_error("executor: no eps available for sampler step t=" +
                                   std::to_string(t));
        if (x.timestep != t)
            throw std::logic_error("executor: sampler expected latent at t=" +
                                   std::to_string(t) + ", have t=" +
                                   std::to_string(x.timestep));
        x = ddim_step(x, it->second, t, schedule);
        traj.eps_used.push_back(it->second);
        traj.latents.push_back(x);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// serial interpreter

std::pair<Trajectory, RunStats> run_serial(const ExecutionPlan& plan,
                                           const InstrumentedDenoiser& m,
                                           const Partition& partition,
                                           const Latent& x_T,
                                           const NoiseSchedule& schedule,
                                           const RunOptions&) {
    check_preconditions(plan, m, partition, x_T, schedule);
    auto run_start = Clock::now();

    RunStats stats;
    stats.device_busy_s.assign(static_cast<size_t>(plan.D), 0.0);
    stats.device_evals.assign(static_cast<size_t>(plan.D), 0);

    Trajectory traj;
    traj.latents.push_back(x_T);
    Latent x = x_T;
    BundleStore store;

    // warm-up: sequential cascade, device n runs segment n
    for (size_t wi = 0; wi < plan.warmup_steps.size(); ++wi) {
        int t = plan.warmup_steps[wi];
        WarmupResult res = warmup_cascade(
            m, partition, x, t,
            [](int, std::function<SegmentOutput()> fn) { return fn(); });
        for (int seg = 1; seg <= plan.N; ++seg) {
            int dev = partition.device_of_segment[static_cast<size_t>(seg - 1)];
            stats.device_busy_s[static_cast<size_t>(dev)] +=
                res.segment_eval_s[static_cast<size_t>(seg - 1)];
            stats.device_evals[static_cast<size_t>(dev)] += 1;
        }
        if (wi + 1 == plan.warmup_steps.size())
            for (HiddenBundle& b : res.bundles) {
                int seg = b.produced_by;
                store.put(seg, kWarmupRound, std::move(b));
            }
        x = ddim_step(x, res.eps, t, schedule);
        traj.eps_used.push_back(std::move(res.eps));
        traj.latents.push_back(x);
    }
    stats.warmup_wall_s = seconds_since(run_start);

    for (const Round& round : plan.rounds) {
        auto round_start = Clock::now();
        RoundCtx ctx;
        ctx.m = &m;
        ctx.partition = &partition;
        ctx.store = &store;
        ctx.skips = collect_skips(store, plan.N);
        ctx.latent = x;
        ctx.round = round.index;

        std::map<int, Vec> eps_by_timestep;
        std::vector<HiddenBundle> new_bundles;
        double max_eval_s = 0.0;
        for (const Eval& ev : round.evals) {
            EvalOutcome out = execute_eval(ev, ctx);
            stats.device_busy_s[static_cast<size_t>(ev.device)] += out.eval_s;
            stats.device_evals[static_cast<size_t>(ev.device)] += 1;
            max_eval_s = std::max(max_eval_s, out.eval_s);
            if (out.eps) eps_by_timestep.emplace(out.eps->first, std::move(out.eps->second));
            if (out.bundle) new_bundles.push_back(std::move(*out.bundle));
        }

        apply_sampler_steps(round, eps_by_timestep, x, schedule, traj);
        for (HiddenBundle& b : new_bundles) store.put(b.produced_by, round.index, std::move(b));
        store.prune(round.index + 1);
        stats.store_entries_per_round.push_back(store.size());
        stats.broadcast_count += 1;
        stats.round_wall_s.push_back(seconds_since(round_start));
        stats.round_comm_s.push_back(std::max(0.0, stats.round_wall_s.back() - max_eval_s));
    }

    stats.total_wall_s = seconds_since(run_start);
    return {std::move(traj), std::move(stats)};
}

std::pair<Trajectory, RunStats> run_serial(const ExecutionPlan& plan,
                                           const LayeredDenoiser& m,
                                           const Partition& partition,
                                           const Latent& x_T,
                                           const NoiseSchedule& schedule,
                                           const RunOptions& opts) {
    return run_serial(plan, InstrumentedDenoiser{m, {}}, partition, x_T, schedule, opts);
}

// ---------------------------------------------------------------------------
// parallel runtime

namespace {

// all-to-all message board: workers deposit results, the coordinator collects
// them at the synchronization point and publishes the next task generation
struct ParallelShared {
    std::mutex mu;
    std::condition_variable task_cv;
    std::condition_variable done_cv;

    // task published by the coordinator; shared ownership keeps the payload
    // alive for workers even if the coordinator times out and unwinds
    enum class Phase { Idle, Warmup, Round, Stop } phase = Phase::Idle;
    long long generation = 0;
    std::shared_ptr<const RoundCtx> round_ctx;  // Phase::Round
    int warmup_device = 0;                      // Phase::Warmup
    std::shared_ptr<std::function<SegmentOutput()>> warmup_work;

    // per-device result slots
    std::vector<EvalOutcome> slots;
    std::vector<SegmentOutput> warmup_out;
    std::vector<std::string> errors;
    int done_count = 0;
};

class WorkerPool {
public:
    WorkerPool(const ExecutionPlan& plan, const Partition& partition,
               const RunOptions& opts)
        : plan_(plan), partition_(partition), opts_(opts),
          finished_(static_cast<size_t>(plan.D), 0) {
        shared_.slots.resize(static_cast<size_t>(plan.D));
        shared_.warmup_out.resize(static_cast<size_t>(plan.D));
        shared_.errors.assign(static_cast<size_t>(plan.D), "");
        for (int d = 0; d < plan.D; ++d)
            threads_.emplace_back([this, d] { worker_main(d); });
    }

    ~WorkerPool() {
        {
            std::lock_guard<std::mutex> lk(shared_.mu);
            shared_.phase = ParallelShared::Phase::Stop;
            shared_.generation += 1;
        }
        shared_.task_cv.notify_all();
        for (auto& t : threads_) t.join();
    }

    // runs one segment evaluation on its owning device, in turn (warm-up)
    SegmentOutput run_warmup_segment(int device,
                                     std::shared_ptr<std::function<SegmentOutput()>> work) {
        publish([&](ParallelShared& s) {
            s.phase = ParallelShared::Phase::Warmup;
            s.warmup_device = device;
            s.warmup_work = std::move(work);
        });
        wait_all_done("warm-up");
        std::lock_guard<std::mutex> lk(shared_.mu);
        rethrow_worker_errors();
        return std::move(shared_.warmup_out[static_cast<size_t>(device)]);
    }

    // runs all of a round's evals concurrently; returns per-device outcomes
    std::vector<EvalOutcome> run_round(std::shared_ptr<const RoundCtx> ctx) {
        int round = ctx->round;
        publish([&](ParallelShared& s) {
            s.phase = ParallelShared::Phase::Round;
            s.round_ctx = std::move(ctx);
        });
        wait_all_done("round " + std::to_string(round));
        std::lock_guard<std::mutex> lk(shared_.mu);
        rethrow_worker_errors();
        return std::move(shared_.slots);
    }

private:
    template <typename Setup>
    void publish(Setup&& setup) {
        std::lock_guard<std::mutex> lk(shared_.mu);
        shared_.done_count = 0;
        shared_.slots.assign(static_cast<size_t>(plan_.D), EvalOutcome{});
        shared_.warmup_out.assign(static_cast<size_t>(plan_.D), SegmentOutput{});
        shared_.errors.assign(static_cast<size_t>(plan_.D), "");
        std::fill(finished_.begin(), finished_.end(), 0);
        setup(shared_);
        shared_.generation += 1;
        shared_.task_cv.notify_all();
    }

    void wait_all_done(const std::string& what) {
        std::unique_lock<std::mutex> lk(shared_.mu);
        bool ok = shared_.done_cv.wait_for(
            lk, std::chrono::duration<double>(opts_.round_timeout_s),
            [&] { return shared_.done_count == plan_.D; });
        if (!ok) {
            std::string msg = "run_parallel: timeout in " + what + "; waiting on";
            for (int d = 0; d < plan_.D; ++d)
                if (!finished_[static_cast<size_t>(d)]) msg += " device " + std::to_string(d);
            throw std::runtime_error(msg);
        }
    }

    void rethrow_worker_errors() {
        for (int d = 0; d < plan_.D; ++d)
            if (!shared_.errors[static_cast<size_t>(d)].empty())
                throw std::runtime_error("run_parallel: device " + std::to_string(d) +
                                         " failed: " + shared_.errors[static_cast<size_t>(d)]);
    }

    void worker_main(int device) {
        if (opts_.max_jitter_s > 0.0) {
            Rng rng(mix_seed(opts_.jitter_seed, static_cast<uint64_t>(device)));
            std::this_thread::sleep_for(
                std::chrono::duration<double>(rng.uniform() * opts_.max_jitter_s));
        }
        long long seen = 0;
        while (true) {
            std::unique_lock<std::mutex> lk(shared_.mu);
            shared_.task_cv.wait(lk, [&] { return shared_.generation > seen; });
            seen = shared_.generation;
            auto phase = shared_.phase;
            std::shared_ptr<const RoundCtx> ctx = shared_.round_ctx;
            int warm_dev = shared_.warmup_device;
            auto warm_work = shared_.warmup_work;
            lk.unlock();

            if (phase == ParallelShared::Phase::Stop) return;

            EvalOutcome outcome;
            SegmentOutput warm_result;
            std::string error;
            try {
                if (phase == ParallelShared::Phase::Warmup) {
                    if (device == warm_dev) warm_result = (*warm_work)();
                } else {
                    for (const Eval& ev : plan_.rounds[static_cast<size_t>(ctx->round)].evals)
                        if (ev.device == device) outcome = execute_eval(ev, *ctx);
                }
            } catch (const std::exception& e) {
                error = e.what();
            }

            lk.lock();
            if (phase == ParallelShared::Phase::Warmup && device == warm_dev)
                shared_.warmup_out[static_cast<size_t>(device)] = std::move(warm_result);
            else if (phase == ParallelShared::Phase::Round)
                shared_.slots[static_cast<size_t>(device)] = std::move(outcome);
            shared_.errors[static_cast<size_t>(device)] = error;
            finished_[static_cast<size_t>(device)] = true;
            shared_.done_count += 1;
            bool all = shared_.done_count == plan_.D;
            lk.unlock();
            if (all) shared_.done_cv.notify_one();
        }
    }

    const ExecutionPlan& plan_;
    const Partition& partition_;
    RunOptions opts_;
    ParallelShared shared_;
    std::vector<char> finished_;
    std::vector<std::thread> threads_;
};

}  // namespace

std::pair<Trajectory, RunStats> run_parallel(const ExecutionPlan& plan,
                                             const InstrumentedDenoiser& m,
                                             const Partition& partition,
                                             const Latent& x_T,
                                             const NoiseSchedule& schedule,
                                             int workers,
                                             const RunOptions& opts) {
    check_preconditions(plan, m, partition, x_T, schedule);
    if (workers != plan.D)
        throw std::invalid_argument("run_parallel: workers=" + std::to_string(workers) +
                                    " != plan device count " + std::to_string(plan.D));
    auto run_start = Clock::now();

    RunStats stats;
    stats.device_busy_s.assign(static_cast<size_t>(plan.D), 0.0);
    stats.device_evals.assign(static_cast<size_t>(plan.D), 0);

    Trajectory traj;
    traj.latents.push_back(x_T);
    Latent x = x_T;
    BundleStore store;

    WorkerPool pool(plan, partition, opts);

    // warm-up: pipelined cascade, each segment runs on its owning device
    for (size_t wi = 0; wi < plan.warmup_steps.size(); ++wi) {
        int t = plan.warmup_steps[wi];
        WarmupResult res = warmup_cascade(
            m, partition, x, t, [&](int seg, std::function<SegmentOutput()> fn) {
                int dev = partition.device_of_segment[static_cast<size_t>(seg - 1)];
                auto work = std::make_shared<std::function<SegmentOutput()>>(std::move(fn));
                return pool.run_warmup_segment(dev, std::move(work));
            });
        for (int seg = 1; seg <= plan.N; ++seg) {
            int dev = partition.device_of_segment[static_cast<size_t>(seg - 1)];
            stats.device_busy_s[static_cast<size_t>(dev)] +=
                res.segment_eval_s[static_cast<size_t>(seg - 1)];
            stats.device_evals[static_cast<size_t>(dev)] += 1;
        }
        if (wi + 1 == plan.warmup_steps.size())
            for (HiddenBundle& b : res.bundles) store.put(b.produced_by, kWarmupRound, std::move(b));
        x = ddim_step(x, res.eps, t, schedule);
        traj.eps_used.push_back(std::move(res.eps));
        traj.latents.push_back(x);
    }
    stats.warmup_wall_s = seconds_since(run_start);

    for (const Round& round : plan.rounds) {
        auto round_start = Clock::now();
        auto ctx = std::make_shared<RoundCtx>();
        ctx->m = &m;
        ctx->partition = &partition;
        ctx->store = &store;
        ctx->skips = collect_skips(store, plan.N);
        ctx->latent = x;
        ctx->round = round.index;

        std::vector<EvalOutcome> outcomes = pool.run_round(std::move(ctx));

        // synchronization point: collect results, publish new bundles, sample
        double max_eval_s = 0.0;
        std::map<int, Vec> eps_by_timestep;
        std::vector<HiddenBundle> new_bundles;
        for (int d = 0; d < plan.D; ++d) {
            EvalOutcome& out = outcomes[static_cast<size_t>(d)];
            if (out.eps || out.bundle) {
                stats.device_busy_s[static_cast<size_t>(d)] += out.eval_s;
                stats.device_evals[static_cast<size_t>(d)] += 1;
            }
            max_eval_s = std::max(max_eval_s, out.eval_s);
            if (out.eps) eps_by_timestep.emplace(out.eps->first, std::move(out.eps->second));
            if (out.bundle) new_bundles.push_back(std::move(*out.bundle));
        }
        std::sort(new_bundles.begin(), new_bundles.end(),
                  [](const HiddenBundle& a, const HiddenBundle& b) {
                      return a.produced_by < b.produced_by;
                  });

        apply_sampler_steps(round, eps_by_timestep, x, schedule, traj);
        for (HiddenBundle& b : new_bundles) store.put(b.produced_by, round.index, std::move(b));
        store.prune(round.index + 1);
        stats.store_entries_per_round.push_back(store.size());
        stats.broadcast_count += 1;
        stats.round_wall_s.push_back(seconds_since(round_start));
        stats.round_comm_s.push_back(std::max(0.0, stats.round_wall_s.back() - max_eval_s));
    }

    stats.total_wall_s = seconds_since(run_start);
    return {std::move(traj), std::move(stats)};
}

std::pair<Trajectory, RunStats> run_parallel(const ExecutionPlan& plan,
                                             const LayeredDenoiser& m,
                                             const Partition& partition,
                                             const Latent& x_T,
                                             const NoiseSchedule& schedule,
                                             int workers,
                                             const RunOptions& opts) {
    return run_parallel(plan, InstrumentedDenoiser{m, {}}, partition, x_T, schedule,
                        workers, opts);
}

}  // namespace asyncdiff
