#include "asyncdiff/experiment.hpp"

#include "asyncdiff/log.hpp"
#include "asyncdiff/rng.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace asyncdiff {

namespace fs = std::filesystem;

std::string RunSpec::label() const {
    std::string s = "N=" + std::to_string(N) + " S=" + std::to_string(S) +
                    " w=" + std::to_string(w);
    if (time_shift) s += " shift";
    return s;
}

NoiseSchedule ExperimentConfig::schedule() const {
    return build_schedule(T, beta_start, beta_end, schedule_kind);
}

void ExperimentConfig::validate() const {
    mixture.validate();
    if (static_cast<int>(widths.size()) != L + 1)
        throw std::invalid_argument("config: widths must have L+1 entries");
    if (widths.front() != mixture.dim())
        throw std::invalid_argument("config: widths[0] must equal mixture dimension");
    for (const RunSpec& r : matrix) {
        if (r.w < 1 || r.w > T || r.N < 1 || (r.S != 1 && r.S != 2) ||
            (r.S == 2 && r.N < 2) || r.N > L)
            throw std::invalid_argument("config: infeasible matrix entry " + r.label());
    }
    if (!delays_ms.empty()) {
        for (double d : delays_ms)
            if (d < 0.0) throw std::invalid_argument("config: negative delay");
    }
}

ExperimentConfig config_from_json(const Json& j) {
    ExperimentConfig c;
    c.seed = j.value("seed", 0ULL);
    c.out_dir = j.value("out_dir", std::string("out"));

    const Json& js = j.at("schedule");
    c.T = js.at("T").get<int>();
    c.beta_start = js.at("beta_start").get<double>();
    c.beta_end = js.at("beta_end").get<double>();
    c.schedule_kind = schedule_kind_from_string(js.value("kind", std::string("linear")));

    c.mixture = mixture_from_json(j.at("mixture"));

    const Json& jm = j.at("model");
    c.L = jm.at("L").get<int>();
    c.widths = jm.at("widths").get<std::vector<int>>();
    c.skips = skip_spec_from_string(jm.value("skips", std::string("unet-mirror")));
    c.model_seed = jm.value("seed", 7ULL);
    c.time_embed_dim = jm.value("time_embed_dim", 8);

    if (j.contains("training")) {
        const Json& jt = j.at("training");
        c.train_steps = jt.value("steps", c.train_steps);
        c.train_batch = jt.value("batch", c.train_batch);
        c.train_lr = jt.value("lr", c.train_lr);
        c.train_seed = jt.value("seed", c.train_seed);
    }

    for (const Json& je : j.value("matrix", Json::array())) {
        RunSpec r;
        r.N = je.at("N").get<int>();
        r.S = je.at("S").get<int>();
        r.w = je.at("w").get<int>();
        r.time_shift = je.value("time_shift", false);
        c.matrix.push_back(r);
    }
    c.delays_ms = j.value("delays_ms", std::vector<double>{});
    c.sweep_seeds = j.value("sweep_seeds", std::vector<uint64_t>{});
    c.round_timeout_s = j.value("round_timeout_s", 30.0);
    c.validate();
    return c;
}

Json config_to_json(const ExperimentConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["schedule"] = Json{{"T", c.T},
                         {"beta_start", c.beta_start},
                         {"beta_end", c.beta_end},
                         {"kind", to_string(c.schedule_kind)}};
    j["mixture"] = mixture_to_json(c.mixture);
    j["model"] = Json{{"L", c.L},
                      {"widths", c.widths},
                      {"skips", to_string(c.skips)},
                      {"seed", c.model_seed},
                      {"time_embed_dim", c.time_embed_dim}};
    j["training"] = Json{{"steps", c.train_steps},
                         {"batch", c.train_batch},
                         {"lr", c.train_lr},
                         {"seed", c.train_seed}};
    Json matrix = Json::array();
    for (const RunSpec& r : c.matrix)
        matrix.push_back(Json{{"N", r.N}, {"S", r.S}, {"w", r.w}, {"time_shift", r.time_shift}});
    j["matrix"] = std::move(matrix);
    j["delays_ms"] = c.delays_ms;
    j["sweep_seeds"] = c.sweep_seeds;
    j["round_timeout_s"] = c.round_timeout_s;
    return j;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config " + path.string());
    return config_from_json(Json::parse(f));
}

// ---------------------------------------------------------------------------

namespace {

fs::path checkpoint_base(const ExperimentConfig& cfg) {
    return fs::path(cfg.out_dir) / "model";
}

Latent draw_x_T(const ExperimentConfig& cfg, uint64_t run_seed) {
    Rng rng(mix_seed(cfg.seed, run_seed));
    Latent x;
    x.values = Vec(cfg.mixture.dim());
    for (int i = 0; i < x.values.size(); ++i) x.values[i] = rng.normal();
    x.timestep = cfg.T;
    return x;
}

bool bit_identical(const Trajectory& a, const Trajectory& b) {
    if (a.latents.size() != b.latents.size()) return false;
    for (size_t i = 0; i < a.latents.size(); ++i) {
        const Vec& va = a.latents[i].values;
        const Vec& vb = b.latents[i].values;
        if (va.size() != vb.size()) return false;
        for (int k = 0; k < va.size(); ++k)
            if (va[k] != vb[k]) return false;
    }
    return true;
}

constexpr char kRunHeader[] =
    "config,seed,per_device_macs,device_count,broadcast_count,"
    "measured_latency_s,speedup,comm_ratio,final_mse,avg_nll";

std::string row_csv(const ResultRow& r) {
    std::ostringstream os;
    os << r.config_label << "," << r.run_seed << "," << r.per_device_macs << ","
       << r.device_count << "," << r.broadcast_count << ","
       << csv_double(r.measured_latency_s) << "," << csv_double(r.speedup) << ","
       << csv_double(r.comm_ratio) << "," << csv_double(r.final_mse) << ","
       << csv_double(r.avg_nll);
    return os.str();
}

}  // namespace

LayeredDenoiser train_or_load_model(const ExperimentConfig& cfg, bool retrain) {
    fs::path base = checkpoint_base(cfg);
    if (!retrain && fs::exists(base.string() + ".json"))
        return load_checkpoint(base);

    LayeredDenoiser init =
        build_toy_denoiser(cfg.L, cfg.widths, cfg.skips, cfg.model_seed, cfg.time_embed_dim);
    NoiseSchedule schedule = cfg.schedule();
    log_info("training toy model: steps=" + std::to_string(cfg.train_steps) +
             " batch=" + std::to_string(cfg.train_batch));
    TrainResult res = train_toy(init, cfg.mixture, schedule, cfg.train_steps,
                                cfg.train_batch, cfg.train_lr, cfg.train_seed);

    fs::create_directories(cfg.out_dir);
    save_checkpoint(base, res.model);
    std::ofstream loss_csv(fs::path(cfg.out_dir) / "train_loss.csv");
    loss_csv << "step,loss\n";
    for (size_t i = 0; i < res.losses.size(); ++i)
        loss_csv << i << "," << csv_double(res.losses[i]) << "\n";
    if (!res.losses.empty())
        log_info("final training loss: " + csv_double(res.losses.back()));
    return res.model;
}

int cmd_train(const ExperimentConfig& cfg) {
    try {
        train_or_load_model(cfg, /*retrain=*/true);
    } catch (const std::exception& e) {
        std::cerr << "train failed: " << e.what() << "\n";
        return 1;
    }
    std::cout << "checkpoint written to " << checkpoint_base(cfg).string()
              << ".{json,bin}\n";
    return 0;
}

int cmd_plan(int T, int w, int N, int S, bool time_shift,
             const std::optional<fs::path>& out_dir) {
    ExecutionPlan plan;
    try {
        plan = plan_async(T, w, N, S, time_shift);
    } catch (const std::exception& e) {
        std::cerr << "infeasible plan: " << e.what() << "\n";
        return 1;
    }
    auto violations = validate_plan(plan);
    if (!violations.empty()) {
        for (const auto& v : violations) std::cerr << "violation: " << v << "\n";
        return 1;
    }
    std::cout << render_plan(plan);
    int rounds = static_cast<int>(plan.rounds.size());
    int strictly = 0;
    for (const Round& r : plan.rounds) strictly += r.broadcast ? 1 : 0;
    std::cout << "devices: " << plan.D << "\n";
    std::cout << "broadcasts (per-round convention): " << rounds << "\n";
    std::cout << "broadcasts (strictly needed): " << strictly << "\n";
    if (plan.rounds.empty()) std::cout << "note: warm-up only, no async rounds\n";
    if (out_dir) {
        fs::create_directories(*out_dir);
        fs::path p = *out_dir / ("plan_T" + std::to_string(T) + "_w" + std::to_string(w) +
                                 "_N" + std::to_string(N) + "_S" + std::to_string(S) +
                                 (time_shift ? "_shift" : "") + ".json");
        std::ofstream f(p);
        f << plan_to_json(plan).dump(2) << "\n";
        std::cout << "plan JSON written to " << p.string() << "\n";
    }
    return 0;
}

ResultRow run_one(const ExperimentConfig& cfg, const LayeredDenoiser& model,
                  const RunSpec& spec, uint64_t run_seed, bool measure_parallel) {
    NoiseSchedule schedule = cfg.schedule();
    Partition partition =
        partition_balanced(model, spec.N, PartitionStrategy::SequentialBalanced);
    ExecutionPlan plan = plan_async(cfg.T, spec.w, spec.N, spec.S, spec.time_shift);
    Latent x_T = draw_x_T(cfg, run_seed);

    EpsFn eps_fn = [&](const Latent& x, int t) { return eval_full(model, x, t); };

    auto seq_start = std::chrono::steady_clock::now();
    Trajectory seq = sequential_denoise(eps_fn, x_T, schedule);
    double seq_wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - seq_start).count();

    RunOptions opts;
    opts.round_timeout_s = cfg.round_timeout_s;
    auto [serial_traj, serial_stats] =
        run_serial(plan, model, partition, x_T, schedule, opts);

    Trajectory async_traj = serial_traj;
    RunStats stats = serial_stats;
    if (measure_parallel) {
        auto [par_traj, par_stats] =
            run_parallel(plan, model, partition, x_T, schedule, plan.D, opts);
        if (!bit_identical(par_traj, serial_traj))
            throw std::runtime_error("invariant violated: run_parallel != run_serial for " +
                                     spec.label());
        async_traj = std::move(par_traj);
        stats = std::move(par_stats);
    }

    PlanCounts counts = plan_counts(plan, partition);
    if (stats.broadcast_count != counts.broadcasts_paper_convention)
        throw std::runtime_error(
            "invariant violated: executor broadcast count != analytic count for " +
            spec.label());

    DivergenceReport div = compare_trajectories(seq, async_traj);

    ResultRow row;
    row.config_label = spec.label();
    row.run_seed = run_seed;
    row.per_device_macs = counts.max_device_macs;
    row.device_count = plan.D;
    row.broadcast_count = counts.broadcasts_paper_convention;
    row.measured_latency_s = stats.total_wall_s;
    row.speedup = stats.total_wall_s > 0.0 ? seq_wall / stats.total_wall_s : 0.0;
    row.comm_ratio = stats.comm_ratio();
    row.final_mse = div.final_mse;
    row.avg_nll = -cfg.mixture.log_pdf(async_traj.final_latent().values);
    return row;
}

int cmd_run(const ExperimentConfig& cfg, std::vector<ResultRow>* rows_out) {
    LayeredDenoiser model = train_or_load_model(cfg, /*retrain=*/false);
    fs::create_directories(cfg.out_dir);
    std::ofstream csv(fs::path(cfg.out_dir) / "results.csv");
    csv << kRunHeader << "\n";
    int failures = 0;
    for (const RunSpec& spec : cfg.matrix) {
        try {
            ResultRow row = run_one(cfg, model, spec, cfg.seed, /*measure_parallel=*/true);
            csv << row_csv(row) << "\n";
            std::cout << row_csv(row) << "\n";
            if (rows_out) rows_out->push_back(row);
        } catch (const std::exception& e) {
            std::cerr << "run failed for " << spec.label() << ": " << e.what() << "\n";
            failures += 1;
        }
    }
    return failures == 0 ? 0 : 1;
}

int cmd_sweep(const ExperimentConfig& cfg, int jobs) {
    if (cfg.sweep_seeds.empty()) {
        std::cerr << "sweep: config.sweep_seeds is empty\n";
        return 1;
    }
    LayeredDenoiser model = train_or_load_model(cfg, /*retrain=*/false);
    fs::create_directories(cfg.out_dir);

    struct Agg {
        std::vector<double> mse, nll;
    };
    std::vector<Agg> agg(cfg.matrix.size());

    // deterministic quality metrics only; wall-clock fields are excluded so
    // that sweep CSV bytes are stable across reruns
    auto run_cell = [&](size_t mi, uint64_t seed) {
        ResultRow row = run_one(cfg, model, cfg.matrix[mi], seed, /*measure_parallel=*/false);
        return std::make_pair(row.final_mse, row.avg_nll);
    };

    for (size_t mi = 0; mi < cfg.matrix.size(); ++mi) {
        agg[mi].mse.resize(cfg.sweep_seeds.size());
        agg[mi].nll.resize(cfg.sweep_seeds.size());
        if (jobs <= 1) {
            for (size_t si = 0; si < cfg.sweep_seeds.size(); ++si) {
                auto [mse, nll] = run_cell(mi, cfg.sweep_seeds[si]);
                agg[mi].mse[si] = mse;
                agg[mi].nll[si] = nll;
            }
        } else {
            std::vector<std::thread> pool;
            std::atomic<size_t> next{0};
            for (int jb = 0; jb < jobs; ++jb)
                pool.emplace_back([&] {
                    for (size_t si = next.fetch_add(1); si < cfg.sweep_seeds.size();
                         si = next.fetch_add(1)) {
                        auto [mse, nll] = run_cell(mi, cfg.sweep_seeds[si]);
                        agg[mi].mse[si] = mse;
                        agg[mi].nll[si] = nll;
                    }
                });
            for (auto& t : pool) t.join();
        }
    }

    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto std_of = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        double m = mean_of(v), s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
    };

    std::ofstream csv(fs::path(cfg.out_dir) / "sweep.csv");
    csv << "config,seeds,per_device_macs,device_count,broadcast_count,"
           "final_mse_mean,final_mse_std,avg_nll_mean,avg_nll_std\n";
    LayeredDenoiser probe = model;
    for (size_t mi = 0; mi < cfg.matrix.size(); ++mi) {
        const RunSpec& spec = cfg.matrix[mi];
        Partition partition =
            partition_balanced(probe, spec.N, PartitionStrategy::SequentialBalanced);
        ExecutionPlan plan = plan_async(cfg.T, spec.w, spec.N, spec.S, spec.time_shift);
        PlanCounts counts = plan_counts(plan, partition);
        csv << spec.label() << "," << cfg.sweep_seeds.size() << ","
            << counts.max_device_macs << "," << plan.D << ","
            << counts.broadcasts_paper_convention << ","
            << csv_double(mean_of(agg[mi].mse)) << "," << csv_double(std_of(agg[mi].mse))
            << "," << csv_double(mean_of(agg[mi].nll)) << ","
            << csv_double(std_of(agg[mi].nll)) << "\n";
    }
    std::cout << "sweep written to " << (fs::path(cfg.out_dir) / "sweep.csv").string()
              << "\n";
    return 0;
}

int cmd_bench(const ExperimentConfig& cfg) {
    if (cfg.delays_ms.empty()) {
        std::cerr << "bench: config.delays_ms is empty\n";
        return 1;
    }
    LayeredDenoiser model = train_or_load_model(cfg, /*retrain=*/false);
    NoiseSchedule schedule = cfg.schedule();
    fs::create_directories(cfg.out_dir);
    std::ofstream csv(fs::path(cfg.out_dir) / "bench.csv");
    csv << "config,predicted_total_s,measured_total_s,rel_error_total,"
           "predicted_comm_ratio,measured_comm_ratio,measured_speedup\n";

    int failures = 0;
    for (const RunSpec& spec : cfg.matrix) {
        try {
            if (static_cast<int>(cfg.delays_ms.size()) < spec.N)
                throw std::invalid_argument("bench: need at least N delays");
            std::vector<double> delays_s(cfg.delays_ms.begin(),
                                         cfg.delays_ms.begin() + spec.N);
            for (double& d : delays_s) d /= 1000.0;

            Partition partition =
                partition_balanced(model, spec.N, PartitionStrategy::SequentialBalanced);
            ExecutionPlan plan = plan_async(cfg.T, spec.w, spec.N, spec.S, spec.time_shift);
            Latent x_T = draw_x_T(cfg, cfg.seed);
            InstrumentedDenoiser instr = inject_delay(model, delays_s);

            RunOptions opts;
            opts.round_timeout_s = cfg.round_timeout_s;
            auto [traj, stats] =
                run_parallel(plan, instr, partition, x_T, schedule, plan.D, opts);

            // sequential baseline with the same injected compute cost
            double delay_total = 0.0;
            for (double d : delays_s) delay_total += d;
            auto seq_start = std::chrono::steady_clock::now();
            EpsFn eps_fn = [&](const Latent& x, int t) {
                std::this_thread::sleep_for(std::chrono::duration<double>(delay_total));
                return eval_full(model, x, t);
            };
            Trajectory seq = sequential_denoise(eps_fn, x_T, schedule);
            double seq_wall = std::chrono::duration<double>(
                                  std::chrono::steady_clock::now() - seq_start)
                                  .count();

            CostComparison cmp = calibrate_and_compare(plan, delays_s, stats);
            double measured_speedup =
                stats.total_wall_s > 0.0 ? seq_wall / stats.total_wall_s : 0.0;
            csv << spec.label() << "," << csv_double(cmp.predicted_total_s) << ","
                << csv_double(cmp.measured_total_s) << ","
                << csv_double(cmp.rel_error_total) << ","
                << csv_double(cmp.predicted_comm_ratio) << ","
                << csv_double(cmp.measured_comm_ratio) << ","
                << csv_double(measured_speedup) << "\n";
            std::cout << spec.label() << ": predicted " << csv_double(cmp.predicted_total_s)
                      << "s measured " << csv_double(cmp.measured_total_s)
                      << "s rel_error " << csv_double(cmp.rel_error_total)
                      << " speedup " << csv_double(measured_speedup) << "\n";
        } catch (const std::exception& e) {
            std::cerr << "bench failed for " << spec.label() << ": " << e.what() << "\n";
            failures += 1;
        }
    }
    return failures == 0 ? 0 : 1;
}

}  // namespace asyncdiff
