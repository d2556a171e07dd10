#include "asyncdiff/serialize.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian");

namespace asyncdiff {

namespace {

Json vec_to_json(const Vec& v) {
    Json a = Json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Vec vec_from_json(const Json& j) {
    Vec v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
}

Json mat_to_json(const Mat& m) {
    Json rows = Json::array();
    for (int r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Mat mat_from_json(const Json& j) {
    size_t rows = j.size();
    size_t cols = rows ? j[0].size() : 0;
    Mat m(rows, cols);
    for (size_t r = 0; r < rows; ++r) {
        if (j[r].size() != cols)
            throw std::invalid_argument("matrix JSON: ragged rows");
        for (size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
    return m;
}

}  // namespace

Json schedule_to_json(const NoiseSchedule& s) {
    return Json{{"T", s.T}, {"betas", s.betas}};
}

NoiseSchedule schedule_from_json(const Json& j) {
    int T = j.at("T").get<int>();
    std::vector<double> betas = j.at("betas").get<std::vector<double>>();
    if (static_cast<int>(betas.size()) != T)
        throw std::invalid_argument("schedule JSON: betas length != T");
    NoiseSchedule s;
    s.T = T;
    s.betas = betas;
    s.alpha_bars.assign(static_cast<size_t>(T) + 1, 1.0);
    for (int t = 1; t <= T; ++t) {
        double b = betas[static_cast<size_t>(t - 1)];
        if (!(b > 0.0 && b < 1.0))
            throw std::invalid_argument("schedule JSON: beta out of (0,1) at t=" +
                                        std::to_string(t));
        s.alphas.push_back(1.0 - b);
        s.alpha_bars[static_cast<size_t>(t)] = s.alpha_bars[static_cast<size_t>(t - 1)] * (1.0 - b);
    }
    return s;
}

Json mixture_to_json(const GaussianMixture& gm) {
    Json means = Json::array();
    for (const Vec& m : gm.means) means.push_back(vec_to_json(m));
    Json covs = Json::array();
    for (const Mat& c : gm.covariances) covs.push_back(mat_to_json(c));
    return Json{{"weights", gm.weights}, {"means", means}, {"covariances", covs}};
}

GaussianMixture mixture_from_json(const Json& j) {
    GaussianMixture gm;
    gm.weights = j.at("weights").get<std::vector<double>>();
    for (const Json& m : j.at("means")) gm.means.push_back(vec_from_json(m));
    for (const Json& c : j.at("covariances")) gm.covariances.push_back(mat_from_json(c));
    gm.validate();
    return gm;
}

namespace {

Json input_ref_to_json(const InputRef& r) {
    if (r.kind == InputRef::Kind::CurrentLatent) return Json{{"kind", "current-latent"}};
    return Json{{"kind", "cached"},
                {"segment", r.producer_segment},
                {"round", r.producer_round}};
}

InputRef input_ref_from_json(const Json& j) {
    if (j.at("kind") == "current-latent") return InputRef::current_latent();
    return InputRef::cached(j.at("segment").get<int>(), j.at("round").get<int>());
}

}  // namespace

Json plan_to_json(const ExecutionPlan& plan) {
    Json rounds = Json::array();
    for (const Round& r : plan.rounds) {
        Json evals = Json::array();
        for (const Eval& e : r.evals) {
            Json je{{"segment", e.segment},
                    {"device", e.device},
                    {"embed_t", e.embed_t},
                    {"input", input_ref_to_json(e.input)}};
            if (e.emits_eps_for) je["emits_eps_for"] = *e.emits_eps_for;
            evals.push_back(std::move(je));
        }
        rounds.push_back(Json{{"index", r.index},
                              {"evals", std::move(evals)},
                              {"sampler_steps", r.sampler_steps},
                              {"broadcast", r.broadcast}});
    }
    return Json{{"T", plan.T},         {"w", plan.w},
                {"N", plan.N},         {"S", plan.S},
                {"D", plan.D},         {"time_shift", plan.time_shift},
                {"warmup_steps", plan.warmup_steps},
                {"rounds", std::move(rounds)}};
}

ExecutionPlan plan_from_json(const Json& j) {
    ExecutionPlan plan;
    plan.T = j.at("T").get<int>();
    plan.w = j.at("w").get<int>();
    plan.N = j.at("N").get<int>();
    plan.S = j.at("S").get<int>();
    plan.D = j.at("D").get<int>();
    plan.time_shift = j.at("time_shift").get<bool>();
    plan.warmup_steps = j.at("warmup_steps").get<std::vector<int>>();
    for (const Json& jr : j.at("rounds")) {
        Round r;
        r.index = jr.at("index").get<int>();
        r.sampler_steps = jr.at("sampler_steps").get<std::vector<int>>();
        r.broadcast = jr.at("broadcast").get<bool>();
        for (const Json& je : jr.at("evals")) {
            Eval e;
            e.segment = je.at("segment").get<int>();
            e.device = je.at("device").get<int>();
            e.embed_t = je.at("embed_t").get<int>();
            e.input = input_ref_from_json(je.at("input"));
            if (je.contains("emits_eps_for")) e.emits_eps_for = je["emits_eps_for"].get<int>();
            r.evals.push_back(std::move(e));
        }
        plan.rounds.push_back(std::move(r));
    }
    return plan;
}

Json run_stats_to_json(const RunStats& stats) {
    return Json{{"round_wall_s", stats.round_wall_s},
                {"round_comm_s", stats.round_comm_s},
                {"device_busy_s", stats.device_busy_s},
                {"device_evals", stats.device_evals},
                {"store_entries_per_round", stats.store_entries_per_round},
                {"broadcast_count", stats.broadcast_count},
                {"warmup_wall_s", stats.warmup_wall_s},
                {"total_wall_s", stats.total_wall_s},
                {"comm_total_s", stats.comm_total_s()},
                {"comm_ratio", stats.comm_ratio()}};
}

Json latency_report_to_json(const LatencyReport& rep) {
    return Json{{"sequential_total_s", rep.sequential_total_s},
                {"async_total_s", rep.async_total_s},
                {"warmup_s", rep.warmup_s},
                {"round_compute_s", rep.round_compute_s},
                {"round_comm_s", rep.round_comm_s},
                {"comm_total_s", rep.comm_total_s},
                {"speedup", rep.speedup},
                {"comm_ratio", rep.comm_ratio},
                {"approx_step_s", rep.approx_step_s},
                {"approx_total_s", rep.approx_total_s}};
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

struct TensorRef {
    std::string name;
    const double* data;
    long long rows, cols;  // cols = 1 for vectors
};

std::vector<TensorRef> tensor_list(const LayeredDenoiser& m) {
    std::vector<TensorRef> ts;
    ts.push_back({"time_embed.proj", m.time_embed.proj.data(), m.time_embed.proj.rows(),
                  m.time_embed.proj.cols()});
    for (size_t i = 0; i < m.stages.size(); ++i) {
        const Stage& s = m.stages[i];
        std::string p = "stage" + std::to_string(i + 1) + ".";
        ts.push_back({p + "w1", s.w1.data(), s.w1.rows(), s.w1.cols()});
        ts.push_back({p + "b1", s.b1.data(), s.b1.size(), 1});
        ts.push_back({p + "time_in", s.time_in.data(), s.time_in.rows(), s.time_in.cols()});
        ts.push_back({p + "w2", s.w2.data(), s.w2.rows(), s.w2.cols()});
        ts.push_back({p + "b2", s.b2.data(), s.b2.size(), 1});
    }
    return ts;
}

void write_row_major(std::ofstream& out, const double* data, long long rows,
                     long long cols) {
    // Eigen stores column-major; emit row-major as documented
    for (long long r = 0; r < rows; ++r)
        for (long long c = 0; c < cols; ++c) {
            double v = data[c * rows + r];
            out.write(reinterpret_cast<const char*>(&v), sizeof(double));
        }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& base, const LayeredDenoiser& m) {
    Json meta;
    meta["format"] = "asyncdiff-checkpoint-v1";
    meta["L"] = m.num_stages();
    meta["widths"] = m.widths;
    meta["time_embed_dim"] = m.time_embed.dim;
    Json links = Json::array();
    for (const auto& [p, c] : m.skip_links) links.push_back(Json::array({p, c}));
    meta["skip_links"] = std::move(links);

    Json tensors = Json::array();
    long long offset = 0;
    auto ts = tensor_list(m);
    for (const TensorRef& t : ts) {
        tensors.push_back(Json{{"name", t.name},
                               {"rows", t.rows},
                               {"cols", t.cols},
                               {"offset_doubles", offset}});
        offset += t.rows * t.cols;
    }
    meta["tensors"] = std::move(tensors);
    meta["total_doubles"] = offset;
    meta["endianness"] = "little";

    std::ofstream jf(base.string() + ".json");
    if (!jf) throw std::runtime_error("save_checkpoint: cannot write " + base.string() + ".json");
    jf << meta.dump(2) << "\n";

    std::ofstream bf(base.string() + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("save_checkpoint: cannot write " + base.string() + ".bin");
    for (const TensorRef& t : ts) write_row_major(bf, t.data, t.rows, t.cols);
}

LayeredDenoiser load_checkpoint(const std::filesystem::path& base) {
    std::ifstream jf(base.string() + ".json");
    if (!jf) throw std::runtime_error("load_checkpoint: cannot read " + base.string() + ".json");
    Json meta = Json::parse(jf);
    if (meta.at("format") != "asyncdiff-checkpoint-v1")
        throw std::runtime_error("load_checkpoint: unknown format " +
                                 meta.at("format").get<std::string>());

    int L = meta.at("L").get<int>();
    std::vector<int> widths = meta.at("widths").get<std::vector<int>>();
    int embed_dim = meta.at("time_embed_dim").get<int>();
    std::vector<std::pair<int, int>> links;
    for (const Json& l : meta.at("skip_links"))
        links.emplace_back(l[0].get<int>(), l[1].get<int>());

    LayeredDenoiser m = make_denoiser_shell(L, widths, std::move(links), embed_dim);

    std::ifstream bf(base.string() + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("load_checkpoint: cannot read " + base.string() + ".bin");

    auto read_mat = [&](Mat& dst, const std::string& name) {
        for (long long r = 0; r < dst.rows(); ++r)
            for (long long c = 0; c < dst.cols(); ++c) {
                double v;
                if (!bf.read(reinterpret_cast<char*>(&v), sizeof(double)))
                    throw std::runtime_error("load_checkpoint: blob truncated at " + name);
                dst(r, c) = v;
            }
    };
    auto read_vec = [&](Vec& dst, const std::string& name) {
        for (long long r = 0; r < dst.size(); ++r) {
            double v;
            if (!bf.read(reinterpret_cast<char*>(&v), sizeof(double)))
                throw std::runtime_error("load_checkpoint: blob truncated at " + name);
            dst[r] = v;
        }
    };

    read_mat(m.time_embed.proj, "time_embed.proj");
    for (size_t i = 0; i < m.stages.size(); ++i) {
        Stage& s = m.stages[i];
        std::string p = "stage" + std::to_string(i + 1) + ".";
        read_mat(s.w1, p + "w1");
        read_vec(s.b1, p + "b1");
        read_mat(s.time_in, p + "time_in");
        read_mat(s.w2, p + "w2");
        read_vec(s.b2, p + "b2");
    }
    return m;
}

std::string csv_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace asyncdiff
