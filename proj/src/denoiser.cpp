#include "asyncdiff/denoiser.hpp"

#include "asyncdiff/partition.hpp"
#include "asyncdiff/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace asyncdiff {

namespace {

constexpr double kLeakySlope = 0.1;

double lrelu(double v) { return v > 0.0 ? v : kLeakySlope * v; }
double lrelu_grad(double v) { return v > 0.0 ? 1.0 : kLeakySlope; }

Vec lrelu(const Vec& v) { return v.unaryExpr([](double x) { return lrelu(x); }); }

Mat xavier(Rng& rng, int rows, int cols) {
    double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-a, a);
    return m;
}

}  // namespace

Vec TimeEmbedding::sinusoid(int t, int dim) {
    int half = dim / 2;
    Vec s(dim);
    for (int k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                               static_cast<double>(half));
        s[k] = std::cos(t * freq);
        s[half + k] = std::sin(t * freq);
    }
    return s;
}

SkipSpec skip_spec_from_string(const std::string& s) {
    if (s == "none") return SkipSpec::None;
    if (s == "unet-mirror") return SkipSpec::UnetMirror;
    throw std::invalid_argument("unknown skip spec: " + s);
}

std::string to_string(SkipSpec s) {
    return s == SkipSpec::None ? "none" : "unet-mirror";
}

long long LayeredDenoiser::total_macs() const {
    long long total = 0;
    for (const Stage& s : stages) total += s.cost_macs;
    return total;
}

std::vector<std::pair<int, int>> LayeredDenoiser::links_into(int consumer) const {
    std::vector<std::pair<int, int>> out;
    for (const auto& link : skip_links)
        if (link.second == consumer) out.push_back(link);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::pair<int, int>> LayeredDenoiser::links_out_of(int producer) const {
    std::vector<std::pair<int, int>> out;
    for (const auto& link : skip_links)
        if (link.first == producer) out.push_back(link);
    std::sort(out.begin(), out.end());
    return out;
}

LayeredDenoiser make_denoiser_shell(int L, const std::vector<int>& widths,
                                    std::vector<std::pair<int, int>> skip_links,
                                    int time_embed_dim) {
    if (L < 2)
        throw std::invalid_argument("make_denoiser_shell: L must be >= 2, got " +
                                    std::to_string(L));
    if (static_cast<int>(widths.size()) != L + 1)
        throw std::invalid_argument("make_denoiser_shell: widths must have L+1 entries, got " +
                                    std::to_string(widths.size()));
    for (int w : widths)
        if (w < 1)
            throw std::invalid_argument("make_denoiser_shell: widths must be positive");
    if (widths.front() != widths.back())
        throw std::invalid_argument(
            "make_denoiser_shell: widths[0] (data dim) must equal widths[L] (eps dim)");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
        throw std::invalid_argument("make_denoiser_shell: time_embed_dim must be even and >= 2");
    for (const auto& [p, c] : skip_links)
        if (p < 1 || c > L || p >= c)
            throw std::invalid_argument("make_denoiser_shell: bad skip link (" +
                                        std::to_string(p) + ", " + std::to_string(c) + ")");

    LayeredDenoiser m;
    m.widths = widths;
    m.skip_links = std::move(skip_links);
    std::sort(m.skip_links.begin(), m.skip_links.end());

    m.time_embed.dim = time_embed_dim;
    m.time_embed.proj = Mat::Zero(time_embed_dim, time_embed_dim);

    for (int i = 1; i <= L; ++i) {
        Stage st;
        st.index = i;
        int in = (i == 1) ? widths[0] + time_embed_dim : widths[static_cast<size_t>(i - 1)];
        for (const auto& link : m.links_into(i)) in += widths[static_cast<size_t>(link.first)];
        int hidden = widths[static_cast<size_t>(i)];
        int out = widths[static_cast<size_t>(i)];
        st.w1 = Mat::Zero(hidden, in);
        st.b1 = Vec::Zero(hidden);
        st.time_in = Mat::Zero(hidden, time_embed_dim);
        st.w2 = Mat::Zero(out, hidden);
        st.b2 = Vec::Zero(out);
        st.cost_macs = static_cast<long long>(hidden) * in +
                       static_cast<long long>(hidden) * time_embed_dim +
                       static_cast<long long>(out) * hidden;
        m.stages.push_back(std::move(st));
    }
    return m;
}

LayeredDenoiser build_toy_denoiser(int L, const std::vector<int>& widths,
                                   SkipSpec skip_spec, uint64_t seed,
                                   int time_embed_dim) {
    std::vector<std::pair<int, int>> links;
    if (skip_spec == SkipSpec::UnetMirror) {
        for (int i = 1; i < L + 1 - i; ++i) links.emplace_back(i, L + 1 - i);
    }
    LayeredDenoiser m = make_denoiser_shell(L, widths, std::move(links), time_embed_dim);

    Rng rng(seed);
    m.time_embed.proj = xavier(rng, time_embed_dim, time_embed_dim);
    for (Stage& st : m.stages) {
        st.w1 = xavier(rng, st.hidden_width(), st.in_width());
        st.time_in = 0.5 * xavier(rng, st.hidden_width(), time_embed_dim);
        st.w2 = xavier(rng, st.out_width(), st.hidden_width());
    }
    return m;
}

namespace {

// Evaluates stages [first, last]. `current` enters stage `first` as its base
// input (for first == 1 that is concat(x, e_t)). Skip features produced by
// stages in the range are written into `skips`; features consumed by stages
// in the range are read from it (they may predate this call).
Vec run_stage_range(const LayeredDenoiser& m, int first, int last, Vec current,
                    const Vec& e_t, SkipMap& skips) {
    for (int i = first; i <= last; ++i) {
        const Stage& st = m.stages[static_cast<size_t>(i - 1)];
        auto links = m.links_into(i);
        Vec u;
        if (links.empty()) {
            u = std::move(current);
        } else {
            int extra = 0;
            for (const auto& link : links) {
                auto it = skips.find(link);
                if (it == skips.end())
                    throw std::runtime_error(
                        "eval: missing skip feature for link (" +
                        std::to_string(link.first) + " -> " +
                        std::to_string(link.second) + ")");
                extra += static_cast<int>(it->second.size());
            }
            u.resize(current.size() + extra);
            u.head(current.size()) = current;
            int at = static_cast<int>(current.size());
            for (const auto& link : links) {
                const Vec& f = skips.at(link);
                u.segment(at, f.size()) = f;
                at += static_cast<int>(f.size());
            }
        }
        if (u.size() != st.w1.cols())
            throw std::runtime_error("eval: stage " + std::to_string(i) +
                                     " input width " + std::to_string(u.size()) +
                                     " != expected " + std::to_string(st.w1.cols()));
        Vec z = st.w1 * u + st.b1 + st.time_in * e_t;
        Vec h = lrelu(z);
        Vec y = st.w2 * h + st.b2;
        if (!y.allFinite())
            throw std::domain_error("eval: non-finite activation at stage " +
                                    std::to_string(i));
        for (const auto& link : m.links_out_of(i)) skips[link] = y;
        current = std::move(y);
    }
    return current;
}

void require_sequential_segment(const Partition& p, int seg) {
    if (seg < 1 || seg > p.num_segments())
        throw std::invalid_argument("eval_segment: segment " + std::to_string(seg) +
                                    " outside [1, " + std::to_string(p.num_segments()) + "]");
    if (!p.contiguous())
        throw std::invalid_argument(
            "eval_segment: partition is not a contiguous cascade (first-last-grouped "
            "partitions are placement/costing only)");
}

SegmentOutput finish_segment(const LayeredDenoiser& m, const Partition& p, int seg,
                             Vec out, SkipMap& produced, int t_embed) {
    if (seg == p.num_segments()) return SegmentOutput{std::move(out)};
    HiddenBundle b;
    b.boundary = std::move(out);
    b.produced_by = seg;
    b.produced_at = t_embed;
    int first_stage = p.segments[static_cast<size_t>(seg - 1)].front();
    int last_stage = p.segments[static_cast<size_t>(seg - 1)].back();
    for (const auto& [link, feature] : produced)
        if (link.first >= first_stage && link.first <= last_stage &&
            link.second > last_stage)
            b.skips.emplace(link, feature);
    return SegmentOutput{std::move(b)};
}

}  // namespace

Vec eval_full(const LayeredDenoiser& m, const Latent& x, int t_embed) {
    if (x.values.size() != m.data_dim())
        throw std::invalid_argument("eval_full: latent dimension " +
                                    std::to_string(x.values.size()) + " != model dim " +
                                    std::to_string(m.data_dim()));
    Vec e_t = m.time_embed.embed(t_embed);
    Vec input(x.values.size() + e_t.size());
    input.head(x.values.size()) = x.values;
    input.tail(e_t.size()) = e_t;
    SkipMap skips;
    return run_stage_range(m, 1, m.num_stages(), std::move(input), e_t, skips);
}

SegmentOutput eval_segment(const LayeredDenoiser& m, const Partition& p, int seg,
                           const Latent& x, const SkipMap& skips_in, int t_embed) {
    require_sequential_segment(p, seg);
    if (seg != 1)
        throw std::invalid_argument("eval_segment: segment " + std::to_string(seg) +
                                    " requires a HiddenBundle input, not a Latent");
    Vec e_t = m.time_embed.embed(t_embed);
    Vec input(x.values.size() + e_t.size());
    input.head(x.values.size()) = x.values;
    input.tail(e_t.size()) = e_t;
    SkipMap skips = skips_in;
    const auto& range = p.segments.front();
    Vec out = run_stage_range(m, range.front(), range.back(), std::move(input), e_t, skips);
    return finish_segment(m, p, seg, std::move(out), skips, t_embed);
}

SegmentOutput eval_segment(const LayeredDenoiser& m, const Partition& p, int seg,
                           const HiddenBundle& input, const SkipMap& skips_in,
                           int t_embed) {
    require_sequential_segment(p, seg);
    if (seg == 1)
        throw std::invalid_argument("eval_segment: segment 1 requires a Latent input");
    if (input.produced_by != seg - 1)
        throw std::invalid_argument("eval_segment: segment " + std::to_string(seg) +
                                    " needs a bundle from segment " +
                                    std::to_string(seg - 1) + ", got one from segment " +
                                    std::to_string(input.produced_by));
    Vec e_t = m.time_embed.embed(t_embed);
    SkipMap skips = skips_in;
    const auto& range = p.segments[static_cast<size_t>(seg - 1)];
    Vec out = run_stage_range(m, range.front(), range.back(), input.boundary, e_t, skips);
    return finish_segment(m, p, seg, std::move(out), skips, t_embed);
}

// ---------------------------------------------------------------------------
// training

namespace {

struct StageGrad {
    Mat w1, time_in, w2;
    Vec b1, b2;
};

struct Grads {
    Mat proj;
    std::vector<StageGrad> stages;

    explicit Grads(const LayeredDenoiser& m) {
        proj = Mat::Zero(m.time_embed.proj.rows(), m.time_embed.proj.cols());
        for (const Stage& s : m.stages) {
            StageGrad g;
            g.w1 = Mat::Zero(s.w1.rows(), s.w1.cols());
            g.b1 = Vec::Zero(s.b1.size());
            g.time_in = Mat::Zero(s.time_in.rows(), s.time_in.cols());
            g.w2 = Mat::Zero(s.w2.rows(), s.w2.cols());
            g.b2 = Vec::Zero(s.b2.size());
            stages.push_back(std::move(g));
        }
    }

    void scale(double f) {
        proj *= f;
        for (StageGrad& g : stages) {
            g.w1 *= f;
            g.b1 *= f;
            g.time_in *= f;
            g.w2 *= f;
            g.b2 *= f;
        }
    }
};

struct ForwardCache {
    Vec s_raw, e_t;
    std::vector<Vec> u, z, y;  // per stage
};

Vec forward_cached(const LayeredDenoiser& m, const Vec& x, int t, ForwardCache& c) {
    c.s_raw = TimeEmbedding::sinusoid(t, m.time_embed.dim);
    c.e_t = m.time_embed.proj * c.s_raw;
    int L = m.num_stages();
    c.u.assign(static_cast<size_t>(L), Vec());
    c.z.assign(static_cast<size_t>(L), Vec());
    c.y.assign(static_cast<size_t>(L), Vec());

    Vec current(x.size() + c.e_t.size());
    current.head(x.size()) = x;
    current.tail(c.e_t.size()) = c.e_t;
    for (int i = 1; i <= L; ++i) {
        const Stage& st = m.stages[static_cast<size_t>(i - 1)];
        auto links = m.links_into(i);
        Vec u = current;
        for (const auto& link : links) {
            const Vec& f = c.y[static_cast<size_t>(link.first - 1)];
            Vec nu(u.size() + f.size());
            nu.head(u.size()) = u;
            nu.tail(f.size()) = f;
            u = std::move(nu);
        }
        c.u[static_cast<size_t>(i - 1)] = u;
        Vec z = st.w1 * u + st.b1 + st.time_in * c.e_t;
        c.z[static_cast<size_t>(i - 1)] = z;
        Vec y = st.w2 * lrelu(z) + st.b2;
        c.y[static_cast<size_t>(i - 1)] = y;
        current = y;
    }
    return current;
}

void backward(const LayeredDenoiser& m, const ForwardCache& c, const Vec& g_out,
              Grads& grads) {
    int L = m.num_stages();
    std::vector<Vec> g_y(static_cast<size_t>(L));
    for (int i = 0; i < L; ++i)
        g_y[static_cast<size_t>(i)] = Vec::Zero(c.y[static_cast<size_t>(i)].size());
    g_y[static_cast<size_t>(L - 1)] = g_out;
    Vec g_e = Vec::Zero(c.e_t.size());

    for (int i = L; i >= 1; --i) {
        const Stage& st = m.stages[static_cast<size_t>(i - 1)];
        StageGrad& g = grads.stages[static_cast<size_t>(i - 1)];
        const Vec& z = c.z[static_cast<size_t>(i - 1)];
        const Vec& u = c.u[static_cast<size_t>(i - 1)];
        Vec h = lrelu(z);
        const Vec& gy = g_y[static_cast<size_t>(i - 1)];

        g.w2 += gy * h.transpose();
        g.b2 += gy;
        Vec gh = st.w2.transpose() * gy;
        Vec gz = gh.cwiseProduct(z.unaryExpr([](double v) { return lrelu_grad(v); }));
        g.w1 += gz * u.transpose();
        g.b1 += gz;
        g.time_in += gz * c.e_t.transpose();
        g_e += st.time_in.transpose() * gz;

        Vec gu = st.w1.transpose() * gz;
        // split gu back into base input and skip features (assembly order)
        auto links = m.links_into(i);
        int base_width = static_cast<int>(u.size());
        for (const auto& link : links)
            base_width -= static_cast<int>(c.y[static_cast<size_t>(link.first - 1)].size());
        int at = base_width;
        for (const auto& link : links) {
            int w = static_cast<int>(c.y[static_cast<size_t>(link.first - 1)].size());
            g_y[static_cast<size_t>(link.first - 1)] += gu.segment(at, w);
            at += w;
        }
        if (i > 1) {
            g_y[static_cast<size_t>(i - 2)] += gu.head(base_width);
        } else {
            // stage 1 base input is concat(x, e_t); x takes no gradient
            int d = base_width - static_cast<int>(c.e_t.size());
            g_e += gu.segment(d, c.e_t.size());
        }
    }
    grads.proj += g_e * c.s_raw.transpose();
}

struct AdamState {
    Grads m1, m2;
    long long step = 0;
    explicit AdamState(const LayeredDenoiser& m) : m1(m), m2(m) {}
};

void adam_update_one(Mat& param, Mat& m1, Mat& m2, const Mat& g, double lr,
                     double bc1, double bc2) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    m1 = kBeta1 * m1 + (1.0 - kBeta1) * g;
    m2 = kBeta2 * m2 + (1.0 - kBeta2) * g.cwiseProduct(g);
    Mat mhat = m1 / bc1;
    Mat vhat = m2 / bc2;
    param -= lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + kEps).matrix());
}

void adam_update_vec(Vec& param, Vec& m1, Vec& m2, const Vec& g, double lr,
                     double bc1, double bc2) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    m1 = kBeta1 * m1 + (1.0 - kBeta1) * g;
    m2 = kBeta2 * m2 + (1.0 - kBeta2) * g.cwiseProduct(g);
    Vec mhat = m1 / bc1;
    Vec vhat = m2 / bc2;
    param -= lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + kEps).matrix());
}

void adam_step(LayeredDenoiser& m, AdamState& st, const Grads& g, double lr) {
    st.step += 1;
    double bc1 = 1.0 - std::pow(0.9, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(0.999, static_cast<double>(st.step));
    adam_update_one(m.time_embed.proj, st.m1.proj, st.m2.proj, g.proj, lr, bc1, bc2);
    for (size_t i = 0; i < m.stages.size(); ++i) {
        Stage& s = m.stages[i];
        StageGrad& a = st.m1.stages[i];
        StageGrad& b = st.m2.stages[i];
        const StageGrad& gi = g.stages[i];
        adam_update_one(s.w1, a.w1, b.w1, gi.w1, lr, bc1, bc2);
        adam_update_vec(s.b1, a.b1, b.b1, gi.b1, lr, bc1, bc2);
        adam_update_one(s.time_in, a.time_in, b.time_in, gi.time_in, lr, bc1, bc2);
        adam_update_one(s.w2, a.w2, b.w2, gi.w2, lr, bc1, bc2);
        adam_update_vec(s.b2, a.b2, b.b2, gi.b2, lr, bc1, bc2);
    }
}

}  // namespace

TrainResult train_toy(const LayeredDenoiser& m, const GaussianMixture& gm,
                      const NoiseSchedule& schedule, int steps, int batch,
                      double lr, uint64_t seed) {
    if (steps < 0) throw std::invalid_argument("train_toy: steps must be >= 0");
    if (batch < 1) throw std::invalid_argument("train_toy: batch must be >= 1");
    gm.validate();
    if (gm.dim() != m.data_dim())
        throw std::invalid_argument("train_toy: mixture dimension != model dimension");

    TrainResult res;
    res.model = m;
    if (steps == 0) return res;

    int d = m.data_dim();
    Rng rng(seed);
    AdamState adam(res.model);
    std::vector<Mat> chol;
    for (const Mat& c : gm.covariances) chol.push_back(Eigen::LLT<Mat>(c).matrixL());

    for (int step = 0; step < steps; ++step) {
        Grads grads(res.model);
        double loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            // x0 ~ gm
            double uc = rng.uniform();
            size_t k = 0;
            double acc = 0.0;
            for (; k < gm.weights.size(); ++k) {
                acc += gm.weights[k];
                if (uc < acc) break;
            }
            if (k == gm.weights.size()) k = gm.weights.size() - 1;
            Vec z(d);
            for (int j = 0; j < d; ++j) z[j] = rng.normal();
            Vec x0 = gm.means[k] + chol[k] * z;

            int t = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(schedule.T)));
            Vec noise(d);
            for (int j = 0; j < d; ++j) noise[j] = rng.normal();

            double abar = schedule.alpha_bar(t);
            Vec x_t = std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * noise;

            ForwardCache cache;
            Vec eps_hat = forward_cached(res.model, x_t, t, cache);
            Vec err = eps_hat - noise;
            loss += err.squaredNorm();
            backward(res.model, cache, 2.0 * err, grads);
        }
        loss /= static_cast<double>(batch);
        if (!std::isfinite(loss))
            throw std::runtime_error("train_toy: non-finite loss at step " +
                                     std::to_string(step));
        grads.scale(1.0 / static_cast<double>(batch));
        adam_step(res.model, adam, grads, lr);
        res.losses.push_back(loss);
    }
    return res;
}

}  // namespace asyncdiff
