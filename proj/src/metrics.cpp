#include "asyncdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace asyncdiff {

DivergenceReport compare_trajectories(const Trajectory& seq,
                                      const Trajectory& async_traj) {
    if (seq.latents.size() != async_traj.latents.size())
        throw std::invalid_argument("compare_trajectories: length mismatch (" +
                                    std::to_string(seq.latents.size()) + " vs " +
                                    std::to_string(async_traj.latents.size()) + ")");
    DivergenceReport rep;
    for (size_t i = 0; i < seq.latents.size(); ++i) {
        const Vec& a = seq.latents[i].values;
        const Vec& b = async_traj.latents[i].values;
        if (a.size() != b.size())
            throw std::invalid_argument("compare_trajectories: dimension mismatch at step " +
                                        std::to_string(i));
        rep.per_step_mse.push_back((a - b).squaredNorm() /
                                   static_cast<double>(a.size()));
    }
    rep.final_mse = rep.per_step_mse.back();
    rep.final_max_abs = (seq.latents.back().values - async_traj.latents.back().values)
                            .cwiseAbs()
                            .maxCoeff();
    return rep;
}

namespace {

double cosine(const Vec& a, const Vec& b) {
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return (a - b).norm() == 0.0 ? 1.0 : 0.0;
    return a.dot(b) / (na * nb);
}

double rel_l2(const Vec& a, const Vec& b) {
    double denom = std::max(a.norm(), b.norm());
    if (denom == 0.0) return 0.0;
    return (a - b).norm() / denom;
}

// boundary activations of segments 1..N-1 for one (x, t), fresh chaining
std::vector<Vec> boundaries_at(const LayeredDenoiser& m, const Partition& p,
                               const Latent& x, int t) {
    int N = p.num_segments();
    std::vector<Vec> out;
    SkipMap skips;
    SegmentOutput so = eval_segment(m, p, 1, x, skips, t);
    for (int seg = 2; seg <= N; ++seg) {
        const HiddenBundle& b = std::get<HiddenBundle>(so);
        out.push_back(b.boundary);
        for (const auto& [link, f] : b.skips) skips[link] = f;
        so = eval_segment(m, p, seg, b, skips, t);
    }
    return out;
}

}  // namespace

double SimilarityProfile::median_cosine() const {
    std::vector<double> all;
    for (const auto& row : cosine) all.insert(all.end(), row.begin(), row.end());
    if (all.empty()) return 1.0;
    std::sort(all.begin(), all.end());
    size_t n = all.size();
    return n % 2 ? all[n / 2] : 0.5 * (all[n / 2 - 1] + all[n / 2]);
}

SimilarityProfile similarity_profile(const LayeredDenoiser& m, const Partition& p,
                                     const Trajectory& trajectory,
                                     const NoiseSchedule& schedule) {
    (void)schedule;
    int N = p.num_segments();
    SimilarityProfile prof;
    prof.cosine.assign(static_cast<size_t>(std::max(0, N - 1)), {});
    prof.rel_l2.assign(static_cast<size_t>(std::max(0, N - 1)), {});
    if (trajectory.latents.size() < 3 || N < 2) return prof;

    // evaluate at every latent that has a timestep >= 1
    std::vector<std::vector<Vec>> per_step;
    std::vector<int> ts;
    for (const Latent& x : trajectory.latents) {
        if (x.timestep < 1) break;
        per_step.push_back(boundaries_at(m, p, x, x.timestep));
        ts.push_back(x.timestep);
    }
    for (size_t i = 0; i + 1 < per_step.size(); ++i) {
        prof.pair_t.push_back(ts[i]);
        for (int b = 0; b < N - 1; ++b) {
            prof.cosine[static_cast<size_t>(b)].push_back(
                cosine(per_step[i][static_cast<size_t>(b)], per_step[i + 1][static_cast<size_t>(b)]));
            prof.rel_l2[static_cast<size_t>(b)].push_back(
                rel_l2(per_step[i][static_cast<size_t>(b)], per_step[i + 1][static_cast<size_t>(b)]));
        }
    }
    return prof;
}

QualityReport sample_quality(const std::vector<Vec>& samples,
                             const GaussianMixture& gm) {
    if (samples.size() < 2)
        throw std::invalid_argument("sample_quality: need at least 2 samples");
    gm.validate();
    int d = gm.dim();
    for (const Vec& s : samples)
        if (s.size() != d)
            throw std::invalid_argument("sample_quality: sample dimension mismatch");

    double n = static_cast<double>(samples.size());
    Vec mean = Vec::Zero(d);
    for (const Vec& s : samples) mean += s;
    mean /= n;

    Mat cov = Mat::Zero(d, d);
    for (const Vec& s : samples) {
        Vec c = s - mean;
        cov += c * c.transpose();
    }
    cov /= n;

    QualityReport rep;
    rep.mean_error = (mean - gm.mean()).norm();
    if (cov.allFinite())
        rep.cov_error = (cov - gm.covariance()).norm();  // Frobenius

    double nll = 0.0;
    for (const Vec& s : samples) nll -= gm.log_pdf(s);
    rep.avg_nll = nll / n;
    return rep;
}

}  // namespace asyncdiff
