#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace asyncdiff {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Noisy sample at a given timestep. timestep 0 is the clean end of the chain.
struct Latent {
    Vec values;
    int timestep = 0;
};

enum class ScheduleKind { Linear, ScaledLinear };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

// Discrete-time noise schedule. Timesteps are 1-based: beta(t), alpha(t) for
// t in [1, T]; alpha_bar(t) for t in [0, T] with alpha_bar(0) = 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;       // betas[t-1] = beta_t
    std::vector<double> alphas;      // alphas[t-1] = 1 - beta_t
    std::vector<double> alpha_bars;  // alpha_bars[t], size T+1

    double beta(int t) const;
    double alpha(int t) const;
    double alpha_bar(int t) const;
};

NoiseSchedule build_schedule(int T, double beta_start, double beta_end,
                             ScheduleKind kind);

// Closed-form forward marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
Latent forward_diffuse(const Latent& x0, int t, const Vec& noise,
                       const NoiseSchedule& schedule);

// x0 estimate implied by (x_t, eps): (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)
Vec predict_x0(const Latent& x_t, const Vec& eps, int t,
               const NoiseSchedule& schedule);

// Deterministic reverse update: predict x0 from (x_t, eps), re-noise to
// level abar_{t-1} with the same eps.
Latent ddim_step(const Latent& x_t, const Vec& eps, int t,
                 const NoiseSchedule& schedule);

// Denoising record, ordered x_T down to x_0.
struct Trajectory {
    std::vector<Latent> latents;        // size T_active + 1
    std::vector<Vec> eps_used;          // size T_active
    std::vector<double> timestamps_s;   // optional per-step wall clock

    int steps() const { return static_cast<int>(eps_used.size()); }
    const Latent& final_latent() const { return latents.back(); }
};

using EpsFn = std::function<Vec(const Latent&, int t)>;

// Ground-truth sequential sampler: eps_fn + ddim_step for t = T..1.
Trajectory sequential_denoise(const EpsFn& eps_fn, const Latent& x_T,
                              const NoiseSchedule& schedule);

}  // namespace asyncdiff
