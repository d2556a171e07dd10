#include "asyncdiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace asyncdiff {

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "scaled-linear") return ScheduleKind::ScaledLinear;
    throw std::invalid_argument("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::Linear ? "linear" : "scaled-linear";
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > T)
        throw std::out_of_range("beta: t=" + std::to_string(t) +
                                " outside [1, " + std::to_string(T) + "]");
    return betas[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const {
    if (t < 1 || t > T)
        throw std::out_of_range("alpha: t=" + std::to_string(t) +
                                " outside [1, " + std::to_string(T) + "]");
    return alphas[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > T)
        throw std::out_of_range("alpha_bar: t=" + std::to_string(t) +
                                " outside [0, " + std::to_string(T) + "]");
    return alpha_bars[static_cast<size_t>(t)];
}

NoiseSchedule build_schedule(int T, double beta_start, double beta_end,
                             ScheduleKind kind) {
    if (T < 1)
        throw std::invalid_argument("build_schedule: T must be >= 1, got " +
                                    std::to_string(T));
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw std::invalid_argument(
            "build_schedule: need 0 < beta_start <= beta_end < 1, got "
            "beta_start=" + std::to_string(beta_start) +
            " beta_end=" + std::to_string(beta_end));

    NoiseSchedule s;
    s.T = T;
    s.betas.resize(static_cast<size_t>(T));
    if (T == 1) {
        s.betas[0] = beta_start;
    } else {
        for (int t = 1; t <= T; ++t) {
            double frac = static_cast<double>(t - 1) / static_cast<double>(T - 1);
            if (kind == ScheduleKind::Linear) {
                s.betas[static_cast<size_t>(t - 1)] =
                    beta_start + frac * (beta_end - beta_start);
            } else {
                double r = std::sqrt(beta_start) +
                           frac * (std::sqrt(beta_end) - std::sqrt(beta_start));
                s.betas[static_cast<size_t>(t - 1)] = r * r;
            }
        }
    }
    s.alphas.resize(static_cast<size_t>(T));
    s.alpha_bars.resize(static_cast<size_t>(T) + 1);
    s.alpha_bars[0] = 1.0;
    for (int t = 1; t <= T; ++t) {
        s.alphas[static_cast<size_t>(t - 1)] = 1.0 - s.betas[static_cast<size_t>(t - 1)];
        s.alpha_bars[static_cast<size_t>(t)] =
            s.alpha_bars[static_cast<size_t>(t - 1)] * s.alphas[static_cast<size_t>(t - 1)];
    }
    return s;
}

Latent forward_diffuse(const Latent& x0, int t, const Vec& noise,
                       const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.T)
        throw std::out_of_range("forward_diffuse: t=" + std::to_string(t) +
                                " outside [1, " + std::to_string(schedule.T) + "]");
    if (noise.size() != x0.values.size())
        throw std::invalid_argument("forward_diffuse: noise dimension " +
                                    std::to_string(noise.size()) + " != x0 dimension " +
                                    std::to_string(x0.values.size()));
    double abar = schedule.alpha_bar(t);
    Latent out;
    out.values = std::sqrt(abar) * x0.values + std::sqrt(1.0 - abar) * noise;
    out.timestep = t;
    return out;
}

Vec predict_x0(const Latent& x_t, const Vec& eps, int t,
               const NoiseSchedule& schedule) {
    if (t < 1 || t > schedule.T)
        throw std::out_of_range("predict_x0: t=" + std::to_string(t) +
                                " outside [1, " + std::to_string(schedule.T) + "]");
    if (eps.size() != x_t.values.size())
        throw std::invalid_argument("predict_x0: eps dimension mismatch");
    if (!eps.allFinite())
        throw std::domain_error("predict_x0: non-finite eps at t=" + std::to_string(t));
    double abar_t = schedule.alpha_bar(t);
    return (x_t.values - std::sqrt(1.0 - abar_t) * eps) / std::sqrt(abar_t);
}

Latent ddim_step(const Latent& x_t, const Vec& eps, int t,
                 const NoiseSchedule& schedule) {
    Vec x0_pred = predict_x0(x_t, eps, t, schedule);
    double abar_prev = schedule.alpha_bar(t - 1);
    Latent out;
    out.values = std::sqrt(abar_prev) * x0_pred + std::sqrt(1.0 - abar_prev) * eps;
    out.timestep = t - 1;
    return out;
}

Trajectory sequential_denoise(const EpsFn& eps_fn, const Latent& x_T,
                              const NoiseSchedule& schedule) {
    if (x_T.timestep != schedule.T)
        throw std::invalid_argument("sequential_denoise: x_T.timestep=" +
                                    std::to_string(x_T.timestep) + " != T=" +
                                    std::to_string(schedule.T));
    Trajectory traj;
    traj.latents.reserve(static_cast<size_t>(schedule.T) + 1);
    traj.eps_used.reserve(static_cast<size_t>(schedule.T));
    traj.latents.push_back(x_T);
    Latent x = x_T;
    for (int t = schedule.T; t >= 1; --t) {
        Vec eps;
        try {
            eps = eps_fn(x, t);
        } catch (const std::exception& e) {
            throw std::runtime_error("sequential_denoise: eps_fn failed at t=" +
                                     std::to_string(t) + ": " + e.what());
        }
        x = ddim_step(x, eps, t, schedule);
        traj.eps_used.push_back(std::move(eps));
        traj.latents.push_back(x);
    }
    return traj;
}

}  // namespace asyncdiff
