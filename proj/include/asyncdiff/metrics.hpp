#pragma once

#include "asyncdiff/denoiser.hpp"
#include "asyncdiff/diffusion.hpp"
#include "asyncdiff/mixture.hpp"
#include "asyncdiff/partition.hpp"

#include <optional>
#include <vector>

namespace asyncdiff {

struct DivergenceReport {
    std::vector<double> per_step_mse;  // aligned by timestep, x_T first
    double final_mse = 0.0;            // at x_0
    double final_max_abs = 0.0;
};

DivergenceReport compare_trajectories(const Trajectory& seq, const Trajectory& async_traj);

// Adjacent-step similarity of inter-segment boundary activations along a
// sequential trajectory; the observation the async approximation relies on.
struct SimilarityProfile {
    std::vector<int> pair_t;                  // t of the earlier step in each pair
    std::vector<std::vector<double>> cosine;  // [boundary][pair], boundary 0 = seg 1|2
    std::vector<std::vector<double>> rel_l2;

    double median_cosine() const;
};

SimilarityProfile similarity_profile(const LayeredDenoiser& m, const Partition& p,
                                     const Trajectory& trajectory,
                                     const NoiseSchedule& schedule);

struct QualityReport {
    double mean_error = 0.0;
    std::optional<double> cov_error;  // omitted when degenerate
    double avg_nll = 0.0;
};

QualityReport sample_quality(const std::vector<Vec>& samples, const GaussianMixture& gm);

}  // namespace asyncdiff
