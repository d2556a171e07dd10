#pragma once

#include "asyncdiff/diffusion.hpp"

#include <vector>

namespace asyncdiff {

// Gaussian mixture over R^d; the synthetic data distribution. Serves as the
// analytic ground truth for the exact noise predictor and quality metrics.
struct GaussianMixture {
    std::vector<double> weights;  // simplex
    std::vector<Vec> means;
    std::vector<Mat> covariances;  // symmetric positive definite

    int components() const { return static_cast<int>(weights.size()); }
    int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }

    // throws std::invalid_argument if any mixture invariant is broken
    void validate() const;

    Vec mean() const;
    Mat covariance() const;
    double log_pdf(const Vec& x) const;
};

GaussianMixture isotropic_mixture(const std::vector<double>& weights,
                                  const std::vector<Vec>& means, double sigma2);

// Exact posterior-mean noise predictor for the mixture under the forward
// marginal at timestep t: eps*(x,t) = (x - sqrt(abar_t) E[x0 | x_t=x]) / sqrt(1-abar_t).
Vec analytic_eps(const GaussianMixture& gm, const Latent& x, int t,
                 const NoiseSchedule& schedule);

// E[x0 | x_t = x] under the forward marginal; exposed for testing against quadrature.
Vec posterior_mean_x0(const GaussianMixture& gm, const Vec& x, double alpha_bar_t);

// Deterministic sampling; n rows of dimension d.
std::vector<Vec> gm_sample(const GaussianMixture& gm, int n, uint64_t seed);

}  // namespace asyncdiff
