#include "asyncdiff/mixture.hpp"

#include "asyncdiff/rng.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <stdexcept>

namespace asyncdiff {

namespace {

double log_gaussian(const Vec& x, const Vec& mean, const Mat& cov) {
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("log_gaussian: covariance not positive definite");
    Vec diff = x - mean;
    Vec y = llt.matrixL().solve(diff);
    double log_det = 0.0;
    for (int i = 0; i < cov.rows(); ++i)
        log_det += 2.0 * std::log(llt.matrixL()(i, i));
    double d = static_cast<double>(x.size());
    return -0.5 * (d * std::log(2.0 * M_PI) + log_det + y.squaredNorm());
}

}  // namespace

void GaussianMixture::validate() const {
    if (weights.empty())
        throw std::invalid_argument("GaussianMixture: no components");
    if (means.size() != weights.size() || covariances.size() != weights.size())
        throw std::invalid_argument("GaussianMixture: weights/means/covariances size mismatch");
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("GaussianMixture: negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("GaussianMixture: weights sum to " +
                                    std::to_string(sum) + ", expected 1");
    int d = dim();
    for (size_t k = 0; k < weights.size(); ++k) {
        if (means[k].size() != d)
            throw std::invalid_argument("GaussianMixture: mean dimension mismatch");
        const Mat& c = covariances[k];
        if (c.rows() != d || c.cols() != d)
            throw std::invalid_argument("GaussianMixture: covariance shape mismatch");
        if (!c.isApprox(c.transpose(), 1e-12))
            throw std::invalid_argument("GaussianMixture: covariance not symmetric");
        Eigen::LLT<Mat> llt(c);
        if (llt.info() != Eigen::Success)
            throw std::invalid_argument("GaussianMixture: covariance not positive definite");
    }
}

Vec GaussianMixture::mean() const {
    Vec m = Vec::Zero(dim());
    for (size_t k = 0; k < weights.size(); ++k) m += weights[k] * means[k];
    return m;
}

Mat GaussianMixture::covariance() const {
    Vec m = mean();
    Mat c = Mat::Zero(dim(), dim());
    for (size_t k = 0; k < weights.size(); ++k) {
        Vec d = means[k] - m;
        c += weights[k] * (covariances[k] + d * d.transpose());
    }
    return c;
}

double GaussianMixture::log_pdf(const Vec& x) const {
    // log-sum-exp over components
    double max_term = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(weights.size());
    for (size_t k = 0; k < weights.size(); ++k) {
        terms[k] = std::log(weights[k]) + log_gaussian(x, means[k], covariances[k]);
        max_term = std::max(max_term, terms[k]);
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - max_term);
    return max_term + std::log(acc);
}

GaussianMixture isotropic_mixture(const std::vector<double>& weights,
                                  const std::vector<Vec>& means, double sigma2) {
    GaussianMixture gm;
    gm.weights = weights;
    gm.means = means;
    for (const Vec& m : means)
        gm.covariances.push_back(sigma2 * Mat::Identity(m.size(), m.size()));
    gm.validate();
    return gm;
}

Vec posterior_mean_x0(const GaussianMixture& gm, const Vec& x, double abar) {
    int d = static_cast<int>(x.size());
    double root_abar = std::sqrt(abar);
    Mat noise_cov = (1.0 - abar) * Mat::Identity(d, d);

    // responsibilities under the marginal x_t ~ sum_k w_k N(sqrt(abar) mu_k,
    // abar Sigma_k + (1-abar) I), then per-component conditional means
    std::vector<double> log_resp(gm.weights.size());
    std::vector<Vec> cond_mean(gm.weights.size());
    double max_lr = -std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < gm.weights.size(); ++k) {
        Mat marg_cov = abar * gm.covariances[k] + noise_cov;
        Vec marg_mean = root_abar * gm.means[k];
        log_resp[k] = std::log(gm.weights[k]) + log_gaussian(x, marg_mean, marg_cov);
        max_lr = std::max(max_lr, log_resp[k]);

        // E[x0 | x_t, k] = mu_k + sqrt(abar) Sigma_k S_k^{-1} (x - sqrt(abar) mu_k)
        Eigen::LLT<Mat> llt(marg_cov);
        Vec adj = llt.solve(x - marg_mean);
        cond_mean[k] = gm.means[k] + root_abar * (gm.covariances[k] * adj);
    }
    double norm = 0.0;
    for (double lr : log_resp) norm += std::exp(lr - max_lr);
    Vec m = Vec::Zero(d);
    for (size_t k = 0; k < gm.weights.size(); ++k)
        m += (std::exp(log_resp[k] - max_lr) / norm) * cond_mean[k];
    return m;
}

Vec analytic_eps(const GaussianMixture& gm, const Latent& x, int t,
                 const NoiseSchedule& schedule) {
    gm.validate();
    if (t < 1 || t > schedule.T)
        throw std::out_of_range("analytic_eps: t=" + std::to_string(t) +
                                " outside [1, " + std::to_string(schedule.T) + "]");
    if (x.values.size() != gm.dim())
        throw std::invalid_argument("analytic_eps: latent dimension mismatch");
    double abar = schedule.alpha_bar(t);
    if (abar >= 1.0)
        throw std::domain_error("analytic_eps: alpha_bar(t) = 1, noise level is zero");
    Vec m = posterior_mean_x0(gm, x.values, abar);
    return (x.values - std::sqrt(abar) * m) / std::sqrt(1.0 - abar);
}

std::vector<Vec> gm_sample(const GaussianMixture& gm, int n, uint64_t seed) {
    gm.validate();
    if (n < 1) throw std::invalid_argument("gm_sample: n must be >= 1");
    int d = gm.dim();

    std::vector<Mat> chol;
    chol.reserve(gm.covariances.size());
    for (const Mat& c : gm.covariances)
        chol.push_back(Eigen::LLT<Mat>(c).matrixL());

    Rng rng(seed);
    std::vector<Vec> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        size_t k = 0;
        double acc = 0.0;
        for (; k < gm.weights.size(); ++k) {
            acc += gm.weights[k];
            if (u < acc) break;
        }
        if (k == gm.weights.size()) k = gm.weights.size() - 1;
        Vec z(d);
        for (int j = 0; j < d; ++j) z[j] = rng.normal();
        out.push_back(gm.means[k] + chol[k] * z);
    }
    return out;
}

}  // namespace asyncdiff
