#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "uqsr/degrade.hpp"
#include "uqsr/grid.hpp"

namespace uqsr {

/// Gaussian prior over a high-resolution raster, with a dense covariance.
/// Dense algebra caps the raster at kDenseCap pixels; this is an oracle for
/// small instances, not a production prior.
struct GaussianPrior {
    ImageGrid mean;
    DenseMatrix cov;

    static constexpr int kDenseCap = 4096;

    GaussianPrior() = default;
    GaussianPrior(ImageGrid mean_in, DenseMatrix cov_in);
    /// Diagonal shorthand: independent pixels with the given variances.
    static GaussianPrior diagonal(ImageGrid mean_in, const ImageGrid& variance);

    /// Shape and size checks.  Definiteness is certified later, by the
    /// factorization that every conditioning operation performs.
    void validate() const;
};

/// Squared-exponential covariance on a periodic grid: entry (p, q) is
/// variance * exp(-d(p,q)^2 / (2 length^2)) with d the wrap-around pixel
/// distance, plus nugget * variance on the diagonal to keep the matrix
/// comfortably positive definite.  Stationary by construction.
DenseMatrix periodic_rbf_covariance(int height, int width, double variance, double length,
                                    double nugget = 1e-6);

/// Mixture of Gaussian priors.  Weights are non-negative and sum to one;
/// zero-weight components are allowed (and skipped during conditioning).
struct GmmPrior {
    std::vector<double> weights;
    std::vector<GaussianPrior> components;

    void validate() const;
};

/// One low-resolution observation: a selection operator, the observed values,
/// and the per-pixel noise variance.  Integer-shift operators keep the
/// conditioning exact; sub-pixel warps would entangle the oracle with the
/// interpolation kernel, so they are deliberately not representable here.
struct Observation {
    ShiftSubsampleOp op;
    ImageGrid values;
    ImageGrid noise_diag;
};

/// Exact first and second posterior moments.
struct PosteriorSummary {
    ImageGrid mean;    // E[u | v]
    DenseMatrix cov;   // Cov(u | v), symmetric PSD
    ImageGrid diag;    // diagonal of cov, as a raster
};

/// Conditions a Gaussian prior on noisy linear observations.  The posterior
/// is Gaussian with precision Sigma0^{-1} + sum_t A_t^T R_t^{-1} A_t; the
/// selection structure of A_t makes the data term diagonal, so the update
/// costs one factorization of the prior and one of the posterior precision.
PosteriorSummary gaussian_posterior(const GaussianPrior& prior,
                                    const std::vector<Observation>& observations);

/// Log marginal likelihood of the stacked observations under the prior:
/// v ~ Normal(A mu0, A Sigma0 A^T + R), constant included.  Zero for an
/// empty observation set.
double log_evidence(const GaussianPrior& prior, const std::vector<Observation>& observations);

/// Conditions a Gaussian mixture: component posteriors are re-weighted by
/// their marginal evidence (computed in the log domain with max-subtraction),
/// and the returned covariance includes the between-component spread via the
/// law of total variance.  The summary is the exact mean/covariance of the
/// (non-Gaussian) mixture posterior.
PosteriorSummary gmm_posterior(const GmmPrior& prior,
                               const std::vector<Observation>& observations);

/// Draws one prior sample per key; must be a pure deterministic function of
/// the key and must not throw once constructed.  Distinct keys give
/// statistically independent draws.
using SampleFn = std::function<ImageGrid(std::uint64_t)>;

/// Sampler for a Gaussian prior: mean + L xi with L the Cholesky factor.
SampleFn prior_sampler(const GaussianPrior& prior);
/// Sampler for a mixture prior: picks a component by weight, then samples it.
SampleFn prior_sampler(const GmmPrior& prior);

/// Self-normalized importance estimate of the posterior moments with the
/// prior as proposal.
struct McPosterior {
    PosteriorSummary summary;
    ImageGrid mean_se;      // delta-method standard error of each mean pixel
    double ess = 0.0;       // effective sample size (sum w)^2 / sum w^2
    bool reliable = false;  // ess >= kMinEss
};

/// Brute-force posterior moments: draw n_samples prior samples, weight each
/// by the observation likelihood, and form weighted moments.  Deterministic
/// per (seed, n_samples) at any thread count.  Requires n_samples >= 1000;
/// an effective sample size below kMinEss clears `reliable` but still
/// returns the estimate.  Zero observation noise is rejected up front (the
/// likelihood degenerates), which is this oracle's documented limitation.
inline constexpr double kMinEss = 50.0;
McPosterior mc_posterior(const SampleFn& sample, const std::vector<Observation>& observations,
                         std::int64_t n_samples, std::uint64_t seed);

}  // namespace uqsr
