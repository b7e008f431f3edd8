#pragma once

#include "uqsr/degrade.hpp"
#include "uqsr/grid.hpp"

namespace uqsr {

/// Reconstruction estimate: a high-resolution mean with either a per-pixel
/// variance raster or a full covariance held as its lower Cholesky factor.
struct EstimatorState {
    enum class VarianceMode { kDiagonal, kFull };

    ImageGrid mean;                 // 2H x 2W
    VarianceMode variance_mode = VarianceMode::kDiagonal;
    ImageGrid diag_variance;        // iff diagonal; entries >= 1e-12
    DenseMatrix cov_factor;         // iff full; lower-triangular, diagonal >= 1e-8

    static constexpr double kDiagFloor = 1e-12;
    static constexpr double kFactorFloor = 1e-8;
    /// Dense covariance objects are only materialized up to this many
    /// high-resolution pixels.
    static constexpr std::size_t kDenseCap = 4096;

    /// Builds a diagonal-covariance state; variances are clamped at the floor.
    static EstimatorState diagonal(ImageGrid mean, ImageGrid variance);
    /// Builds a full-covariance state from a lower-triangular factor whose
    /// diagonal is clamped at the floor.
    static EstimatorState full(ImageGrid mean, DenseMatrix factor);

    void validate() const;
};

/// Diagonal of the estimated observation-noise covariance for one subgrid.
struct NoiseCovEstimate {
    ImageGrid diag;  // H x W, entries >= 1e-12
};

/// Plug-in noise covariance: diag(a * A_tau mean + b), clamped positive.
NoiseCovEstimate estimate_noise_cov(const ImageGrid& mean, SubgridId tau,
                                    const NoiseModel& model);

/// Reference-supervised negative log likelihood (constant dim*ln(2pi)/2
/// omitted throughout):  sum_i (u_i - mean_i)^2 / (2 v_i) + ln(v_i)/2.
double supervised_nll(const ImageGrid& u, const ImageGrid& mean, const ImageGrid& diag_variance);

/// Self-supervised negative log likelihood against a reference frame z
/// observed on subgrid tau.  With d_l = variance at the sampled pixel plus
/// r_hat_l and residual r_l = z_l - (A_tau mean)_l:
///   sum_l r_l^2 / (2 d_l) + ln(d_l)/2.
double selfsup_nll_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                        const NoiseCovEstimate& r_hat);

/// Full-covariance form: r^T M r / 2 + logdet(M^{-1}) / 2 where
/// M^{-1} = A_tau Sigma A_tau^T + diag(r_hat) and Sigma = L L^T.
double selfsup_nll_full(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                        const NoiseCovEstimate& r_hat);

/// d loss / d mean for the diagonal path: the low-resolution residual scaled
/// by 1/d, embedded on subgrid tau (zero on the other three subgrids).
ImageGrid grad_mean_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                         const NoiseCovEstimate& r_hat);

/// d loss / d variance for the diagonal path: (1/d - r^2/d^2)/2 per sampled
/// pixel, embedded on subgrid tau.
ImageGrid grad_variance_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                             const NoiseCovEstimate& r_hat);

struct FullGradient {
    ImageGrid mean_grad;       // 2H x 2W
    DenseMatrix factor_grad;   // lower triangle of (dL/dSigma + dL/dSigma^T) L
};

/// Gradients of selfsup_nll_full with respect to the mean and the Cholesky
/// factor of Sigma.
FullGradient grad_full(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                       const NoiseCovEstimate& r_hat);

/// The observed covariance M^{-1} = A_tau Sigma A_tau^T + diag(r_hat) of a
/// full estimator, materialized in low-resolution space (one row per pixel of
/// the subsampled grid) without ever forming Sigma itself.
DenseMatrix observed_cov_dense(const EstimatorState& est, SubgridId tau,
                               const NoiseCovEstimate& r_hat);

}  // namespace uqsr
