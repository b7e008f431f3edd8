#pragma once

#include <cstdint>

#include "uqsr/loss.hpp"

namespace uqsr::serial {

// Straight-line single-threaded implementations of the parallel kernels.
// They are the testing reference: results must agree with the OpenMP paths
// to near roundoff (summation order differs, so agreement is ~1e-13
// relative, not bitwise).  Kept deliberately naive; do not optimize.

double supervised_nll(const ImageGrid& u, const ImageGrid& mean,
                      const ImageGrid& diag_variance);

double selfsup_nll_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                        const NoiseCovEstimate& r_hat);

ImageGrid grad_mean_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                         const NoiseCovEstimate& r_hat);

ImageGrid grad_variance_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                             const NoiseCovEstimate& r_hat);

double v_rmse(const ImageGrid& nu_hat, const ImageGrid& mean, const ImageGrid& u);

/// Pixels whose true value lies within half_width * sqrt(nu_hat) of the mean.
std::uint64_t coverage_count(const ImageGrid& u, const ImageGrid& mean,
                             const ImageGrid& nu_hat, double half_width);

}  // namespace uqsr::serial
