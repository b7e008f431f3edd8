#include "uqsr/serial_ref.hpp"

#include <cmath>

namespace uqsr::serial {

namespace {

double floored(double v) {
    if (!(v > 0.0)) throw ValueError("serial loss: non-positive variance");
    return v > 1e-12 ? v : 1e-12;
}

}  // namespace

double supervised_nll(const ImageGrid& u, const ImageGrid& mean,
                      const ImageGrid& diag_variance) {
    if (!u.same_shape(mean) || !u.same_shape(diag_variance))
        throw ShapeError("serial supervised_nll: extents mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double v = floored(diag_variance.data[i]);
        const double r = u.data[i] - mean.data[i];
        loss += r * r / (2.0 * v) + 0.5 * std::log(v);
    }
    return loss;
}

double selfsup_nll_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                        const NoiseCovEstimate& r_hat) {
    double loss = 0.0;
    for (int r = 0; r < z.height; ++r)
        for (int c = 0; c < z.width; ++c) {
            const std::size_t k = subgrid_hr_index(r, c, tau, est.mean.width);
            const double d = floored(est.diag_variance.data[k]) + floored(r_hat.diag.at(r, c));
            const double res = z.at(r, c) - est.mean.data[k];
            loss += res * res / (2.0 * d) + 0.5 * std::log(d);
        }
    return loss;
}

ImageGrid grad_mean_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                         const NoiseCovEstimate& r_hat) {
    ImageGrid grad(est.mean.height, est.mean.width, 0.0);
    for (int r = 0; r < z.height; ++r)
        for (int c = 0; c < z.width; ++c) {
            const std::size_t k = subgrid_hr_index(r, c, tau, est.mean.width);
            const double d = floored(est.diag_variance.data[k]) + floored(r_hat.diag.at(r, c));
            grad.data[k] = (est.mean.data[k] - z.at(r, c)) / d;
        }
    return grad;
}

ImageGrid grad_variance_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                             const NoiseCovEstimate& r_hat) {
    ImageGrid grad(est.mean.height, est.mean.width, 0.0);
    for (int r = 0; r < z.height; ++r)
        for (int c = 0; c < z.width; ++c) {
            const std::size_t k = subgrid_hr_index(r, c, tau, est.mean.width);
            const double d = floored(est.diag_variance.data[k]) + floored(r_hat.diag.at(r, c));
            const double res = z.at(r, c) - est.mean.data[k];
            grad.data[k] = 0.5 * (1.0 / d - res * res / (d * d));
        }
    return grad;
}

double v_rmse(const ImageGrid& nu_hat, const ImageGrid& mean, const ImageGrid& u) {
    if (!nu_hat.same_shape(mean) || !nu_hat.same_shape(u))
        throw ShapeError("serial v_rmse: extents mismatch");
    double ms = 0.0;
    for (std::size_t k = 0; k < nu_hat.size(); ++k) {
        const double e = mean.data[k] - u.data[k];
        const double d = nu_hat.data[k] - e * e;
        ms += d * d;
    }
    return std::sqrt(ms / static_cast<double>(nu_hat.size()));
}

std::uint64_t coverage_count(const ImageGrid& u, const ImageGrid& mean,
                             const ImageGrid& nu_hat, double half_width) {
    if (!u.same_shape(mean) || !u.same_shape(nu_hat))
        throw ShapeError("serial coverage_count: extents mismatch");
    std::uint64_t inside = 0;
    for (std::size_t k = 0; k < u.size(); ++k)
        if (std::abs(u.data[k] - mean.data[k]) <= half_width * std::sqrt(nu_hat.data[k]))
            ++inside;
    return inside;
}

}  // namespace uqsr::serial
