#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "uqsr/grid.hpp"

namespace uqsr {

/// Nominal vs empirical coverage of central prediction intervals
/// mean_k +- q(alpha) sqrt(nu_hat_k).
struct CoverageCurve {
    std::vector<double> nominal_levels;    // strictly increasing, in (0,1)
    std::vector<double> empirical_levels;  // fractions of pixels inside, in [0,1]

    void validate() const;
};

/// The default interval levels: 19 equispaced alphas 0.05, 0.10, ..., 0.95.
std::vector<double> default_levels();

/// Peak signal-to-noise ratio 10 log10(peak^2 / MSE) in dB; +infinity when
/// the images are identical.
double psnr(const ImageGrid& ref, const ImageGrid& test, double peak = 1.0);

/// Root mean squared error between two rasters.
double rmse(const ImageGrid& ref, const ImageGrid& test);

/// Quality of the variance estimate: RMS deviation of nu_hat from the
/// realized squared error, sqrt(mean_k (nu_hat_k - (mean_k - u_k)^2)^2).
double v_rmse(const ImageGrid& nu_hat, const ImageGrid& mean, const ImageGrid& u);

/// Fraction of pixels whose true value falls inside the predicted central
/// interval, per level.
CoverageCurve coverage(const ImageGrid& u, const ImageGrid& mean, const ImageGrid& nu_hat,
                       const std::vector<double>& levels = default_levels());

/// Mean absolute deviation between nominal and empirical coverage.  (The
/// same quantity is labeled both CE and ECE in common usage.)
double calibration_error(const CoverageCurve& curve);

/// Average length of the central alpha-intervals: mean_k 2 q(alpha)
/// sqrt(nu_hat_k).
double sharpness(const ImageGrid& nu_hat, double alpha = 0.9);

/// Streaming coverage over many instances.  Integer inside-counts make the
/// dataset-level aggregate exact and independent of instance order.
class CoverageAccumulator {
  public:
    explicit CoverageAccumulator(std::vector<double> levels = default_levels());

    void add(const ImageGrid& u, const ImageGrid& mean, const ImageGrid& nu_hat);
    CoverageCurve curve() const;
    std::uint64_t pixels() const { return pixels_; }

  private:
    std::vector<double> levels_;
    std::vector<double> half_widths_;  // q(alpha) per level
    std::vector<std::uint64_t> inside_;
    std::uint64_t pixels_ = 0;
};

/// Evaluates a pixelwise metric restricted to each of the four x2 phases,
/// extracting the same subgrid from every input raster.  Indexed by
/// SubgridId::index(): (0,0), (0,1), (1,0), (1,1).
template <class Metric, class... Grids>
std::array<double, 4> per_subgrid(Metric&& metric, const Grids&... grids) {
    std::array<double, 4> out{};
    for (const SubgridId tau : SubgridId::all())
        out[static_cast<std::size_t>(tau.index())] = metric(subgrid_extract(grids, tau)...);
    return out;
}

}  // namespace uqsr
