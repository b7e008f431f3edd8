#include "uqsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "uqsr/errors.hpp"
#include "uqsr/par.hpp"
#include "uqsr/rng.hpp"

namespace uqsr {

namespace {

void check_same_shape(const ImageGrid& a, const ImageGrid& b, const char* who) {
    if (!a.same_shape(b)) throw ShapeError(std::string(who) + ": raster extents differ");
    if (a.height <= 0 || a.width <= 0)
        throw ShapeError(std::string(who) + ": rasters must be non-empty");
}

void check_variances(const ImageGrid& nu_hat, const char* who) {
    for (double v : nu_hat.data)
        if (!(v > 0.0)) throw ValueError(std::string(who) + ": variances must be positive");
}

}  // namespace

void CoverageCurve::validate() const {
    if (nominal_levels.empty()) throw ValueError("CoverageCurve: needs at least one level");
    if (nominal_levels.size() != empirical_levels.size())
        throw ValueError("CoverageCurve: one empirical level per nominal level");
    double prev = 0.0;
    for (double p : nominal_levels) {
        if (!(p > prev && p < 1.0))
            throw ValueError("CoverageCurve: nominal levels must increase within (0,1)");
        prev = p;
    }
    for (double p : empirical_levels)
        if (!(p >= 0.0 && p <= 1.0))
            throw ValueError("CoverageCurve: empirical levels must lie in [0,1]");
}

std::vector<double> default_levels() {
    std::vector<double> levels(19);
    for (int j = 0; j < 19; ++j) levels[static_cast<std::size_t>(j)] = 0.05 * (j + 1);
    return levels;
}

double psnr(const ImageGrid& ref, const ImageGrid& test, double peak) {
    check_same_shape(ref, test, "psnr");
    if (!(peak > 0.0)) throw ValueError("psnr: peak must be positive");
    const double mse = par::sum(ref.size(), [&](std::size_t k) {
                           const double e = ref.data[k] - test.data[k];
                           return e * e;
                       }) /
                       static_cast<double>(ref.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

double rmse(const ImageGrid& ref, const ImageGrid& test) {
    check_same_shape(ref, test, "rmse");
    const double mse = par::sum(ref.size(), [&](std::size_t k) {
                           const double e = ref.data[k] - test.data[k];
                           return e * e;
                       }) /
                       static_cast<double>(ref.size());
    return std::sqrt(mse);
}

double v_rmse(const ImageGrid& nu_hat, const ImageGrid& mean, const ImageGrid& u) {
    check_same_shape(nu_hat, mean, "v_rmse");
    check_same_shape(nu_hat, u, "v_rmse");
    const double ms = par::sum(nu_hat.size(), [&](std::size_t k) {
                          const double e = mean.data[k] - u.data[k];
                          const double d = nu_hat.data[k] - e * e;
                          return d * d;
                      }) /
                      static_cast<double>(nu_hat.size());
    return std::sqrt(ms);
}

CoverageCurve coverage(const ImageGrid& u, const ImageGrid& mean, const ImageGrid& nu_hat,
                       const std::vector<double>& levels) {
    CoverageAccumulator acc(levels);
    acc.add(u, mean, nu_hat);
    return acc.curve();
}

double calibration_error(const CoverageCurve& curve) {
    curve.validate();
    double total = 0.0;
    for (std::size_t j = 0; j < curve.nominal_levels.size(); ++j)
        total += std::abs(curve.nominal_levels[j] - curve.empirical_levels[j]);
    return total / static_cast<double>(curve.nominal_levels.size());
}

double sharpness(const ImageGrid& nu_hat, double alpha) {
    if (nu_hat.size() == 0) throw ShapeError("sharpness: raster must be non-empty");
    check_variances(nu_hat, "sharpness");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ValueError("sharpness: level must lie in (0,1)");
    const double q = rng::two_sided_quantile(alpha);
    return par::sum(nu_hat.size(),
                    [&](std::size_t k) { return 2.0 * q * std::sqrt(nu_hat.data[k]); }) /
           static_cast<double>(nu_hat.size());
}

CoverageAccumulator::CoverageAccumulator(std::vector<double> levels)
    : levels_(std::move(levels)) {
    CoverageCurve probe;
    probe.nominal_levels = levels_;
    probe.empirical_levels.assign(levels_.size(), 0.0);
    probe.validate();
    for (double alpha : levels_) half_widths_.push_back(rng::two_sided_quantile(alpha));
    inside_.assign(levels_.size(), 0);
}

void CoverageAccumulator::add(const ImageGrid& u, const ImageGrid& mean,
                              const ImageGrid& nu_hat) {
    check_same_shape(u, mean, "coverage");
    check_same_shape(u, nu_hat, "coverage");
    check_variances(nu_hat, "coverage");
    for (std::size_t j = 0; j < levels_.size(); ++j) {
        const double q = half_widths_[j];
        inside_[j] += par::count(u.size(), [&](std::size_t k) {
            return std::abs(u.data[k] - mean.data[k]) <= q * std::sqrt(nu_hat.data[k]);
        });
    }
    pixels_ += u.size();
}

CoverageCurve CoverageAccumulator::curve() const {
    if (pixels_ == 0) throw ValueError("coverage: no pixels accumulated");
    CoverageCurve out;
    out.nominal_levels = levels_;
    for (std::uint64_t count : inside_)
        out.empirical_levels.push_back(static_cast<double>(count) /
                                       static_cast<double>(pixels_));
    out.validate();
    return out;
}

}  // namespace uqsr
