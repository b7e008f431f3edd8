// Times the OpenMP kernels against their serial reference implementations on
// synthetic rasters, checking agreement along the way.  The serial versions
// exist for testing; this target answers "what does the parallel path buy,
// and does it still compute the same numbers" on one machine.
//
// usage: bench_kernels [side [reps]]
//   side  raster side length in high-resolution pixels, even (default 1024)
//   reps  timed repetitions per kernel, best-of reported (default 9)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "uqsr/degrade.hpp"
#include "uqsr/grid.hpp"
#include "uqsr/loss.hpp"
#include "uqsr/metrics.hpp"
#include "uqsr/par.hpp"
#include "uqsr/rng.hpp"
#include "uqsr/serial_ref.hpp"

using namespace uqsr;

namespace {

double best_of(int reps, const std::function<double()>& fn, double& checksum) {
    checksum = fn();  // warm-up, and the value the caller compares
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto start = std::chrono::steady_clock::now();
        const double value = fn();
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (value != checksum) std::fprintf(stderr, "warning: unstable result\n");
        best = std::min(best, elapsed);
    }
    return best;
}

struct Kernel {
    std::string name;
    std::function<double()> serial;
    std::function<double()> parallel;
};

double grid_sum(const ImageGrid& g) {
    double s = 0.0;
    for (double x : g.data) s += x;
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    const int side = argc > 1 ? std::atoi(argv[1]) : 1024;
    const int reps = argc > 2 ? std::atoi(argv[2]) : 9;
    if (side < 2 || side % 2 != 0 || reps < 1) {
        std::fprintf(stderr, "usage: bench_kernels [even side >= 2] [reps >= 1]\n");
        return 2;
    }

    rng::Prng rng(2024, 0);
    ImageGrid mean(side, side);
    ImageGrid variance(side, side);
    ImageGrid u(side, side);
    for (std::size_t k = 0; k < mean.size(); ++k) {
        mean.data[k] = rng.next_uniform(0.2, 0.8);
        variance.data[k] = rng.next_uniform(0.01, 0.25);
        u.data[k] = mean.data[k] + std::sqrt(variance.data[k]) * rng.next_gaussian();
    }
    const EstimatorState est = EstimatorState::diagonal(mean, variance);
    const SubgridId tau{0, 0};
    const NoiseModel model(0.05, 1e-3);
    const NoiseCovEstimate r_hat = estimate_noise_cov(mean, tau, model);
    const ImageGrid z =
        sample_noise(apply_shift_subsample(u, tau), model, rng::derive_seed(2024, 1));
    const std::vector<double> levels = default_levels();

    const std::vector<Kernel> kernels = {
        {"supervised_nll",
         [&] { return serial::supervised_nll(u, mean, variance); },
         [&] { return supervised_nll(u, mean, variance); }},
        {"selfsup_nll_diag",
         [&] { return serial::selfsup_nll_diag(z, est, tau, r_hat); },
         [&] { return selfsup_nll_diag(z, est, tau, r_hat); }},
        {"grad_mean_diag",
         [&] { return grid_sum(serial::grad_mean_diag(z, est, tau, r_hat)); },
         [&] { return grid_sum(grad_mean_diag(z, est, tau, r_hat)); }},
        {"grad_variance_diag",
         [&] { return grid_sum(serial::grad_variance_diag(z, est, tau, r_hat)); },
         [&] { return grid_sum(grad_variance_diag(z, est, tau, r_hat)); }},
        {"v_rmse",
         [&] { return serial::v_rmse(variance, mean, u); },
         [&] { return v_rmse(variance, mean, u); }},
        {"coverage_curve_19_levels",
         [&] {
             double inside = 0.0;
             for (double alpha : levels)
                 inside += static_cast<double>(
                     serial::coverage_count(u, mean, variance, rng::two_sided_quantile(alpha)));
             return inside;
         },
         [&] {
             CoverageAccumulator acc(levels);
             acc.add(u, mean, variance);
             double inside = 0.0;
             for (double e : acc.curve().empirical_levels)
                 inside += e * static_cast<double>(acc.pixels());
             return inside;
         }}};

    std::printf("raster %dx%d, %d timed reps, %d threads\n\n", side, side, reps,
                par::max_threads());
    std::printf("%-26s %12s %12s %9s %12s\n", "kernel", "serial ms", "parallel ms", "speedup",
                "rel diff");
    for (const Kernel& kernel : kernels) {
        double serial_value = 0.0;
        double parallel_value = 0.0;
        const double ts = best_of(reps, kernel.serial, serial_value);
        const double tp = best_of(reps, kernel.parallel, parallel_value);
        const double scale = std::max({std::abs(serial_value), std::abs(parallel_value), 1e-300});
        const double rel = std::abs(serial_value - parallel_value) / scale;
        std::printf("%-26s %12.3f %12.3f %8.2fx %12.2e\n", kernel.name.c_str(), ts * 1e3,
                    tp * 1e3, ts / tp, rel);
        if (rel > 1e-11) {
            std::fprintf(stderr, "FAIL %s: serial and parallel paths disagree (%.3e)\n",
                         kernel.name.c_str(), rel);
            return 1;
        }
    }
    return 0;
}
