#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "uqsr/degrade.hpp"
#include "uqsr/grid.hpp"
#include "uqsr/loss.hpp"

namespace uqsr {

/// Differentiable objective: writes the gradient into `grad` (same length as
/// `x`) and returns the value.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct OptimConfig {
    int max_iters = 5000;
    double grad_tol = 1e-8;            // max-norm of the gradient
    double initial_step = 1.0;         // backtracking line search start
    double shrink = 0.5;               // step multiplier on rejection
    double sufficient_decrease = 1e-4; // Armijo constant
    double log_variance_floor = -27.631021115928552;  // ln(1e-12); floor for
                                                      // log-variance parameters
    bool check_gradient_at_init = true;

    void validate() const;
};

struct MinimizeResult {
    std::vector<double> argmin;
    double value = 0.0;
    int iterations = 0;   // accepted descent steps
    bool converged = false;
};

/// Gradient descent with Armijo backtracking.  Deterministic; the objective
/// is never evaluated outside the visited points, and accepted iterates never
/// increase the value.  A directional finite-difference check of the gradient
/// runs once at the initial point (tolerance 1e-4) unless disabled.  Throws
/// ValueError if the objective is non-finite at the initial point or the
/// spot-check fails; a dead line search (step below 1e-16) returns
/// converged=false instead.
MinimizeResult minimize(const Objective& objective, std::vector<double> init,
                        const OptimConfig& cfg = {});

/// Worst per-coordinate relative discrepancy between the analytic gradient
/// and central finite differences with h in {1e-4, 1e-6} x max(|x_i|, 1),
/// keeping the better h per coordinate.  Discrepancies at or below 1e-9
/// absolute count as zero.
double fd_check(const Objective& objective, std::span<const double> point);

/// Affine amortized estimator: u_hat = bias + weights * x where x stacks the
/// exposure-normalized input frames of a burst (the reference frame is
/// excluded unless include_reference is set), and an input-independent
/// per-pixel variance exp(log_variance).  A linear-Gaussian posterior mean is
/// exactly affine in the frames and its covariance does not depend on them,
/// so this family can represent the oracle on such data.
struct AffineEstimator {
    DenseMatrix weights;      // (hr pixels) x (n_inputs * lr pixels)
    ImageGrid bias;           // 2H x 2W
    ImageGrid log_variance;   // 2H x 2W
    bool include_reference = false;

    static AffineEstimator zeros(int hr_height, int hr_width, int n_inputs,
                                 double initial_log_variance = -2.302585092994046 /* ln 0.1 */);

    int lr_pixels() const { return (bias.height / 2) * (bias.width / 2); }
    int n_inputs() const { return lr_pixels() > 0 ? weights.cols / lr_pixels() : 0; }
    void validate() const;

    /// Flattened exposure-normalized frames in burst order (reference frame
    /// skipped unless include_reference).
    std::vector<double> stack_inputs(const Burst& burst) const;
    ImageGrid predict_mean(const Burst& burst) const;
    /// exp(log_variance), never below the positivity floor.
    ImageGrid predict_variance() const;
    EstimatorState predict(const Burst& burst) const;
};

/// One training sample: an input burst whose held-out reference frame is the
/// target, observed on subgrid tau.  When `scene` is non-empty, each epoch
/// redraws a fresh (tau, target) pair from the generative model instead of
/// reusing the stored target — long-burst training where every epoch can
/// hold out a different frame, which removes target-sampling noise from
/// parity studies; the loss itself never sees the scene.
struct TrainSample {
    Burst burst;
    ImageGrid target;    // low-resolution reference frame
    SubgridId tau;       // its sampling phase
    ImageGrid scene;     // optional generative access for fresh targets
    std::uint64_t target_seed = 0;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double step = 1e-2;          // fixed step, halved every third of the run
    std::uint64_t seed = 0;      // shuffling and fresh-target draws
    bool supervised = false;     // train against the scene with supervised_nll
    bool include_reference = false;  // feed the reference frame as an input too
    double divergence_limit = 1e6;
    double initial_log_variance = -2.302585092994046;  // ln 0.1
    double log_variance_floor = -27.631021115928552;   // ln(1e-12)

    void validate() const;
};

/// Mini-batch gradient descent on the empirical self-supervised risk of an
/// affine estimator (or the supervised risk against the scenes).  The noise
/// estimate for each sample is recomputed from the current prediction.
/// Deterministic per (dataset, cfg).  Throws ValueError if a batch loss
/// exceeds divergence_limit.
AffineEstimator train_affine(const std::vector<TrainSample>& dataset, const NoiseModel& model,
                             const TrainConfig& cfg);

/// Serialization: weights/bias/log_variance as raster blocks plus a
/// plain-text manifest recording shapes, the training seed, and config.
void save_affine(const std::string& dir, const AffineEstimator& est, const TrainConfig& cfg);
AffineEstimator load_affine(const std::string& dir);

}  // namespace uqsr
