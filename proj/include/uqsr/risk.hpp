#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "uqsr/degrade.hpp"
#include "uqsr/grid.hpp"
#include "uqsr/loss.hpp"
#include "uqsr/optim.hpp"
#include "uqsr/posterior.hpp"

namespace uqsr {

/// Source of the noise term added to the estimated variance inside the loss
/// denominator d = nu_hat + r_hat.
enum class RHatMode {
    kExactDiag,         // the generative noise variances themselves
    kFromMeanEstimate,  // affine plug-in rule evaluated at the estimator mean
    kZero,              // no correction; d is the estimated variance alone
};

/// Everything needed to average the self-supervised loss over a fresh
/// observation (tau, z) of a scene whose conditional distribution is known:
/// a Gaussian-mixture scene posterior (a plain Gaussian is one component),
/// the observation noise model, and the phase distribution.  A fresh frame
/// z = A_tau u + n is drawn with n_l ~ Normal(0, g((A_tau u)_l)).
struct RiskProblem {
    std::vector<double> weights;               // mixture weights, sum to 1
    std::vector<PosteriorSummary> components;  // scene distribution given the input
    NoiseModel noise_model;
    std::array<double, 4> tau_weights = {0.25, 0.25, 0.25, 0.25};
    RHatMode r_hat_mode = RHatMode::kExactDiag;

    static RiskProblem gaussian(PosteriorSummary posterior, NoiseModel model,
                                RHatMode mode = RHatMode::kExactDiag);
    static RiskProblem mixture(std::vector<double> weights,
                               std::vector<PosteriorSummary> components, NoiseModel model,
                               RHatMode mode = RHatMode::kExactDiag);

    void validate() const;
    bool uniform_taus() const;
    /// Overall scene mean/covariance/diagonal across the mixture (law of
    /// total expectation and variance).  A single unit-weight component is
    /// returned unchanged.
    PosteriorSummary moments() const;
};

/// Expected self-supervised loss over (tau, z), taken analytically: since
/// each high-resolution pixel is observed by exactly one phase, the risk is
/// a per-pixel sum  sum_k w_tau(k) [ (C_k + e_k^2)/(2 d_k) + ln(d_k)/2 ]
/// with C_k = Sigma_kk + R_k (scene variance plus generative noise at k's
/// sampled position), e_k the estimator's mean error, and d_k its loss
/// denominator under the problem's r_hat mode.  Only second moments enter,
/// so the formula is exact for mixtures as well.
double risk_closed_form(const RiskProblem& problem, const EstimatorState& est);

struct RiskGradient {
    double value = 0.0;
    ImageGrid mean_grad;  // d risk / d mean, including the plug-in chain term
    ImageGrid var_grad;   // d risk / d variance
};

/// Value and analytic gradients of risk_closed_form with respect to the
/// estimator's mean and diagonal variance.
RiskGradient risk_closed_form_grad(const RiskProblem& problem, const EstimatorState& est);

struct McRisk {
    double value = 0.0;
    double std_error = 0.0;
};

/// Empirical risk over n_samples independent draws of (tau, z), averaging
/// the diagonal self-supervised loss.  Uniform phase weights are realized by
/// exact allocation (sample i observes phase i mod 4); non-uniform weights
/// draw the phase per sample.  Deterministic per seed at any thread count.
McRisk risk_monte_carlo(const RiskProblem& problem, const EstimatorState& est,
                        std::uint64_t n_samples, std::uint64_t seed);

/// Sufficient statistics of a frozen Monte-Carlo sample set: per (phase,
/// pixel) counts and first two moments of z.  The empirical risk is affine
/// in these statistics, so re-evaluating it at a new estimator costs
/// O(pixels) instead of O(samples) — this is what makes minimizing a
/// 10^6-sample empirical risk practical.  draw() consumes exactly the same
/// random stream as risk_monte_carlo, so risk() reproduces its value up to
/// summation order.
struct FrozenRiskSamples {
    int lr_height = 0;
    int lr_width = 0;
    std::uint64_t n_total = 0;
    std::array<double, 4> count{};             // draws that observed each phase
    std::array<std::vector<double>, 4> sum_z;   // per-pixel sums of z
    std::array<std::vector<double>, 4> sum_zz;  // per-pixel sums of z^2
    NoiseModel noise_model;                     // d-rule carried from the problem
    RHatMode r_hat_mode = RHatMode::kExactDiag;
    std::array<std::vector<double>, 4> exact_noise;  // generative noise diagonal

    static FrozenRiskSamples draw(const RiskProblem& problem, std::uint64_t n_samples,
                                  std::uint64_t seed);

    double risk(const EstimatorState& est) const;
    RiskGradient risk_grad(const EstimatorState& est) const;
};

/// Max-norm residual of the risk's first-order condition in the mean.  For a
/// diagonal estimator this is max_k |mean_k - E[u|v]_k| / d_k; for a full
/// estimator it is the max-norm of the phase-averaged normal-equation
/// residual  sum_tau w_tau A_tau^T M_hat_tau A_tau (mean - E[u|v]).
double stationarity_mean_residual(const RiskProblem& problem, const EstimatorState& est);

/// Max-norm residual of the risk's first-order condition in the diagonal
/// variance: max over pixels of |1/d_k - (Sigma_kk + R_k)/d_k^2|.  Zero
/// exactly when every loss denominator matches the true second moment of
/// the residual at the posterior mean.
double stationarity_var_residual_diag(const RiskProblem& problem, const EstimatorState& est);

/// Full-matrix counterpart: max-norm of
/// sum_tau w_tau A_tau^T (M_hat - M_hat C_tau M_hat) A_tau with C_tau the
/// exact observed covariance A_tau Sigma A_tau^T + R.  Accepts diagonal
/// estimators by treating their variance as a diagonal covariance.
double stationarity_cov_residual_full(const RiskProblem& problem, const EstimatorState& est);

struct Prop1Options {
    int restarts = 20;
    double rel_tol = 1e-4;
    std::uint64_t seed = 0;
    std::uint64_t mc_samples = 0;  // 0: minimize the closed form; else a frozen sample set
    // The gradient tolerance stays above the floating-point decrease floor:
    // for objective values of order one, steps stop producing representable
    // decreases once the gradient falls to ~1e-8.
    OptimConfig optim{.max_iters = 50000, .grad_tol = 1e-8};
    bool freeze_mean = false;    // keep the mean fixed and optimize the variance alone
    ImageGrid frozen_mean;       // the fixed mean when freeze_mean is set

    void validate() const;
};

struct Prop1Run {
    bool converged = false;
    bool matched = false;
    double mean_rel_err = 0.0;  // max |mean - expected| / max-norm of the expected mean
    double var_rel_err = 0.0;   // max per-pixel |var - expected| / expected
    double risk_value = 0.0;
    int iterations = 0;
    ImageGrid mean;
    ImageGrid variance;
};

/// Outcome of minimizing the per-input risk from random restarts, compared
/// against the predicted optimum: mean = E[u|v] (or the frozen mean) and
/// variance_k = Sigma_kk + R_k + delta_k^2 - r_hat_k, which specializes to
/// the posterior variance (exact r_hat), posterior variance plus noise
/// (r_hat = 0), and posterior variance plus squared bias (frozen mean).
struct Prop1Report {
    std::vector<Prop1Run> runs;
    ImageGrid expected_mean;
    ImageGrid expected_variance;
    double min_operator_diag = 0.0;  // smallest diagonal entry of the averaged
                                     // normal-equation operator at the optimum;
                                     // positive certifies its invertibility
    bool all_converged = false;
    bool all_matched = false;
};

Prop1Report verify_proposition1(const RiskProblem& problem, const Prop1Options& options = {});

}  // namespace uqsr
