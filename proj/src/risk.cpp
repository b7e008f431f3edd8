#include "uqsr/risk.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "uqsr/errors.hpp"
#include "uqsr/par.hpp"
#include "uqsr/rng.hpp"

namespace uqsr {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int tau_index_of(int r, int c) { return 2 * (r % 2) + (c % 2); }

/// Per-pixel view of the problem: each high-resolution pixel k is observed
/// by exactly one phase, so every per-(phase, pixel) quantity can be stored
/// as one raster-shaped array.
struct PixelTable {
    int hr_h = 0, hr_w = 0, lr_h = 0, lr_w = 0;
    ImageGrid scene_mean;
    std::vector<double> scene_var;  // overall Sigma_kk
    std::vector<double> exact_r;    // generative noise variance at k's sample
    std::vector<double> weight;     // tau weight of k's phase
};

PixelTable build_table(const RiskProblem& problem) {
    const PosteriorSummary overall = problem.moments();
    PixelTable t;
    t.hr_h = overall.mean.height;
    t.hr_w = overall.mean.width;
    t.lr_h = t.hr_h / 2;
    t.lr_w = t.hr_w / 2;
    t.scene_mean = overall.mean;
    const std::size_t nn = overall.mean.size();
    t.scene_var.resize(nn);
    t.exact_r.resize(nn);
    t.weight.resize(nn);
    const bool zero_noise = problem.noise_model.a == 0.0 && problem.noise_model.b == 0.0;
    for (int r = 0; r < t.hr_h; ++r) {
        for (int c = 0; c < t.hr_w; ++c) {
            const std::size_t k = static_cast<std::size_t>(r) * t.hr_w + c;
            t.scene_var[k] = overall.diag.data[k];
            t.exact_r[k] =
                zero_noise ? 0.0 : problem.noise_model.variance(overall.mean.data[k]);
            t.weight[k] = problem.tau_weights[static_cast<std::size_t>(tau_index_of(r, c))];
        }
    }
    return t;
}

double r_hat_at(RHatMode mode, const NoiseModel& nm, double exact_r_k, double mean_k) {
    switch (mode) {
        case RHatMode::kExactDiag:
            return exact_r_k;
        case RHatMode::kFromMeanEstimate:
            return std::max(nm.a * mean_k + nm.b, EstimatorState::kDiagFloor);
        case RHatMode::kZero:
            return 0.0;
    }
    return 0.0;
}

bool plug_in_chain_active(RHatMode mode, const NoiseModel& nm, double mean_k) {
    return mode == RHatMode::kFromMeanEstimate && nm.a > 0.0 &&
           nm.a * mean_k + nm.b > EstimatorState::kDiagFloor;
}

void check_diag_estimator(const EstimatorState& est, int hr_h, int hr_w, const char* who) {
    est.validate();
    if (est.variance_mode != EstimatorState::VarianceMode::kDiagonal)
        throw ValueError(std::string(who) + ": needs a diagonal-variance estimator");
    if (est.mean.height != hr_h || est.mean.width != hr_w)
        throw ShapeError(std::string(who) + ": estimator extents do not match the problem");
}

/// Sampling factor F with F F^T equal to a symmetric PSD matrix; tolerates
/// exactly singular covariances (which a Cholesky factorization would not).
DenseMatrix psd_sampling_factor(const DenseMatrix& cov) {
    const int n = cov.rows;
    if (cov.cols != n) throw ShapeError("risk: covariance must be square");
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = 0.5 * (cov.at(i, j) + cov.at(j, i));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success)
        throw DefinitenessError("risk: eigendecomposition of the scene covariance failed");
    const Eigen::VectorXd& lam = es.eigenvalues();
    const double tol = 1e-10 * std::max(1.0, lam.cwiseAbs().maxCoeff());
    if (lam.minCoeff() < -tol)
        throw DefinitenessError("risk: scene covariance has eigenvalue " +
                                format_double(lam.minCoeff()));
    DenseMatrix f(n, n, 0.0);
    for (int j = 0; j < n; ++j) {
        const double s = std::sqrt(std::max(lam(j), 0.0));
        for (int i = 0; i < n; ++i) f.at(i, j) = es.eigenvectors()(i, j) * s;
    }
    return f;
}

/// Precomputed generative sampler state shared by the Monte-Carlo paths.
struct DrawPlan {
    int hr_h = 0, hr_w = 0, lr_h = 0, lr_w = 0;
    bool uniform_taus = false;
    bool zero_noise = false;
    NoiseModel noise_model;
    std::array<double, 4> tau_cumulative{};
    std::vector<double> comp_cumulative;
    std::vector<const ImageGrid*> comp_mean;
    std::vector<DenseMatrix> comp_factor;
};

DrawPlan make_draw_plan(const RiskProblem& problem) {
    DrawPlan plan;
    const ImageGrid& m0 = problem.components.front().mean;
    plan.hr_h = m0.height;
    plan.hr_w = m0.width;
    plan.lr_h = m0.height / 2;
    plan.lr_w = m0.width / 2;
    plan.uniform_taus = problem.uniform_taus();
    plan.zero_noise = problem.noise_model.a == 0.0 && problem.noise_model.b == 0.0;
    plan.noise_model = problem.noise_model;
    double acc = 0.0;
    for (std::size_t t = 0; t < 4; ++t) {
        acc += problem.tau_weights[t];
        plan.tau_cumulative[t] = acc;
    }
    plan.tau_cumulative[3] = 1.0;
    acc = 0.0;
    for (std::size_t j = 0; j < problem.weights.size(); ++j) {
        acc += problem.weights[j];
        plan.comp_cumulative.push_back(acc);
        plan.comp_mean.push_back(&problem.components[j].mean);
        plan.comp_factor.push_back(psd_sampling_factor(problem.components[j].cov));
    }
    plan.comp_cumulative.back() = 1.0;
    return plan;
}

/// Draws sample i's phase and observation.  Consumes a fixed, documented
/// stream: an optional phase draw (non-uniform weights only), an optional
/// component draw (mixtures only), one Gaussian per scene pixel, then one
/// Gaussian per observed pixel unless the noise model is exactly zero.
template <class Visit>
void draw_observation(const DrawPlan& plan, std::uint64_t seed, std::uint64_t i, Visit&& visit) {
    rng::Prng p(rng::derive_seed(seed, i), 0);

    int t;
    if (plan.uniform_taus) {
        t = static_cast<int>(i % 4);
    } else {
        const double u01 = p.next_unit();
        t = 0;
        while (t < 3 && u01 > plan.tau_cumulative[static_cast<std::size_t>(t)]) ++t;
    }

    std::size_t j = 0;
    if (plan.comp_cumulative.size() > 1) {
        const double u01 = p.next_unit();
        while (j + 1 < plan.comp_cumulative.size() && u01 > plan.comp_cumulative[j]) ++j;
    }

    const std::size_t nn = static_cast<std::size_t>(plan.hr_h) * plan.hr_w;
    std::vector<double> xi(nn);
    for (double& x : xi) x = p.next_gaussian();
    std::vector<double> u(nn);
    const DenseMatrix& f = plan.comp_factor[j];
    const ImageGrid& mj = *plan.comp_mean[j];
    for (std::size_t k = 0; k < nn; ++k) {
        double s = mj.data[k];
        const double* row = f.entries.data() + k * nn;
        for (std::size_t m = 0; m < nn; ++m) s += row[m] * xi[m];
        u[k] = s;
    }

    const SubgridId tau = SubgridId::from_index(t);
    for (int lr = 0; lr < plan.lr_h; ++lr) {
        for (int lc = 0; lc < plan.lr_w; ++lc) {
            const std::size_t k = subgrid_hr_index(lr, lc, tau, plan.hr_w);
            double z = u[k];
            if (!plan.zero_noise)
                z += std::sqrt(plan.noise_model.variance(u[k])) * p.next_gaussian();
            visit(t, static_cast<std::size_t>(lr) * plan.lr_w + lc, k, z);
        }
    }
}

/// Per-pixel sufficient statistics shared by the closed-form and frozen
/// empirical risks: both are  sum_k alpha_k [ (a2 - 2 a1 u + n u^2)/(2 d)
/// + n ln(d)/2 ]  over the estimator's mean u and denominator d.
struct QuadStats {
    int hr_h = 0, hr_w = 0;
    std::vector<double> alpha;  // per-pixel scale (tau weight, or 1/N)
    std::vector<double> a1;     // first moment coefficient
    std::vector<double> a2;     // second moment coefficient
    std::vector<double> cnt;    // effective draw count (1 for the closed form)
    std::vector<double> exact_r;
    NoiseModel noise_model;
    RHatMode r_hat_mode = RHatMode::kExactDiag;
};

QuadStats closed_form_stats(const RiskProblem& problem, const PixelTable& table) {
    QuadStats q;
    q.hr_h = table.hr_h;
    q.hr_w = table.hr_w;
    const std::size_t nn = table.scene_var.size();
    q.alpha = table.weight;
    q.a1.resize(nn);
    q.a2.resize(nn);
    q.cnt.assign(nn, 1.0);
    q.exact_r = table.exact_r;
    q.noise_model = problem.noise_model;
    q.r_hat_mode = problem.r_hat_mode;
    for (std::size_t k = 0; k < nn; ++k) {
        const double m = table.scene_mean.data[k];
        q.a1[k] = m;
        q.a2[k] = table.scene_var[k] + table.exact_r[k] + m * m;
    }
    return q;
}

QuadStats frozen_stats(const FrozenRiskSamples& frozen) {
    QuadStats q;
    q.hr_h = 2 * frozen.lr_height;
    q.hr_w = 2 * frozen.lr_width;
    const std::size_t nn = static_cast<std::size_t>(q.hr_h) * q.hr_w;
    q.alpha.assign(nn, 1.0 / static_cast<double>(frozen.n_total));
    q.a1.resize(nn);
    q.a2.resize(nn);
    q.cnt.resize(nn);
    q.exact_r.resize(nn);
    q.noise_model = frozen.noise_model;
    q.r_hat_mode = frozen.r_hat_mode;
    for (int r = 0; r < q.hr_h; ++r) {
        for (int c = 0; c < q.hr_w; ++c) {
            const std::size_t k = static_cast<std::size_t>(r) * q.hr_w + c;
            const std::size_t t = static_cast<std::size_t>(tau_index_of(r, c));
            const std::size_t l =
                static_cast<std::size_t>(r / 2) * frozen.lr_width + (c / 2);
            q.a1[k] = frozen.sum_z[t][l];
            q.a2[k] = frozen.sum_zz[t][l];
            q.cnt[k] = frozen.count[t];
            q.exact_r[k] = frozen.exact_noise[t][l];
        }
    }
    return q;
}

double quad_risk_value(const QuadStats& q, const ImageGrid& mean, const ImageGrid& variance) {
    return par::sum(mean.size(), [&](std::size_t k) {
        const double u = mean.data[k];
        const double d =
            variance.data[k] + r_hat_at(q.r_hat_mode, q.noise_model, q.exact_r[k], u);
        const double quad = q.a2[k] - 2.0 * q.a1[k] * u + q.cnt[k] * u * u;
        return q.alpha[k] * (quad / (2.0 * d) + q.cnt[k] * 0.5 * std::log(d));
    });
}

// Serial on purpose: this sits in the optimizer's inner loop where the
// per-call OpenMP region overhead would dwarf the O(pixels) arithmetic.
RiskGradient quad_risk_grad(const QuadStats& q, const ImageGrid& mean,
                            const ImageGrid& variance) {
    RiskGradient g;
    g.value = quad_risk_value(q, mean, variance);
    g.mean_grad = ImageGrid(mean.height, mean.width);
    g.var_grad = ImageGrid(mean.height, mean.width);
    for (std::size_t k = 0; k < mean.size(); ++k) {
        const double u = mean.data[k];
        const double d =
            variance.data[k] + r_hat_at(q.r_hat_mode, q.noise_model, q.exact_r[k], u);
        const double quad = q.a2[k] - 2.0 * q.a1[k] * u + q.cnt[k] * u * u;
        const double d_term = q.cnt[k] / (2.0 * d) - quad / (2.0 * d * d);
        double gm = q.alpha[k] * (q.cnt[k] * u - q.a1[k]) / d;
        if (plug_in_chain_active(q.r_hat_mode, q.noise_model, u))
            gm += q.alpha[k] * q.noise_model.a * d_term;
        g.mean_grad.data[k] = gm;
        g.var_grad.data[k] = q.alpha[k] * d_term;
    }
    return g;
}

}  // namespace

RiskProblem RiskProblem::gaussian(PosteriorSummary posterior, NoiseModel model, RHatMode mode) {
    RiskProblem p;
    p.weights = {1.0};
    p.components.push_back(std::move(posterior));
    p.noise_model = model;
    p.r_hat_mode = mode;
    return p;
}

RiskProblem RiskProblem::mixture(std::vector<double> weights,
                                 std::vector<PosteriorSummary> components, NoiseModel model,
                                 RHatMode mode) {
    RiskProblem p;
    p.weights = std::move(weights);
    p.components = std::move(components);
    p.noise_model = model;
    p.r_hat_mode = mode;
    return p;
}

void RiskProblem::validate() const {
    if (components.empty()) throw ValueError("RiskProblem: needs at least one component");
    if (weights.size() != components.size())
        throw ValueError("RiskProblem: one weight per component required");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w))
            throw ValueError("RiskProblem: weights must be non-negative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ValueError("RiskProblem: weights must sum to 1");

    const ImageGrid& m0 = components.front().mean;
    if (m0.height <= 0 || m0.width <= 0 || m0.height % 2 != 0 || m0.width % 2 != 0)
        throw ShapeError("RiskProblem: scene extents must be even and positive");
    const int nn = static_cast<int>(m0.size());
    for (const PosteriorSummary& comp : components) {
        if (!comp.mean.same_shape(m0) || !comp.diag.same_shape(m0))
            throw ShapeError("RiskProblem: component extents differ");
        if (comp.cov.rows != nn || comp.cov.cols != nn)
            throw ShapeError("RiskProblem: component covariance must be pixels x pixels");
        if (!comp.mean.all_finite() || !comp.diag.all_finite() || !comp.cov.all_finite())
            throw ValueError("RiskProblem: component moments must be finite");
        for (double v : comp.diag.data)
            if (v < 0.0) throw ValueError("RiskProblem: variances must be non-negative");
    }

    double tsum = 0.0;
    for (double w : tau_weights) {
        if (!(w >= 0.0) || !std::isfinite(w))
            throw ValueError("RiskProblem: phase weights must be non-negative");
        tsum += w;
    }
    if (std::abs(tsum - 1.0) > 1e-12)
        throw ValueError("RiskProblem: phase weights must sum to 1");
}

bool RiskProblem::uniform_taus() const {
    return tau_weights[0] == 0.25 && tau_weights[1] == 0.25 && tau_weights[2] == 0.25 &&
           tau_weights[3] == 0.25;
}

PosteriorSummary RiskProblem::moments() const {
    validate();
    if (components.size() == 1 && weights[0] == 1.0) return components.front();

    const ImageGrid& m0 = components.front().mean;
    const std::size_t nn = m0.size();
    PosteriorSummary out;
    out.mean = ImageGrid(m0.height, m0.width, 0.0);
    out.cov = DenseMatrix(static_cast<int>(nn), static_cast<int>(nn), 0.0);
    out.diag = ImageGrid(m0.height, m0.width, 0.0);

    for (std::size_t j = 0; j < components.size(); ++j) {
        if (weights[j] == 0.0) continue;
        for (std::size_t k = 0; k < nn; ++k)
            out.mean.data[k] += weights[j] * components[j].mean.data[k];
    }
    for (std::size_t j = 0; j < components.size(); ++j) {
        if (weights[j] == 0.0) continue;
        const double w = weights[j];
        const PosteriorSummary& comp = components[j];
        par::parallel_for(nn, [&](std::size_t i) {
            const double di = comp.mean.data[i] - out.mean.data[i];
            double* row = out.cov.entries.data() + i * nn;
            const double* crow = comp.cov.entries.data() + i * nn;
            for (std::size_t k = 0; k < nn; ++k)
                row[k] += w * (crow[k] + di * (comp.mean.data[k] - out.mean.data[k]));
        });
    }
    for (std::size_t i = 0; i < nn; ++i)
        for (std::size_t k = i + 1; k < nn; ++k) {
            const double s = 0.5 * (out.cov.at(static_cast<int>(i), static_cast<int>(k)) +
                                    out.cov.at(static_cast<int>(k), static_cast<int>(i)));
            out.cov.at(static_cast<int>(i), static_cast<int>(k)) = s;
            out.cov.at(static_cast<int>(k), static_cast<int>(i)) = s;
        }
    for (std::size_t k = 0; k < nn; ++k) {
        const int ki = static_cast<int>(k);
        out.cov.at(ki, ki) = std::max(out.cov.at(ki, ki), 0.0);
        out.diag.data[k] = out.cov.at(ki, ki);
    }
    return out;
}

double risk_closed_form(const RiskProblem& problem, const EstimatorState& est) {
    const PixelTable table = build_table(problem);
    check_diag_estimator(est, table.hr_h, table.hr_w, "risk_closed_form");
    const QuadStats q = closed_form_stats(problem, table);
    return quad_risk_value(q, est.mean, est.diag_variance);
}

RiskGradient risk_closed_form_grad(const RiskProblem& problem, const EstimatorState& est) {
    const PixelTable table = build_table(problem);
    check_diag_estimator(est, table.hr_h, table.hr_w, "risk_closed_form_grad");
    const QuadStats q = closed_form_stats(problem, table);
    return quad_risk_grad(q, est.mean, est.diag_variance);
}

McRisk risk_monte_carlo(const RiskProblem& problem, const EstimatorState& est,
                        std::uint64_t n_samples, std::uint64_t seed) {
    const PixelTable table = build_table(problem);
    check_diag_estimator(est, table.hr_h, table.hr_w, "risk_monte_carlo");
    if (n_samples < 2) throw ValueError("risk_monte_carlo: needs at least two samples");

    const DrawPlan plan = make_draw_plan(problem);
    const std::size_t nn = est.mean.size();

    // Per-pixel loss denominators and the per-phase log-determinant halves,
    // both independent of the draws.
    std::vector<double> d(nn);
    std::array<double, 4> logdet_half{};
    for (int r = 0; r < table.hr_h; ++r) {
        for (int c = 0; c < table.hr_w; ++c) {
            const std::size_t k = static_cast<std::size_t>(r) * table.hr_w + c;
            d[k] = est.diag_variance.data[k] + r_hat_at(problem.r_hat_mode, problem.noise_model,
                                                        table.exact_r[k], est.mean.data[k]);
            logdet_half[static_cast<std::size_t>(tau_index_of(r, c))] += 0.5 * std::log(d[k]);
        }
    }

    std::array<double, 2> acc{};
    par::accumulate(
        n_samples, acc,
        [&](std::uint64_t i, std::span<double> a) {
            double loss = 0.0;
            int phase = 0;
            draw_observation(plan, seed, i, [&](int t, std::size_t, std::size_t k, double z) {
                phase = t;
                const double res = z - est.mean.data[k];
                loss += res * res / (2.0 * d[k]);
            });
            loss += logdet_half[static_cast<std::size_t>(phase)];
            a[0] += loss;
            a[1] += loss * loss;
        },
        par::kScalarChunk);

    McRisk out;
    const double n = static_cast<double>(n_samples);
    out.value = acc[0] / n;
    const double var = std::max(0.0, (acc[1] - acc[0] * acc[0] / n) / (n - 1.0));
    out.std_error = std::sqrt(var / n);
    return out;
}

FrozenRiskSamples FrozenRiskSamples::draw(const RiskProblem& problem, std::uint64_t n_samples,
                                          std::uint64_t seed) {
    const PixelTable table = build_table(problem);
    if (n_samples < 2) throw ValueError("FrozenRiskSamples: needs at least two samples");
    const DrawPlan plan = make_draw_plan(problem);

    const std::size_t lr = static_cast<std::size_t>(plan.lr_h) * plan.lr_w;
    // Accumulator layout per phase: [count, sum_z(lr), sum_zz(lr)].
    const std::size_t block = 1 + 2 * lr;
    std::vector<double> acc(4 * block, 0.0);
    par::accumulate(
        n_samples, acc,
        [&](std::uint64_t i, std::span<double> a) {
            bool counted = false;
            draw_observation(plan, seed, i, [&](int t, std::size_t l, std::size_t, double z) {
                const std::size_t base = static_cast<std::size_t>(t) * block;
                if (!counted) {
                    a[base] += 1.0;
                    counted = true;
                }
                a[base + 1 + l] += z;
                a[base + 1 + lr + l] += z * z;
            });
        },
        par::kScalarChunk);

    FrozenRiskSamples out;
    out.lr_height = plan.lr_h;
    out.lr_width = plan.lr_w;
    out.n_total = n_samples;
    out.noise_model = problem.noise_model;
    out.r_hat_mode = problem.r_hat_mode;
    for (std::size_t t = 0; t < 4; ++t) {
        const std::size_t base = t * block;
        out.count[t] = acc[base];
        out.sum_z[t].assign(acc.begin() + static_cast<std::ptrdiff_t>(base + 1),
                            acc.begin() + static_cast<std::ptrdiff_t>(base + 1 + lr));
        out.sum_zz[t].assign(acc.begin() + static_cast<std::ptrdiff_t>(base + 1 + lr),
                             acc.begin() + static_cast<std::ptrdiff_t>(base + 1 + 2 * lr));
        out.exact_noise[t].resize(lr);
        const SubgridId tau = SubgridId::from_index(static_cast<int>(t));
        for (std::size_t l = 0; l < lr; ++l) {
            const std::size_t k = subgrid_hr_index(static_cast<int>(l) / plan.lr_w,
                                                   static_cast<int>(l) % plan.lr_w, tau,
                                                   table.hr_w);
            out.exact_noise[t][l] = table.exact_r[k];
        }
    }
    return out;
}

double FrozenRiskSamples::risk(const EstimatorState& est) const {
    check_diag_estimator(est, 2 * lr_height, 2 * lr_width, "FrozenRiskSamples::risk");
    return quad_risk_value(frozen_stats(*this), est.mean, est.diag_variance);
}

RiskGradient FrozenRiskSamples::risk_grad(const EstimatorState& est) const {
    check_diag_estimator(est, 2 * lr_height, 2 * lr_width, "FrozenRiskSamples::risk_grad");
    return quad_risk_grad(frozen_stats(*this), est.mean, est.diag_variance);
}

namespace {

/// The loss's noise term per phase as a raster, floored at the positivity
/// bound the loss module requires.  Only the dense full-covariance paths use
/// this; the diagonal forms keep an exact zero for the no-correction mode.
NoiseCovEstimate r_hat_grid(const RiskProblem& problem, const PixelTable& table,
                            const EstimatorState& est, SubgridId tau) {
    NoiseCovEstimate r;
    r.diag = ImageGrid(table.lr_h, table.lr_w);
    for (int lr = 0; lr < table.lr_h; ++lr)
        for (int lc = 0; lc < table.lr_w; ++lc) {
            const std::size_t k = subgrid_hr_index(lr, lc, tau, table.hr_w);
            const double v = r_hat_at(problem.r_hat_mode, problem.noise_model, table.exact_r[k],
                                      est.mean.data[k]);
            r.diag.at(lr, lc) = std::max(v, EstimatorState::kDiagFloor);
        }
    return r;
}

}  // namespace

double stationarity_mean_residual(const RiskProblem& problem, const EstimatorState& est) {
    const PixelTable table = build_table(problem);
    est.validate();
    if (est.mean.height != table.hr_h || est.mean.width != table.hr_w)
        throw ShapeError("stationarity_mean_residual: estimator extents do not match");
    const std::size_t nn = est.mean.size();

    if (est.variance_mode == EstimatorState::VarianceMode::kDiagonal) {
        double worst = 0.0;
        for (std::size_t k = 0; k < nn; ++k) {
            const double d = est.diag_variance.data[k] +
                             r_hat_at(problem.r_hat_mode, problem.noise_model, table.exact_r[k],
                                      est.mean.data[k]);
            worst = std::max(worst,
                             std::abs(est.mean.data[k] - table.scene_mean.data[k]) / d);
        }
        return worst;
    }

    std::vector<double> out(nn, 0.0);
    const std::size_t lr = static_cast<std::size_t>(table.lr_h) * table.lr_w;
    for (int t = 0; t < 4; ++t) {
        const SubgridId tau = SubgridId::from_index(t);
        const NoiseCovEstimate r_hat = r_hat_grid(problem, table, est, tau);
        const SpdFactor observed(observed_cov_dense(est, tau, r_hat));
        std::vector<double> v(lr);
        for (std::size_t l = 0; l < lr; ++l) {
            const std::size_t k = subgrid_hr_index(static_cast<int>(l) / table.lr_w,
                                                   static_cast<int>(l) % table.lr_w, tau,
                                                   table.hr_w);
            v[l] = est.mean.data[k] - table.scene_mean.data[k];
        }
        const std::vector<double> y = observed.solve(v);
        const double w = problem.tau_weights[static_cast<std::size_t>(t)];
        for (std::size_t l = 0; l < lr; ++l) {
            const std::size_t k = subgrid_hr_index(static_cast<int>(l) / table.lr_w,
                                                   static_cast<int>(l) % table.lr_w, tau,
                                                   table.hr_w);
            out[k] += w * y[l];
        }
    }
    double worst = 0.0;
    for (double v : out) worst = std::max(worst, std::abs(v));
    return worst;
}

double stationarity_var_residual_diag(const RiskProblem& problem, const EstimatorState& est) {
    const PixelTable table = build_table(problem);
    check_diag_estimator(est, table.hr_h, table.hr_w, "stationarity_var_residual_diag");
    double worst = 0.0;
    for (std::size_t k = 0; k < est.mean.size(); ++k) {
        const double d = est.diag_variance.data[k] +
                         r_hat_at(problem.r_hat_mode, problem.noise_model, table.exact_r[k],
                                  est.mean.data[k]);
        const double c = table.scene_var[k] + table.exact_r[k];
        worst = std::max(worst, std::abs(1.0 / d - c / (d * d)));
    }
    return worst;
}

double stationarity_cov_residual_full(const RiskProblem& problem, const EstimatorState& est) {
    const PixelTable table = build_table(problem);
    est.validate();
    if (est.mean.height != table.hr_h || est.mean.width != table.hr_w)
        throw ShapeError("stationarity_cov_residual_full: estimator extents do not match");
    const PosteriorSummary overall = problem.moments();
    const std::size_t nn = est.mean.size();
    const int lr = table.lr_h * table.lr_w;

    RowMajor residual = RowMajor::Zero(static_cast<int>(nn), static_cast<int>(nn));
    for (int t = 0; t < 4; ++t) {
        const SubgridId tau = SubgridId::from_index(t);
        std::vector<std::size_t> hr_of(static_cast<std::size_t>(lr));
        for (int l = 0; l < lr; ++l)
            hr_of[static_cast<std::size_t>(l)] =
                subgrid_hr_index(l / table.lr_w, l % table.lr_w, tau, table.hr_w);

        // M_hat: inverse of the estimator's observed covariance on this phase.
        RowMajor m_hat(lr, lr);
        if (est.variance_mode == EstimatorState::VarianceMode::kFull) {
            const NoiseCovEstimate r_hat = r_hat_grid(problem, table, est, tau);
            const DenseMatrix inv = SpdFactor(observed_cov_dense(est, tau, r_hat)).inverse();
            for (int i = 0; i < lr; ++i)
                for (int j = 0; j < lr; ++j) m_hat(i, j) = inv.at(i, j);
        } else {
            m_hat.setZero();
            for (int l = 0; l < lr; ++l) {
                const std::size_t k = hr_of[static_cast<std::size_t>(l)];
                const double d = est.diag_variance.data[k] +
                                 r_hat_at(problem.r_hat_mode, problem.noise_model,
                                          table.exact_r[k], est.mean.data[k]);
                m_hat(l, l) = 1.0 / d;
            }
        }

        // True observed covariance on this phase, including off-diagonals.
        RowMajor c(lr, lr);
        for (int i = 0; i < lr; ++i) {
            const std::size_t ki = hr_of[static_cast<std::size_t>(i)];
            for (int j = 0; j < lr; ++j) {
                const std::size_t kj = hr_of[static_cast<std::size_t>(j)];
                c(i, j) = overall.cov.at(static_cast<int>(ki), static_cast<int>(kj));
            }
            c(i, i) += table.exact_r[ki];
        }

        const RowMajor inner = m_hat - m_hat * c * m_hat;
        const double w = problem.tau_weights[static_cast<std::size_t>(t)];
        for (int i = 0; i < lr; ++i)
            for (int j = 0; j < lr; ++j)
                residual(static_cast<int>(hr_of[static_cast<std::size_t>(i)]),
                         static_cast<int>(hr_of[static_cast<std::size_t>(j)])) +=
                    w * inner(i, j);
    }
    return residual.cwiseAbs().maxCoeff();
}

void Prop1Options::validate() const {
    if (restarts < 1) throw ValueError("Prop1Options: needs at least one restart");
    if (!(rel_tol > 0.0)) throw ValueError("Prop1Options: tolerance must be positive");
    optim.validate();
    if (freeze_mean && frozen_mean.size() == 0)
        throw ValueError("Prop1Options: freeze_mean needs a frozen mean");
    if (mc_samples != 0 && mc_samples < 4)
        throw ValueError("Prop1Options: needs at least four Monte-Carlo samples");
}

Prop1Report verify_proposition1(const RiskProblem& problem, const Prop1Options& options) {
    options.validate();
    const PixelTable table = build_table(problem);
    const std::size_t nn = table.scene_mean.size();
    if (options.freeze_mean &&
        (options.frozen_mean.height != table.hr_h || options.frozen_mean.width != table.hr_w))
        throw ShapeError("verify_proposition1: frozen mean extents do not match");

    Prop1Report report;
    report.expected_mean = options.freeze_mean ? options.frozen_mean : table.scene_mean;
    report.expected_variance = ImageGrid(table.hr_h, table.hr_w);
    report.min_operator_diag = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < nn; ++k) {
        const double delta = report.expected_mean.data[k] - table.scene_mean.data[k];
        const double r_hat_opt = r_hat_at(problem.r_hat_mode, problem.noise_model,
                                          table.exact_r[k], report.expected_mean.data[k]);
        const double target =
            table.scene_var[k] + table.exact_r[k] + delta * delta - r_hat_opt;
        report.expected_variance.data[k] = target;
        report.min_operator_diag =
            std::min(report.min_operator_diag, table.weight[k] / (target + r_hat_opt));
    }

    QuadStats stats;
    if (options.mc_samples > 0) {
        const FrozenRiskSamples frozen = FrozenRiskSamples::draw(
            problem, options.mc_samples, rng::derive_seed(options.seed, 0xF00D));
        stats = frozen_stats(frozen);
    } else {
        stats = closed_form_stats(problem, table);
    }

    // Parameters: [mean, log-variance] per pixel, or log-variance alone when
    // the mean is frozen.  The log parameterization keeps d positive without
    // constraints and is scale-free near degenerate optima.
    const bool freeze = options.freeze_mean;
    ImageGrid mean_buf = report.expected_mean;
    ImageGrid var_buf(table.hr_h, table.hr_w);
    const Objective objective = [&](std::span<const double> x, std::span<double> grad) {
        if (!freeze)
            std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(nn),
                      mean_buf.data.begin());
        const std::size_t s0 = freeze ? 0 : nn;
        for (std::size_t k = 0; k < nn; ++k) var_buf.data[k] = std::exp(x[s0 + k]);
        const RiskGradient g = quad_risk_grad(stats, mean_buf, var_buf);
        if (!freeze)
            for (std::size_t k = 0; k < nn; ++k) grad[k] = g.mean_grad.data[k];
        for (std::size_t k = 0; k < nn; ++k)
            grad[s0 + k] = g.var_grad.data[k] * var_buf.data[k];
        return g.value;
    };

    double mean_scale = 1e-12;
    for (double v : report.expected_mean.data) mean_scale = std::max(mean_scale, std::abs(v));

    report.all_converged = true;
    report.all_matched = true;
    for (int run = 0; run < options.restarts; ++run) {
        rng::Prng init(rng::derive_seed(options.seed, 0x600D + static_cast<std::uint64_t>(run)),
                       0);
        std::vector<double> x0;
        if (!freeze)
            for (std::size_t k = 0; k < nn; ++k)
                x0.push_back(table.scene_mean.data[k] + init.next_uniform(-0.75, 0.75));
        for (std::size_t k = 0; k < nn; ++k)
            x0.push_back(std::log(init.next_uniform(0.02, 2.0)));

        const MinimizeResult res = minimize(objective, std::move(x0), options.optim);

        Prop1Run r;
        r.converged = res.converged;
        r.iterations = res.iterations;
        r.risk_value = res.value;
        r.mean = report.expected_mean;
        if (!freeze)
            std::copy(res.argmin.begin(), res.argmin.begin() + static_cast<std::ptrdiff_t>(nn),
                      r.mean.data.begin());
        r.variance = ImageGrid(table.hr_h, table.hr_w);
        const std::size_t s0 = freeze ? 0 : nn;
        for (std::size_t k = 0; k < nn; ++k)
            r.variance.data[k] = std::exp(res.argmin[s0 + k]);

        r.mean_rel_err = 0.0;
        if (!freeze)
            for (std::size_t k = 0; k < nn; ++k)
                r.mean_rel_err =
                    std::max(r.mean_rel_err,
                             std::abs(r.mean.data[k] - report.expected_mean.data[k]) /
                                 mean_scale);
        r.var_rel_err = 0.0;
        for (std::size_t k = 0; k < nn; ++k) {
            const double t = std::max(report.expected_variance.data[k], 1e-300);
            r.var_rel_err =
                std::max(r.var_rel_err, std::abs(r.variance.data[k] - t) / t);
        }
        r.matched = r.converged && r.mean_rel_err <= options.rel_tol &&
                    r.var_rel_err <= options.rel_tol;
        report.all_converged = report.all_converged && r.converged;
        report.all_matched = report.all_matched && r.matched;
        report.runs.push_back(std::move(r));
    }
    return report;
}

}  // namespace uqsr
