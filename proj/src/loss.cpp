#include "uqsr/loss.hpp"

#include <cmath>

#include "uqsr/par.hpp"

namespace uqsr {

namespace {

void require_shape(bool cond, const char* what) {
    if (!cond) throw ShapeError(what);
}

double positive_or_throw(double v, double floor, const char* what) {
    if (!(v > 0.0)) throw ValueError(what);
    return v > floor ? v : floor;
}

// Validation happens before any parallel region: exceptions cannot leave an
// OpenMP loop, so the kernels below only see pre-checked inputs and clamp.
void check_positive(const std::vector<double>& values, const char* what) {
    for (double v : values)
        if (!(v > 0.0)) throw ValueError(what);
}

double clamp_floor(double v) {
    return v > EstimatorState::kDiagFloor ? v : EstimatorState::kDiagFloor;
}

struct DiagContext {
    int lr_w;
    int hr_w;
};

DiagContext check_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                       const NoiseCovEstimate& r_hat) {
    if (est.variance_mode != EstimatorState::VarianceMode::kDiagonal)
        throw ValueError("diagonal-path loss requires a diagonal estimator state");
    require_shape(est.mean.height % 2 == 0 && est.mean.width % 2 == 0,
                  "estimator mean must have even extents");
    require_shape(est.mean.same_shape(est.diag_variance),
                  "mean and variance rasters must have equal extents");
    require_shape(z.height * 2 == est.mean.height && z.width * 2 == est.mean.width,
                  "reference frame must be half the estimator extents");
    require_shape(r_hat.diag.same_shape(z), "noise estimate must match the reference frame");
    (void)tau;
    check_positive(est.diag_variance.data, "diagonal-path loss: non-positive variance");
    check_positive(r_hat.diag.data, "diagonal-path loss: non-positive noise estimate");
    return {z.width, est.mean.width};
}

}  // namespace

EstimatorState EstimatorState::diagonal(ImageGrid mean, ImageGrid variance) {
    EstimatorState est;
    require_shape(mean.same_shape(variance), "EstimatorState: mean/variance extents mismatch");
    for (double& v : variance.data)
        v = positive_or_throw(v, kDiagFloor, "EstimatorState: variances must be positive");
    est.mean = std::move(mean);
    est.diag_variance = std::move(variance);
    est.variance_mode = VarianceMode::kDiagonal;
    return est;
}

EstimatorState EstimatorState::full(ImageGrid mean, DenseMatrix factor) {
    EstimatorState est;
    const int n = static_cast<int>(mean.size());
    require_shape(factor.rows == n && factor.cols == n,
                  "EstimatorState: factor must be n x n for n mean pixels");
    if (mean.size() > kDenseCap)
        throw ValueError("EstimatorState: full covariance capped at 4096 unknowns");
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j)
            if (factor.at(i, j) != 0.0)
                throw ValueError("EstimatorState: factor must be lower triangular");
        factor.at(i, i) = positive_or_throw(factor.at(i, i), kFactorFloor,
            "EstimatorState: factor diagonal must be positive");
    }
    est.mean = std::move(mean);
    est.cov_factor = std::move(factor);
    est.variance_mode = VarianceMode::kFull;
    return est;
}

void EstimatorState::validate() const {
    if (variance_mode == VarianceMode::kDiagonal) {
        require_shape(mean.same_shape(diag_variance), "EstimatorState: extents mismatch");
        for (double v : diag_variance.data)
            if (!(v >= kDiagFloor)) throw ValueError("EstimatorState: variance below floor");
    } else {
        if (cov_factor.rows != static_cast<int>(mean.size()))
            throw ShapeError("EstimatorState: factor size mismatch");
        for (int i = 0; i < cov_factor.rows; ++i)
            if (!(cov_factor.at(i, i) >= kFactorFloor))
                throw ValueError("EstimatorState: factor diagonal below floor");
    }
}

NoiseCovEstimate estimate_noise_cov(const ImageGrid& mean, SubgridId tau,
                                    const NoiseModel& model) {
    ImageGrid sampled = apply_shift_subsample(mean, tau);
    for (double& v : sampled.data) v = model.variance(v);
    return {std::move(sampled)};
}

double supervised_nll(const ImageGrid& u, const ImageGrid& mean,
                      const ImageGrid& diag_variance) {
    require_shape(u.same_shape(mean) && u.same_shape(diag_variance),
                  "supervised_nll: extents mismatch");
    check_positive(diag_variance.data, "supervised_nll: non-positive variance");
    return par::sum(u.size(), [&](std::size_t i) {
        const double v = clamp_floor(diag_variance.data[i]);
        const double r = u.data[i] - mean.data[i];
        return r * r / (2.0 * v) + 0.5 * std::log(v);
    });
}

double selfsup_nll_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                        const NoiseCovEstimate& r_hat) {
    const DiagContext ctx = check_diag(z, est, tau, r_hat);
    return par::sum(z.size(), [&](std::size_t i) {
        const int r = static_cast<int>(i) / ctx.lr_w;
        const int c = static_cast<int>(i) % ctx.lr_w;
        const std::size_t k = subgrid_hr_index(r, c, tau, ctx.hr_w);
        const double d = clamp_floor(est.diag_variance.data[k]) + clamp_floor(r_hat.diag.data[i]);
        const double res = z.data[i] - est.mean.data[k];
        return res * res / (2.0 * d) + 0.5 * std::log(d);
    });
}

ImageGrid grad_mean_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                         const NoiseCovEstimate& r_hat) {
    const DiagContext ctx = check_diag(z, est, tau, r_hat);
    ImageGrid grad(est.mean.height, est.mean.width, 0.0);
    par::parallel_for(z.size(), [&](std::size_t i) {
        const int r = static_cast<int>(i) / ctx.lr_w;
        const int c = static_cast<int>(i) % ctx.lr_w;
        const std::size_t k = subgrid_hr_index(r, c, tau, ctx.hr_w);
        const double d = clamp_floor(est.diag_variance.data[k]) + clamp_floor(r_hat.diag.data[i]);
        grad.data[k] = (est.mean.data[k] - z.data[i]) / d;
    });
    return grad;
}

ImageGrid grad_variance_diag(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                             const NoiseCovEstimate& r_hat) {
    const DiagContext ctx = check_diag(z, est, tau, r_hat);
    ImageGrid grad(est.mean.height, est.mean.width, 0.0);
    par::parallel_for(z.size(), [&](std::size_t i) {
        const int r = static_cast<int>(i) / ctx.lr_w;
        const int c = static_cast<int>(i) % ctx.lr_w;
        const std::size_t k = subgrid_hr_index(r, c, tau, ctx.hr_w);
        const double d = clamp_floor(est.diag_variance.data[k]) + clamp_floor(r_hat.diag.data[i]);
        const double res = z.data[i] - est.mean.data[k];
        grad.data[k] = 0.5 * (1.0 / d - res * res / (d * d));
    });
    return grad;
}

namespace {

// Builds M^{-1} = A_tau Sigma A_tau^T + diag(r_hat) in low-resolution space:
// C(l,l') = (row k(l) of L) . (row k(l') of L) + delta r_hat.
struct FullContext {
    std::vector<std::size_t> idx;  // sampled HR index per LR pixel
    DenseMatrix c;                 // M^{-1}
    std::vector<double> resid;     // A mean - z
};

FullContext build_full(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                       const NoiseCovEstimate& r_hat) {
    require_shape(z.height * 2 == est.mean.height && z.width * 2 == est.mean.width,
                  "reference frame must be half the estimator extents");
    const int m = static_cast<int>(z.size());
    FullContext ctx;
    ctx.c = observed_cov_dense(est, tau, r_hat);
    ctx.idx.resize(static_cast<std::size_t>(m));
    ctx.resid.resize(static_cast<std::size_t>(m));
    for (int l = 0; l < m; ++l) {
        const std::size_t k = subgrid_hr_index(l / z.width, l % z.width, tau, est.mean.width);
        ctx.idx[static_cast<std::size_t>(l)] = k;
        ctx.resid[static_cast<std::size_t>(l)] = est.mean.data[k] - z.data[static_cast<std::size_t>(l)];
    }
    return ctx;
}

}  // namespace

DenseMatrix observed_cov_dense(const EstimatorState& est, SubgridId tau,
                               const NoiseCovEstimate& r_hat) {
    if (est.variance_mode != EstimatorState::VarianceMode::kFull)
        throw ValueError("observed covariance requires a full estimator state");
    require_shape(est.mean.height % 2 == 0 && est.mean.width % 2 == 0,
                  "estimator mean must have even extents");
    require_shape(r_hat.diag.height * 2 == est.mean.height &&
                      r_hat.diag.width * 2 == est.mean.width,
                  "noise estimate must live on the subsampled grid");
    if (est.mean.size() > EstimatorState::kDenseCap)
        throw ValueError("full-covariance path capped at 4096 unknowns");
    if (est.cov_factor.rows != static_cast<int>(est.mean.size()))
        throw ShapeError("observed covariance: factor extents mismatch");
    check_positive(r_hat.diag.data, "observed covariance: non-positive noise estimate");

    const int m = static_cast<int>(r_hat.diag.size());
    DenseMatrix c(m, m);
    for (int l = 0; l < m; ++l) {
        const int ki = static_cast<int>(
            subgrid_hr_index(l / r_hat.diag.width, l % r_hat.diag.width, tau, est.mean.width));
        for (int lp = 0; lp <= l; ++lp) {
            const int kj = static_cast<int>(subgrid_hr_index(
                lp / r_hat.diag.width, lp % r_hat.diag.width, tau, est.mean.width));
            double s = 0.0;
            const int jmax = ki < kj ? ki : kj;  // factor is lower triangular
            for (int j = 0; j <= jmax; ++j)
                s += est.cov_factor.at(ki, j) * est.cov_factor.at(kj, j);
            c.at(l, lp) = s;
            c.at(lp, l) = s;
        }
        c.at(l, l) += clamp_floor(r_hat.diag.data[static_cast<std::size_t>(l)]);
    }
    return c;
}

double selfsup_nll_full(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                        const NoiseCovEstimate& r_hat) {
    const FullContext ctx = build_full(z, est, tau, r_hat);
    const SpdFactor factor(ctx.c);
    const std::vector<double> w = factor.solve(ctx.resid);
    double quad = 0.0;
    for (std::size_t l = 0; l < w.size(); ++l) quad += ctx.resid[l] * w[l];
    return 0.5 * quad + 0.5 * factor.logdet();
}

FullGradient grad_full(const ImageGrid& z, const EstimatorState& est, SubgridId tau,
                       const NoiseCovEstimate& r_hat) {
    const FullContext ctx = build_full(z, est, tau, r_hat);
    const SpdFactor factor(ctx.c);
    const int m = ctx.c.rows;
    const int n = est.cov_factor.rows;

    const DenseMatrix minv = factor.inverse();
    const std::vector<double> w = factor.solve(ctx.resid);  // M (A mean - z)

    FullGradient out;
    out.mean_grad = ImageGrid(est.mean.height, est.mean.width, 0.0);
    for (int l = 0; l < m; ++l)
        out.mean_grad.data[ctx.idx[static_cast<std::size_t>(l)]] =
            w[static_cast<std::size_t>(l)];

    // dLoss/dSigma = A^T B A with B = (M - w w^T)/2; the factor gradient
    // (dL/dSigma + dL/dSigma^T) L = 2 (A^T B A) L is nonzero only on sampled
    // rows.
    DenseMatrix b(m, m);
    for (int l = 0; l < m; ++l)
        for (int lp = 0; lp < m; ++lp)
            b.at(l, lp) = 0.5 * (minv.at(l, lp) -
                                 w[static_cast<std::size_t>(l)] * w[static_cast<std::size_t>(lp)]);

    out.factor_grad = DenseMatrix(n, n, 0.0);
    for (int l = 0; l < m; ++l) {
        const int i = static_cast<int>(ctx.idx[static_cast<std::size_t>(l)]);
        for (int j = 0; j <= i; ++j) {
            double s = 0.0;
            for (int lp = 0; lp < m; ++lp) {
                const int k = static_cast<int>(ctx.idx[static_cast<std::size_t>(lp)]);
                if (k >= j) s += b.at(l, lp) * est.cov_factor.at(k, j);
            }
            out.factor_grad.at(i, j) = 2.0 * s;
        }
    }
    return out;
}

}  // namespace uqsr
