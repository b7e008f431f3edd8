#include "uqsr/posterior.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <utility>
#include <vector>

#include "uqsr/par.hpp"
#include "uqsr/rng.hpp"

namespace uqsr {

namespace {

// Shared serial validation: every throw happens before any parallel region.
void check_observations(const ImageGrid& hr_shape, const std::vector<Observation>& observations) {
    for (const Observation& o : observations) {
        if (o.op.hr_height != hr_shape.height || o.op.hr_width != hr_shape.width)
            throw ShapeError("observation operator acts on a different grid than the prior");
        if (o.values.height != o.op.lr_height() || o.values.width != o.op.lr_width())
            throw ShapeError("observation values do not match the operator output shape");
        if (!o.noise_diag.same_shape(o.values))
            throw ShapeError("observation noise variances do not match the values shape");
        if (!o.values.all_finite())
            throw ValueError("observation values must be finite");
        for (double r : o.noise_diag.data)
            if (!(r > 0.0) || !std::isfinite(r))
                throw ValueError("observation noise variances must be positive and finite");
    }
}

// Flat per-pixel observation table: HR index, value, 1/noise, and the
// Gaussian normalizing constant summed over all pixels.
struct ObsTable {
    std::vector<std::size_t> index;
    std::vector<double> value;
    std::vector<double> inv_noise;
    double log_norm = 0.0;

    explicit ObsTable(const std::vector<Observation>& observations) {
        for (const Observation& o : observations)
            for (int r = 0; r < o.values.height; ++r)
                for (int c = 0; c < o.values.width; ++c) {
                    index.push_back(o.op.hr_index(r, c));
                    value.push_back(o.values.at(r, c));
                    const double nv = o.noise_diag.at(r, c);
                    inv_noise.push_back(1.0 / nv);
                    log_norm += 0.5 * std::log(2.0 * std::numbers::pi * nv);
                }
    }

    std::size_t size() const { return index.size(); }
};

ImageGrid as_grid(std::vector<double> v, int h, int w) {
    ImageGrid g(h, w);
    g.data = std::move(v);
    return g;
}

}  // namespace

GaussianPrior::GaussianPrior(ImageGrid mean_in, DenseMatrix cov_in)
    : mean(std::move(mean_in)), cov(std::move(cov_in)) {
    validate();
}

GaussianPrior GaussianPrior::diagonal(ImageGrid mean_in, const ImageGrid& variance) {
    if (!mean_in.same_shape(variance))
        throw ShapeError("prior mean and variance shapes differ");
    DenseMatrix cov(static_cast<int>(variance.size()), static_cast<int>(variance.size()), 0.0);
    for (int i = 0; i < cov.rows; ++i) {
        const double v = variance.data[static_cast<std::size_t>(i)];
        if (!(v > 0.0) || !std::isfinite(v))
            throw ValueError("prior variances must be positive and finite");
        cov.at(i, i) = v;
    }
    return {std::move(mean_in), std::move(cov)};
}

void GaussianPrior::validate() const {
    if (mean.height <= 0 || mean.width <= 0 || mean.height % 2 != 0 || mean.width % 2 != 0)
        throw ShapeError("prior mean must be a non-empty even-extent raster");
    const int n = static_cast<int>(mean.size());
    if (cov.rows != n || cov.cols != n)
        throw ShapeError("prior covariance must be square with one row per pixel");
    if (n > kDenseCap)
        throw ValueError("prior exceeds the dense-covariance size cap");
    if (!mean.all_finite() || !cov.all_finite())
        throw ValueError("prior entries must be finite");
}

namespace {

// One-dimensional wrapped Gaussian kernel on Z_n: the periodic summation of
// exp(-d^2 / (2 length^2)).  Its discrete Fourier transform is a sampled
// theta function with strictly positive coefficients, so the circulant it
// generates is positive definite -- unlike the shortest-wrap distance
// shortcut, whose eigenvalues can dip below zero.
std::vector<double> wrapped_gaussian(int n, double length) {
    std::vector<double> g(static_cast<std::size_t>(n), 0.0);
    const double inv2l2 = 1.0 / (2.0 * length * length);
    for (int d = 0; d < n; ++d)
        for (int k = -8; k <= 8; ++k) {
            const double x = d + static_cast<double>(k) * n;
            g[static_cast<std::size_t>(d)] += std::exp(-x * x * inv2l2);
        }
    return g;
}

}  // namespace

DenseMatrix periodic_rbf_covariance(int height, int width, double variance, double length,
                                    double nugget) {
    if (height <= 0 || width <= 0) throw ShapeError("covariance grid extents must be positive");
    if (!(variance > 0.0) || !(length > 0.0) || nugget < 0.0 ||
        !std::isfinite(variance) || !std::isfinite(length) || !std::isfinite(nugget))
        throw ValueError("covariance parameters out of range");
    const int n = height * width;
    const std::vector<double> grow = wrapped_gaussian(height, length);
    const std::vector<double> gcol = wrapped_gaussian(width, length);
    const double scale = variance / (grow[0] * gcol[0]);  // unit marginal before nugget
    DenseMatrix cov(n, n);
    par::parallel_for(static_cast<std::size_t>(n), [&](std::size_t p) {
        const int pr = static_cast<int>(p) / width, pc = static_cast<int>(p) % width;
        for (int q = 0; q < n; ++q) {
            const int qr = q / width, qc = q % width;
            const std::size_t dr = static_cast<std::size_t>(((pr - qr) % height + height) % height);
            const std::size_t dc = static_cast<std::size_t>(((pc - qc) % width + width) % width);
            cov.at(static_cast<int>(p), q) = scale * grow[dr] * gcol[dc];
        }
        cov.at(static_cast<int>(p), static_cast<int>(p)) += nugget * variance;
    });
    return cov;
}

void GmmPrior::validate() const {
    if (components.size() < 2) throw ValueError("mixture needs at least two components");
    if (weights.size() != components.size())
        throw ValueError("mixture weight count does not match component count");
    double sum = 0.0, largest = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ValueError("mixture weights must be >= 0");
        sum += w;
        largest = std::max(largest, w);
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ValueError("mixture weights must sum to 1");
    if (largest <= 0.0) throw ValueError("mixture needs at least one positive weight");
    for (const GaussianPrior& c : components) {
        c.validate();
        if (!c.mean.same_shape(components.front().mean))
            throw ShapeError("mixture components must share one grid shape");
    }
}

PosteriorSummary gaussian_posterior(const GaussianPrior& prior,
                                    const std::vector<Observation>& observations) {
    prior.validate();
    check_observations(prior.mean, observations);
    const SpdFactor prior_factor(prior.cov);  // certifies the SPD claim

    if (observations.empty()) {
        std::vector<double> d(prior.mean.size());
        for (int i = 0; i < prior.cov.rows; ++i) d[static_cast<std::size_t>(i)] = prior.cov.at(i, i);
        return {prior.mean, prior.cov, as_grid(std::move(d), prior.mean.height, prior.mean.width)};
    }

    // Selection operators make the data term diagonal: observing pixel k with
    // noise variance R adds 1/R to precision(k, k) and v/R to the rhs.
    DenseMatrix precision = prior_factor.inverse();
    std::vector<double> rhs = prior_factor.solve(prior.mean.data);
    const ObsTable table(observations);
    for (std::size_t m = 0; m < table.size(); ++m) {
        const int k = static_cast<int>(table.index[m]);
        precision.at(k, k) += table.inv_noise[m];
        rhs[table.index[m]] += table.value[m] * table.inv_noise[m];
    }

    const SpdFactor post_factor(precision);
    PosteriorSummary s;
    s.cov = post_factor.inverse();
    s.mean = as_grid(post_factor.solve(rhs), prior.mean.height, prior.mean.width);
    std::vector<double> diag(prior.mean.size());
    for (int i = 0; i < s.cov.rows; ++i) diag[static_cast<std::size_t>(i)] = s.cov.at(i, i);
    s.diag = as_grid(std::move(diag), prior.mean.height, prior.mean.width);
    return s;
}

double log_evidence(const GaussianPrior& prior, const std::vector<Observation>& observations) {
    prior.validate();
    check_observations(prior.mean, observations);
    const ObsTable table(observations);
    const int m = static_cast<int>(table.size());
    if (m == 0) return 0.0;

    // Stacked marginal: v ~ Normal(A mu0, A Sigma0 A^T + R), and selection
    // rows make (A Sigma0 A^T)(i,j) a plain covariance lookup.
    DenseMatrix s(m, m);
    std::vector<double> resid(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const std::size_t ki = table.index[static_cast<std::size_t>(i)];
        for (int j = 0; j < m; ++j)
            s.at(i, j) = prior.cov.at(static_cast<int>(ki),
                                      static_cast<int>(table.index[static_cast<std::size_t>(j)]));
        s.at(i, i) += 1.0 / table.inv_noise[static_cast<std::size_t>(i)];
        resid[static_cast<std::size_t>(i)] =
            table.value[static_cast<std::size_t>(i)] - prior.mean.data[ki];
    }
    const SpdFactor factor(s);
    const std::vector<double> solved = factor.solve(resid);
    double quad = 0.0;
    for (int i = 0; i < m; ++i)
        quad += resid[static_cast<std::size_t>(i)] * solved[static_cast<std::size_t>(i)];
    return -0.5 * quad - 0.5 * factor.logdet() - 0.5 * m * std::log(2.0 * std::numbers::pi);
}

PosteriorSummary gmm_posterior(const GmmPrior& prior,
                               const std::vector<Observation>& observations) {
    prior.validate();
    std::vector<PosteriorSummary> posts;
    std::vector<double> logw;
    for (std::size_t k = 0; k < prior.components.size(); ++k) {
        if (prior.weights[k] == 0.0) continue;  // exactly skippable
        posts.push_back(gaussian_posterior(prior.components[k], observations));
        logw.push_back(std::log(prior.weights[k]) +
                       log_evidence(prior.components[k], observations));
    }
    const double top = *std::max_element(logw.begin(), logw.end());
    if (!std::isfinite(top))
        throw ValueError("mixture evidence underflowed in every component");
    double norm = 0.0;
    for (double& lw : logw) {
        lw = std::exp(lw - top);
        norm += lw;
    }
    for (double& w : logw) w /= norm;  // logw now holds posterior weights

    const ImageGrid& shape = prior.components.front().mean;
    const int n = static_cast<int>(shape.size());
    PosteriorSummary out;
    out.mean = ImageGrid(shape.height, shape.width, 0.0);
    for (std::size_t k = 0; k < posts.size(); ++k)
        for (std::size_t i = 0; i < out.mean.size(); ++i)
            out.mean.data[i] += logw[k] * posts[k].mean.data[i];

    // Law of total variance: within-component covariance plus the spread of
    // the component means around the mixture mean.
    out.cov = DenseMatrix(n, n, 0.0);
    for (std::size_t k = 0; k < posts.size(); ++k) {
        const double w = logw[k];
        par::parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
            const double di = posts[k].mean.data[i] - out.mean.data[i];
            for (int j = 0; j < n; ++j) {
                const double dj = posts[k].mean.data[static_cast<std::size_t>(j)] -
                                  out.mean.data[static_cast<std::size_t>(j)];
                out.cov.at(static_cast<int>(i), j) +=
                    w * (posts[k].cov.at(static_cast<int>(i), j) + di * dj);
            }
        });
    }
    std::vector<double> diag(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = out.cov.at(i, i);
    out.diag = as_grid(std::move(diag), shape.height, shape.width);
    return out;
}

SampleFn prior_sampler(const GaussianPrior& prior) {
    prior.validate();
    auto mean = std::make_shared<const ImageGrid>(prior.mean);
    auto chol = std::make_shared<const DenseMatrix>(SpdFactor(prior.cov).lower());
    return [mean, chol](std::uint64_t key) {
        rng::Prng p(key, 0);
        const int n = chol->rows;
        std::vector<double> xi(static_cast<std::size_t>(n));
        for (double& x : xi) x = p.next_gaussian();
        ImageGrid out(mean->height, mean->width);
        for (int i = 0; i < n; ++i) {
            double s = mean->data[static_cast<std::size_t>(i)];
            for (int j = 0; j <= i; ++j) s += chol->at(i, j) * xi[static_cast<std::size_t>(j)];
            out.data[static_cast<std::size_t>(i)] = s;
        }
        return out;
    };
}

SampleFn prior_sampler(const GmmPrior& prior) {
    prior.validate();
    auto cumulative = std::make_shared<std::vector<double>>();
    auto draws = std::make_shared<std::vector<SampleFn>>();
    double acc = 0.0;
    for (std::size_t k = 0; k < prior.components.size(); ++k) {
        if (prior.weights[k] == 0.0) continue;
        acc += prior.weights[k];
        cumulative->push_back(acc);
        draws->push_back(prior_sampler(prior.components[k]));
    }
    cumulative->back() = 1.0;  // absorb the 1e-12 normalization slack
    return [cumulative, draws](std::uint64_t key) {
        rng::Prng p(key, 0);
        const double pick = p.next_unit();
        std::size_t k = 0;
        while (k + 1 < cumulative->size() && pick > (*cumulative)[k]) ++k;
        // Re-key so the component draw does not alias the selection draw.
        return (*draws)[k](rng::splitmix64(key));
    };
}

McPosterior mc_posterior(const SampleFn& sample, const std::vector<Observation>& observations,
                         std::int64_t n_samples, std::uint64_t seed) {
    if (!sample) throw ValueError("posterior sampler is empty");
    if (n_samples < 1000) throw ValueError("Monte-Carlo posterior needs at least 1000 samples");
    const ImageGrid anchor = sample(rng::derive_seed(seed, 0));
    if (anchor.height <= 0 || anchor.width <= 0 || !anchor.all_finite())
        throw ValueError("posterior sampler returned an invalid draw");
    check_observations(anchor, observations);
    const ObsTable table(observations);
    const std::size_t nn = anchor.size();
    const std::size_t n = static_cast<std::size_t>(n_samples);

    // Pass 1: log importance weights (likelihood of the observations).
    std::vector<double> logw(n);
    std::atomic<bool> bad_shape{false};
    par::parallel_for(n, [&](std::size_t i) {
        const ImageGrid u = sample(rng::derive_seed(seed, i));
        if (u.size() != nn) {
            bad_shape.store(true, std::memory_order_relaxed);
            logw[i] = -std::numeric_limits<double>::infinity();
            return;
        }
        double quad = 0.0;
        for (std::size_t m = 0; m < table.size(); ++m) {
            const double d = u.data[table.index[m]] - table.value[m];
            quad += table.inv_noise[m] * d * d;
        }
        logw[i] = -0.5 * quad - table.log_norm;
    });
    if (bad_shape.load()) throw ValueError("posterior sampler changed its output shape");
    double top = -std::numeric_limits<double>::infinity();
    for (double lw : logw) top = std::max(top, lw);
    if (!std::isfinite(top)) throw ValueError("every importance weight vanished");

    // Pass 2: weighted moments, anchored at the first draw to avoid
    // cancellation.  Layout: [outer nn*nn][first nn][w^2 d nn][w^2 d^2 nn][sum w][sum w^2].
    const std::size_t o_outer = 0, o_first = nn * nn, o_wd = o_first + nn, o_wdd = o_wd + nn;
    const std::size_t o_w = o_wdd + nn, o_ww = o_w + 1;
    std::vector<double> acc(nn * nn + 3 * nn + 2, 0.0);
    par::accumulate(
        n, acc,
        [&](std::size_t i, std::span<double> a) {
            const ImageGrid u = sample(rng::derive_seed(seed, i));
            const double w = std::exp(logw[i] - top);
            const double ww = w * w;
            for (std::size_t j = 0; j < nn; ++j) {
                const double dj = u.data[j] - anchor.data[j];
                for (std::size_t k = j; k < nn; ++k)
                    a[o_outer + j * nn + k] += w * dj * (u.data[k] - anchor.data[k]);
                a[o_first + j] += w * dj;
                a[o_wd + j] += ww * dj;
                a[o_wdd + j] += ww * dj * dj;
            }
            a[o_w] += w;
            a[o_ww] += ww;
        },
        par::kScalarChunk);

    const double sum_w = acc[o_w], sum_ww = acc[o_ww];
    McPosterior result;
    result.ess = sum_w * sum_w / sum_ww;
    result.reliable = result.ess >= kMinEss;

    std::vector<double> shift(nn);  // weighted mean of (u - anchor)
    for (std::size_t j = 0; j < nn; ++j) shift[j] = acc[o_first + j] / sum_w;

    result.summary.mean = ImageGrid(anchor.height, anchor.width);
    result.mean_se = ImageGrid(anchor.height, anchor.width);
    for (std::size_t j = 0; j < nn; ++j) {
        result.summary.mean.data[j] = anchor.data[j] + shift[j];
        const double var_of_mean =
            (acc[o_wdd + j] - 2.0 * shift[j] * acc[o_wd + j] + shift[j] * shift[j] * sum_ww) /
            (sum_w * sum_w);
        result.mean_se.data[j] = std::sqrt(std::max(var_of_mean, 0.0));
    }

    const int ni = static_cast<int>(nn);
    result.summary.cov = DenseMatrix(ni, ni);
    for (std::size_t j = 0; j < nn; ++j)
        for (std::size_t k = j; k < nn; ++k) {
            double c = acc[o_outer + j * nn + k] / sum_w - shift[j] * shift[k];
            if (k == j) c = std::max(c, 0.0);
            result.summary.cov.at(static_cast<int>(j), static_cast<int>(k)) = c;
            result.summary.cov.at(static_cast<int>(k), static_cast<int>(j)) = c;
        }
    result.summary.diag = ImageGrid(anchor.height, anchor.width);
    for (std::size_t j = 0; j < nn; ++j)
        result.summary.diag.data[j] =
            result.summary.cov.at(static_cast<int>(j), static_cast<int>(j));
    return result;
}

}  // namespace uqsr
