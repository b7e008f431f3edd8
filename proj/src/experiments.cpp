#include "uqsr/experiments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "uqsr/config.hpp"
#include "uqsr/degrade.hpp"
#include "uqsr/errors.hpp"
#include "uqsr/grid.hpp"
#include "uqsr/loss.hpp"
#include "uqsr/metrics.hpp"
#include "uqsr/optim.hpp"
#include "uqsr/par.hpp"
#include "uqsr/posterior.hpp"
#include "uqsr/risk.hpp"
#include "uqsr/rng.hpp"

namespace uqsr {

std::string csv_field(const std::string& raw) {
    if (raw.find_first_of(",\"\n") == std::string::npos) return raw;
    std::string quoted = "\"";
    for (char c : raw) {
        quoted += c;
        if (c == '"') quoted += '"';
    }
    quoted += '"';
    return quoted;
}

namespace {

namespace fs = std::filesystem;

std::string format_value(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", value);
    return buf;
}

/// Appends rows of the uniform results schema.  Opened in binary mode so the
/// line terminator is LF on every platform; values are rendered with %.12g,
/// which round-trips the doubles produced here and keeps the file
/// byte-identical across thread counts.
class CsvWriter {
  public:
    explicit CsvWriter(const fs::path& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw IoError("cannot open " + path.string() + " for writing");
        out_ << "config_hash,experiment,instance,scope,metric,value\n";
    }

    void row(const std::string& hash, const std::string& experiment, long instance,
             const std::string& scope, const std::string& metric, double value) {
        out_ << hash << ',' << csv_field(experiment) << ',' << instance << ','
             << csv_field(scope) << ',' << csv_field(metric) << ',' << format_value(value)
             << '\n';
    }

    void close() {
        out_.close();
        if (!out_) throw IoError("failed writing " + path_.string());
    }

  private:
    fs::path path_;
    std::ofstream out_;
};

/// Shared state of one experiment run: the (override-adjusted) config, the
/// open results writer, the artifact list for the manifest, and the overall
/// verdict accumulated by check().
struct Context {
    Config config;
    std::string experiment;
    std::string hash;
    fs::path out;
    bool quiet = false;
    std::uint64_t seed = 0;
    std::unique_ptr<CsvWriter> csv;
    std::vector<std::string> artifacts;
    bool all_pass = true;

    void note(const std::string& line) const {
        if (!quiet) std::cout << line << '\n';
    }

    void check(const std::string& name, bool pass, const std::string& detail) {
        if (!pass) all_pass = false;
        const std::string line =
            "check " + name + ": " + (pass ? "PASS" : "FAIL") + (detail.empty() ? "" : "  (" + detail + ")");
        if (!quiet) {
            std::cout << line << '\n';
        } else if (!pass) {
            std::cerr << line << '\n';
        }
    }

    void row(long instance, const std::string& scope, const std::string& metric, double value) {
        csv->row(hash, experiment, instance, scope, metric, value);
    }

    void save_raster(const std::string& name, const ImageGrid& grid) {
        write_raster((out / name).string(), grid);
        artifacts.push_back(name);
        artifacts.push_back(fs::path(name).replace_extension(".hdr").string());
    }
};

// ---------------------------------------------------------------------------
// Config access with range checks that name the offending key.

long positive_count(Config& config, const std::string& key, long fallback) {
    const long v = config.get_int(key, fallback);
    if (v <= 0)
        throw ConfigError("key \"" + key + "\" must be positive, got " + std::to_string(v));
    return v;
}

int even_extent(Config& config, const std::string& key, long fallback) {
    const long v = config.get_int(key, fallback);
    if (v < 2 || v % 2 != 0)
        throw ConfigError("key \"" + key + "\" must be an even extent >= 2, got " +
                          std::to_string(v));
    return static_cast<int>(v);
}

double positive_real(Config& config, const std::string& key, double fallback) {
    const double v = config.get_real(key, fallback);
    if (!(v > 0.0))
        throw ConfigError("key \"" + key + "\" must be positive, got " + format_value(v));
    return v;
}

double nonneg_real(Config& config, const std::string& key, double fallback) {
    const double v = config.get_real(key, fallback);
    if (!(v >= 0.0))
        throw ConfigError("key \"" + key + "\" must be non-negative, got " + format_value(v));
    return v;
}

RHatMode parse_noise_mode(Config& config) {
    const std::string mode = config.get_string("risk.mode", "exact");
    if (mode == "exact") return RHatMode::kExactDiag;
    if (mode == "plugin") return RHatMode::kFromMeanEstimate;
    if (mode == "zero") return RHatMode::kZero;
    throw ConfigError("key \"risk.mode\": expected exact, plugin, or zero, got \"" + mode + "\"");
}

// ---------------------------------------------------------------------------
// Synthetic instance builders.

ImageGrid random_grid(rng::Prng& rng, int h, int w, double lo, double hi) {
    ImageGrid g(h, w);
    for (double& v : g.data) v = rng.next_uniform(lo, hi);
    return g;
}

/// Well-conditioned random SPD matrix: scale * (W W^T / n + 0.05 I).
DenseMatrix random_spd(rng::Prng& rng, int n, double scale) {
    DenseMatrix w(n, n);
    for (double& v : w.entries) v = rng.next_uniform(-1.0, 1.0);
    DenseMatrix m(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) acc += w.at(i, k) * w.at(j, k);
            double v = scale * acc / n;
            if (i == j) v += 0.05 * scale;
            m.at(i, j) = v;
            m.at(j, i) = v;
        }
    }
    return m;
}

ImageGrid diag_of(const DenseMatrix& cov, int h, int w) {
    ImageGrid d(h, w);
    for (std::size_t k = 0; k < d.size(); ++k) d.data[k] = cov.at(static_cast<int>(k), static_cast<int>(k));
    return d;
}

/// Random scene distribution with a dense unstructured covariance.
PosteriorSummary synth_scene(rng::Prng& rng, int hr_h, int hr_w, double scale) {
    PosteriorSummary post;
    post.mean = random_grid(rng, hr_h, hr_w, 0.2, 0.8);
    post.cov = random_spd(rng, hr_h * hr_w, scale);
    post.diag = diag_of(post.cov, hr_h, hr_w);
    return post;
}

/// Random scene distribution with a stationary smooth covariance.
PosteriorSummary rbf_scene(rng::Prng& rng, int hr_h, int hr_w, double variance, double length,
                           double nugget) {
    PosteriorSummary post;
    post.mean = random_grid(rng, hr_h, hr_w, 0.2, 0.8);
    post.cov = periodic_rbf_covariance(hr_h, hr_w, variance * rng.next_uniform(0.8, 1.2), length,
                                       nugget);
    post.diag = diag_of(post.cov, hr_h, hr_w);
    return post;
}

/// One noisy low-resolution view of `u` on the given phase, with constant
/// noise variance sigma2.
Observation observe_phase(const ImageGrid& u, SubgridId tau, double sigma2, std::uint64_t seed) {
    const ShiftSubsampleOp op = ShiftSubsampleOp::for_subgrid(tau, u.height, u.width);
    const ImageGrid clean = op.apply(u);
    return Observation{op, sample_noise(clean, NoiseModel(0.0, sigma2), seed),
                       ImageGrid(clean.height, clean.width, sigma2)};
}

constexpr const char* kTauScope[4] = {"tau00", "tau01", "tau10", "tau11"};

// ---------------------------------------------------------------------------
// gradcheck: finite-difference consistency of every analytic gradient.

void run_gradcheck(Context& ctx) {
    Config& cfg = ctx.config;
    const int hr_h = even_extent(cfg, "hr_height", 4);
    const int hr_w = even_extent(cfg, "hr_width", 4);
    const long instances = positive_count(cfg, "instances", 100);
    const long frozen_draws = positive_count(cfg, "frozen_draws", 2000);
    const double limit = positive_real(cfg, "check.fd_limit", 1e-5);
    const double noise_a = nonneg_real(cfg, "noise.a", 0.08);
    const double noise_b = nonneg_real(cfg, "noise.b", 1e-3);
    cfg.finish();

    const int nn = hr_h * hr_w;
    const auto n = static_cast<std::size_t>(nn);
    const NoiseModel model(noise_a, noise_b);
    constexpr RHatMode kModes[3] = {RHatMode::kExactDiag, RHatMode::kFromMeanEstimate,
                                    RHatMode::kZero};
    constexpr const char* kOps[5] = {"closed_risk", "frozen_risk", "selfsup_diag", "selfsup_full",
                                     "supervised"};

    double worst = 0.0;
    for (long i = 0; i < instances; ++i) {
        rng::Prng rng(rng::derive_seed(rng::derive_seed(ctx.seed, 0x6A), static_cast<std::uint64_t>(i)), 0);
        const PosteriorSummary scene = synth_scene(rng, hr_h, hr_w, 0.25);
        const RiskProblem problem =
            RiskProblem::gaussian(scene, model, kModes[static_cast<std::size_t>(i % 3)]);

        // Shared evaluation point: a mean raster and log-variances, kept away
        // from every clamp so each objective is smooth where we differentiate.
        std::vector<double> point(2 * n);
        for (std::size_t k = 0; k < n; ++k) point[k] = rng.next_uniform(0.2, 0.8);
        for (std::size_t k = 0; k < n; ++k) point[n + k] = std::log(rng.next_uniform(0.05, 0.5));

        const auto unpack = [&](std::span<const double> x, ImageGrid& mean, ImageGrid& var) {
            mean = ImageGrid(hr_h, hr_w);
            var = ImageGrid(hr_h, hr_w);
            for (std::size_t k = 0; k < n; ++k) {
                mean.data[k] = x[k];
                var.data[k] = std::exp(x[n + k]);
            }
        };

        std::array<double, 5> fd{};

        const Objective closed_obj = [&](std::span<const double> x, std::span<double> g) {
            ImageGrid mean, var;
            unpack(x, mean, var);
            const RiskGradient rg =
                risk_closed_form_grad(problem, EstimatorState::diagonal(mean, var));
            for (std::size_t k = 0; k < n; ++k) {
                g[k] = rg.mean_grad.data[k];
                g[n + k] = rg.var_grad.data[k] * var.data[k];
            }
            return rg.value;
        };
        fd[0] = fd_check(closed_obj, point);

        const FrozenRiskSamples frozen = FrozenRiskSamples::draw(
            problem, static_cast<std::uint64_t>(frozen_draws),
            rng::derive_seed(rng::derive_seed(ctx.seed, 0xF0), static_cast<std::uint64_t>(i)));
        const Objective frozen_obj = [&](std::span<const double> x, std::span<double> g) {
            ImageGrid mean, var;
            unpack(x, mean, var);
            const RiskGradient rg = frozen.risk_grad(EstimatorState::diagonal(mean, var));
            for (std::size_t k = 0; k < n; ++k) {
                g[k] = rg.mean_grad.data[k];
                g[n + k] = rg.var_grad.data[k] * var.data[k];
            }
            return rg.value;
        };
        fd[1] = fd_check(frozen_obj, point);

        // Single-frame losses at a fixed observation; the plug-in noise
        // estimate is held constant so the analytic partials match what the
        // finite differences see.
        const SubgridId tau = SubgridId::from_index(static_cast<int>(i % 4));
        const ImageGrid z = random_grid(rng, hr_h / 2, hr_w / 2, 0.0, 1.0);
        const NoiseCovEstimate r_hat = estimate_noise_cov(scene.mean, tau, model);

        const Objective diag_obj = [&](std::span<const double> x, std::span<double> g) {
            ImageGrid mean, var;
            unpack(x, mean, var);
            const EstimatorState est = EstimatorState::diagonal(mean, var);
            const double value = selfsup_nll_diag(z, est, tau, r_hat);
            const ImageGrid gm = grad_mean_diag(z, est, tau, r_hat);
            const ImageGrid gv = grad_variance_diag(z, est, tau, r_hat);
            for (std::size_t k = 0; k < n; ++k) {
                g[k] = gm.data[k];
                g[n + k] = gv.data[k] * var.data[k];
            }
            return value;
        };
        fd[2] = fd_check(diag_obj, point);

        // Full-covariance loss over the mean and the Cholesky factor.
        std::vector<double> full_point(n + n * (n + 1) / 2);
        for (std::size_t k = 0; k < n; ++k) full_point[k] = point[k];
        {
            std::size_t idx = n;
            for (int r = 0; r < nn; ++r)
                for (int c = 0; c <= r; ++c)
                    full_point[idx++] =
                        (c == r) ? rng.next_uniform(0.3, 0.8) : rng.next_uniform(-0.2, 0.2);
        }
        const Objective full_obj = [&](std::span<const double> x, std::span<double> g) {
            ImageGrid mean(hr_h, hr_w);
            for (std::size_t k = 0; k < n; ++k) mean.data[k] = x[k];
            DenseMatrix factor(nn, nn, 0.0);
            std::size_t idx = n;
            for (int r = 0; r < nn; ++r)
                for (int c = 0; c <= r; ++c) factor.at(r, c) = x[idx++];
            const EstimatorState est = EstimatorState::full(mean, factor);
            const double value = selfsup_nll_full(z, est, tau, r_hat);
            const FullGradient fg = grad_full(z, est, tau, r_hat);
            for (std::size_t k = 0; k < n; ++k) g[k] = fg.mean_grad.data[k];
            idx = n;
            for (int r = 0; r < nn; ++r)
                for (int c = 0; c <= r; ++c) g[idx++] = fg.factor_grad.at(r, c);
            return value;
        };
        fd[3] = fd_check(full_obj, full_point);

        const ImageGrid reference = random_grid(rng, hr_h, hr_w, 0.0, 1.0);
        const Objective supervised_obj = [&](std::span<const double> x, std::span<double> g) {
            ImageGrid mean, var;
            unpack(x, mean, var);
            const double value = supervised_nll(reference, mean, var);
            for (std::size_t k = 0; k < n; ++k) {
                const double v = var.data[k];
                const double resid = mean.data[k] - reference.data[k];
                g[k] = resid / v;
                g[n + k] = 0.5 * (1.0 / v - resid * resid / (v * v)) * v;
            }
            return value;
        };
        fd[4] = fd_check(supervised_obj, point);

        for (std::size_t op = 0; op < 5; ++op) {
            ctx.row(i, kOps[op], "fd", fd[op]);
            worst = std::max(worst, fd[op]);
        }
    }

    ctx.row(-1, "summary", "fd_worst", worst);
    ctx.check("gradient_consistency", worst <= limit,
              "worst relative discrepancy " + format_value(worst) + ", limit " +
                  format_value(limit));
}

// ---------------------------------------------------------------------------
// stationarity: first-order residuals vanish at the known risk optimum.

void run_stationarity(Context& ctx) {
    Config& cfg = ctx.config;
    const int hr_max = even_extent(cfg, "hr_max", 8);
    const long instances = positive_count(cfg, "instances", 20);
    const double limit = positive_real(cfg, "check.residual_limit", 1e-10);
    const double noise_b = positive_real(cfg, "noise.b", 2.5e-3);
    cfg.finish();

    std::vector<int> sizes;
    for (int s = 2; s <= hr_max; s += 2) sizes.push_back(s);

    double worst_mean = 0.0;
    double worst_var = 0.0;
    double worst_cov = 0.0;
    for (long i = 0; i < instances; ++i) {
        const int h = sizes[static_cast<std::size_t>(i) % sizes.size()];
        rng::Prng rng(rng::derive_seed(rng::derive_seed(ctx.seed, 0x57), static_cast<std::uint64_t>(i)), 0);
        const PosteriorSummary scene = synth_scene(rng, h, h, 0.25);

        // Alternate between noisy observations with the exact noise rule and
        // noiseless observations with no correction; both have the same known
        // optimum in the mean and the (co)variance.
        const bool noiseless = (i % 2 == 1);
        RiskProblem problem =
            RiskProblem::gaussian(scene, noiseless ? NoiseModel() : NoiseModel(0.0, noise_b),
                                  noiseless ? RHatMode::kZero : RHatMode::kExactDiag);
        std::array<double, 4> tau_weights{};
        double total = 0.0;
        for (double& w : tau_weights) {
            w = rng.next_uniform(0.5, 1.5);
            total += w;
        }
        for (double& w : tau_weights) w /= total;
        problem.tau_weights = tau_weights;

        const EstimatorState diag_est = EstimatorState::diagonal(scene.mean, scene.diag);
        const double mean_diag = stationarity_mean_residual(problem, diag_est);
        const double var_diag = stationarity_var_residual_diag(problem, diag_est);
        ctx.row(i, "diag", "mean_residual", mean_diag);
        ctx.row(i, "diag", "var_residual", var_diag);
        worst_mean = std::max(worst_mean, mean_diag);
        worst_var = std::max(worst_var, var_diag);

        const EstimatorState full_est =
            EstimatorState::full(scene.mean, SpdFactor(scene.cov).lower());
        const double mean_full = stationarity_mean_residual(problem, full_est);
        ctx.row(i, "full", "mean_residual", mean_full);
        worst_mean = std::max(worst_mean, mean_full);
        if (!noiseless) {
            // The full-matrix condition compares against the exact observed
            // covariance, which the noiseless loss only sees through a tiny
            // positivity clamp; it is exact in the noisy setting.
            const double cov_full = stationarity_cov_residual_full(problem, full_est);
            ctx.row(i, "full", "cov_residual", cov_full);
            worst_cov = std::max(worst_cov, cov_full);
        }
    }

    ctx.row(-1, "summary", "mean_residual_worst", worst_mean);
    ctx.row(-1, "summary", "var_residual_worst", worst_var);
    ctx.row(-1, "summary", "cov_residual_worst", worst_cov);
    ctx.check("mean_residual", worst_mean <= limit,
              "worst " + format_value(worst_mean) + ", limit " + format_value(limit));
    ctx.check("var_residual", worst_var <= limit,
              "worst " + format_value(worst_var) + ", limit " + format_value(limit));
    ctx.check("cov_residual", worst_cov <= limit,
              "worst " + format_value(worst_cov) + ", limit " + format_value(limit));
}

// ---------------------------------------------------------------------------
// prop1: random-restart minimization recovers the predicted optimum.

void run_prop1(Context& ctx) {
    Config& cfg = ctx.config;
    const std::string prior_kind = cfg.get_string("prior", "gaussian");
    if (prior_kind != "gaussian" && prior_kind != "gmm")
        throw ConfigError("key \"prior\": expected gaussian or gmm, got \"" + prior_kind + "\"");
    const int hr_h = even_extent(cfg, "hr_height", prior_kind == "gmm" ? 2 : 4);
    const int hr_w = even_extent(cfg, "hr_width", hr_h);
    const long instances = positive_count(cfg, "instances", 3);
    const long restarts = positive_count(cfg, "restarts", 20);
    const double rel_tol = positive_real(cfg, "rel_tol", 1e-4);
    const std::uint64_t mc_samples = cfg.get_u64("mc_samples", 0);
    const long max_iters = positive_count(cfg, "optim.max_iters", 50000);
    const double grad_tol = positive_real(cfg, "optim.grad_tol", 1e-8);
    const double noise_a = nonneg_real(cfg, "noise.a", 0.0);
    const double noise_b = nonneg_real(cfg, "noise.b", 2.5e-3);
    const RHatMode mode = parse_noise_mode(cfg);
    const double variance = positive_real(cfg, "prior.variance", 0.25);
    const double length = positive_real(cfg, "prior.length", 1.5);
    const double nugget = positive_real(cfg, "prior.nugget", 1e-4);
    const long components =
        prior_kind == "gmm" ? positive_count(cfg, "prior.components", 2) : 1;
    cfg.finish();

    const NoiseModel model(noise_a, noise_b);
    bool all_ok = true;
    for (long i = 0; i < instances; ++i) {
        rng::Prng rng(rng::derive_seed(rng::derive_seed(ctx.seed, 0xB0), static_cast<std::uint64_t>(i)), 0);
        RiskProblem problem;
        if (components == 1) {
            problem = RiskProblem::gaussian(rbf_scene(rng, hr_h, hr_w, variance, length, nugget),
                                            model, mode);
        } else {
            std::vector<double> weights(static_cast<std::size_t>(components));
            std::vector<PosteriorSummary> comps;
            double total = 0.0;
            for (double& w : weights) {
                w = rng.next_uniform(0.5, 1.5);
                total += w;
            }
            for (double& w : weights) w /= total;
            for (long c = 0; c < components; ++c)
                comps.push_back(rbf_scene(rng, hr_h, hr_w, variance, length, nugget));
            problem = RiskProblem::mixture(std::move(weights), std::move(comps), model, mode);
        }

        Prop1Options options;
        options.restarts = static_cast<int>(restarts);
        options.rel_tol = rel_tol;
        options.mc_samples = mc_samples;
        options.seed = rng::derive_seed(rng::derive_seed(ctx.seed, 0x91), static_cast<std::uint64_t>(i));
        options.optim.max_iters = static_cast<int>(max_iters);
        options.optim.grad_tol = grad_tol;

        const Prop1Report report = verify_proposition1(problem, options);
        for (std::size_t r = 0; r < report.runs.size(); ++r) {
            const Prop1Run& run = report.runs[r];
            char scope[16];
            std::snprintf(scope, sizeof scope, "run_%02zu", r);
            ctx.row(i, scope, "mean_rel_err", run.mean_rel_err);
            ctx.row(i, scope, "var_rel_err", run.var_rel_err);
            ctx.row(i, scope, "risk", run.risk_value);
            ctx.row(i, scope, "iterations", run.iterations);
            ctx.row(i, scope, "converged", run.converged ? 1.0 : 0.0);
        }
        ctx.row(i, "summary", "matched", report.all_matched ? 1.0 : 0.0);
        ctx.row(i, "summary", "converged", report.all_converged ? 1.0 : 0.0);
        ctx.row(i, "summary", "min_operator_diag", report.min_operator_diag);
        const bool ok =
            report.all_matched && report.all_converged && report.min_operator_diag > 0.0;
        all_ok = all_ok && ok;
        ctx.note("instance " + std::to_string(i) + ": " + (ok ? "recovered" : "NOT recovered"));

        if (i == 0) {
            ctx.save_raster("expected_mean.raw", report.expected_mean);
            ctx.save_raster("expected_variance.raw", report.expected_variance);
            if (!report.runs.empty()) {
                ctx.save_raster("recovered_mean.raw", report.runs.front().mean);
                ctx.save_raster("recovered_variance.raw", report.runs.front().variance);
            }
        }
    }

    ctx.check("optimum_recovered", all_ok,
              std::to_string(instances) + " instances, " + std::to_string(restarts) +
                  " restarts each, tolerance " + format_value(rel_tol));
}

// ---------------------------------------------------------------------------
// coverage_study: the exact pipeline's intervals hit their nominal level.

void run_coverage(Context& ctx) {
    Config& cfg = ctx.config;
    const int hr_h = even_extent(cfg, "hr_height", 8);
    const int hr_w = even_extent(cfg, "hr_width", 8);
    const long instances = positive_count(cfg, "instances", 15625);
    const double prior_mean = cfg.get_real("prior.mean", 0.5);
    const double variance = positive_real(cfg, "prior.variance", 0.04);
    const double length = positive_real(cfg, "prior.length", 1.5);
    const double nugget = positive_real(cfg, "prior.nugget", 1e-4);
    const double noise_a = nonneg_real(cfg, "noise.a", 0.0);
    if (noise_a != 0.0)
        throw ConfigError(
            "key \"noise.a\": the conjugate coverage oracle needs signal-independent noise; "
            "set noise.a = 0");
    const double noise_b = positive_real(cfg, "noise.b", 2.5e-3);
    const double coverage_limit = positive_real(cfg, "check.coverage_limit", 0.005);
    const double ce_limit = positive_real(cfg, "check.ce_limit", 0.005);
    cfg.finish();

    const GaussianPrior prior(ImageGrid(hr_h, hr_w, prior_mean),
                              periodic_rbf_covariance(hr_h, hr_w, variance, length, nugget));
    const SampleFn sample = prior_sampler(prior);

    CoverageAccumulator accumulator{default_levels()};
    double sq_sum = 0.0;       // sum of squared mean errors
    double vr_sum = 0.0;       // sum of squared (variance - squared error) gaps
    double sharpness_sum = 0.0;
    for (long i = 0; i < instances; ++i) {
        const auto key = static_cast<std::uint64_t>(i);
        const ImageGrid u = sample(rng::derive_seed(rng::derive_seed(ctx.seed, 0x5C), key));
        const std::uint64_t noise_seed = rng::derive_seed(rng::derive_seed(ctx.seed, 0xA0), key);
        std::vector<Observation> observations;
        for (int t = 0; t < 4; ++t)
            observations.push_back(observe_phase(u, SubgridId::from_index(t), noise_b,
                                                 rng::derive_seed(noise_seed, static_cast<std::uint64_t>(t))));
        const PosteriorSummary post = gaussian_posterior(prior, observations);
        accumulator.add(u, post.mean, post.diag);
        for (std::size_t k = 0; k < u.size(); ++k) {
            const double err = u.data[k] - post.mean.data[k];
            sq_sum += err * err;
            const double gap = post.diag.data[k] - err * err;
            vr_sum += gap * gap;
        }
        sharpness_sum += sharpness(post.diag, 0.9);
        if (i == 0) {
            ctx.save_raster("scene.raw", u);
            ctx.save_raster("posterior_mean.raw", post.mean);
            ctx.save_raster("posterior_variance.raw", post.diag);
        }
    }

    const CoverageCurve curve = accumulator.curve();
    double max_gap = 0.0;
    for (std::size_t j = 0; j < curve.nominal_levels.size(); ++j) {
        const double gap = std::abs(curve.empirical_levels[j] - curve.nominal_levels[j]);
        max_gap = std::max(max_gap, gap);
        ctx.row(static_cast<long>(j), "curve", "nominal", curve.nominal_levels[j]);
        ctx.row(static_cast<long>(j), "curve", "empirical", curve.empirical_levels[j]);
        ctx.row(static_cast<long>(j), "curve", "gap", gap);
    }
    const auto pixels = static_cast<double>(accumulator.pixels());
    const double ce = calibration_error(curve);
    ctx.row(-1, "summary", "pixels", pixels);
    ctx.row(-1, "summary", "max_coverage_gap", max_gap);
    ctx.row(-1, "summary", "calibration_error", ce);
    ctx.row(-1, "summary", "rmse", std::sqrt(sq_sum / pixels));
    ctx.row(-1, "summary", "v_rmse", std::sqrt(vr_sum / pixels));
    ctx.row(-1, "summary", "sharpness", sharpness_sum / static_cast<double>(instances));

    ctx.check("coverage_within_limit", max_gap <= coverage_limit,
              "max deviation " + format_value(max_gap) + " over " +
                  std::to_string(curve.nominal_levels.size()) + " levels at " +
                  format_value(pixels) + " pixels, limit " + format_value(coverage_limit));
    ctx.check("calibration_error", ce <= ce_limit,
              format_value(ce) + " vs limit " + format_value(ce_limit));
}

// ---------------------------------------------------------------------------
// subgrid_study: the least-noisy phase reconstructs best.

void run_subgrid(Context& ctx) {
    Config& cfg = ctx.config;
    const int hr_h = even_extent(cfg, "hr_height", 12);
    const int hr_w = even_extent(cfg, "hr_width", 12);
    const long instances = positive_count(cfg, "instances", 400);
    const long frames = positive_count(cfg, "frames", 6);
    if (frames < 4)
        throw ConfigError("key \"frames\" must be at least 4 so every phase is observed");
    const double prior_mean = cfg.get_real("prior.mean", 0.5);
    const double variance = positive_real(cfg, "prior.variance", 0.04);
    const double length = positive_real(cfg, "prior.length", 1.5);
    const double nugget = positive_real(cfg, "prior.nugget", 1e-4);
    const double sigma_ref = positive_real(cfg, "burst.sigma_ref", 0.02);
    const double sigma_lo = positive_real(cfg, "burst.sigma_lo", 0.07);
    const double sigma_hi = positive_real(cfg, "burst.sigma_hi", 0.11);
    if (sigma_hi < sigma_lo)
        throw ConfigError("key \"burst.sigma_hi\" must be at least burst.sigma_lo");
    const double fraction_limit = positive_real(cfg, "check.fraction", 0.95);
    cfg.finish();

    const GaussianPrior prior(ImageGrid(hr_h, hr_w, prior_mean),
                              periodic_rbf_covariance(hr_h, hr_w, variance, length, nugget));
    const SampleFn sample = prior_sampler(prior);

    long reference_smallest = 0;
    for (long i = 0; i < instances; ++i) {
        const auto key = static_cast<std::uint64_t>(i);
        const ImageGrid u = sample(rng::derive_seed(rng::derive_seed(ctx.seed, 0x5B), key));
        rng::Prng rng(rng::derive_seed(rng::derive_seed(ctx.seed, 0xBB), key), 0);
        const std::uint64_t noise_seed = rng::derive_seed(rng::derive_seed(ctx.seed, 0xA1), key);

        // Frame 0 observes the reference phase with the lowest noise; the
        // remaining frames cycle through the other three phases with noise
        // drawn from the configured band.
        std::vector<Observation> observations;
        for (long t = 0; t < frames; ++t) {
            const int phase = t == 0 ? 0 : 1 + static_cast<int>((t - 1) % 3);
            const double sigma = t == 0 ? sigma_ref : rng.next_uniform(sigma_lo, sigma_hi);
            observations.push_back(observe_phase(u, SubgridId::from_index(phase), sigma * sigma,
                                                 rng::derive_seed(noise_seed, static_cast<std::uint64_t>(t))));
        }
        const PosteriorSummary post = gaussian_posterior(prior, observations);

        const std::array<double, 4> phase_rmse = per_subgrid(
            [](const ImageGrid& a, const ImageGrid& b) { return rmse(a, b); }, post.mean, u);
        const std::array<double, 4> phase_sd = per_subgrid(
            [](const ImageGrid& v) {
                double acc = 0.0;
                for (double value : v.data) acc += std::sqrt(value);
                return acc / static_cast<double>(v.size());
            },
            post.diag);

        // The reference phase must win outright on both counts: smaller
        // reconstruction error and smaller predicted uncertainty.
        bool strict = true;
        for (int t = 1; t < 4; ++t) {
            const auto s = static_cast<std::size_t>(t);
            strict = strict && phase_rmse[0] < phase_rmse[s] && phase_sd[0] < phase_sd[s];
        }
        if (strict) ++reference_smallest;
        for (int t = 0; t < 4; ++t) {
            ctx.row(i, kTauScope[t], "rmse", phase_rmse[static_cast<std::size_t>(t)]);
            ctx.row(i, kTauScope[t], "posterior_sd", phase_sd[static_cast<std::size_t>(t)]);
        }
        ctx.row(i, "summary", "reference_smallest", strict ? 1.0 : 0.0);
        if (i == 0) {
            ctx.save_raster("scene.raw", u);
            ctx.save_raster("posterior_mean.raw", post.mean);
            ctx.save_raster("posterior_variance.raw", post.diag);
        }
    }

    const double fraction =
        static_cast<double>(reference_smallest) / static_cast<double>(instances);
    ctx.row(-1, "summary", "fraction_reference_smallest", fraction);
    ctx.check("reference_phase_dominates", fraction >= fraction_limit,
              format_value(fraction) + " of " + std::to_string(instances) +
                  " instances, limit " + format_value(fraction_limit));
}

// ---------------------------------------------------------------------------
// train_affine: self-supervised training matches supervised training and the
// conjugate oracle on linear-Gaussian bursts.

void run_train_affine(Context& ctx) {
    Config& cfg = ctx.config;
    const int hr_h = even_extent(cfg, "hr_height", 8);
    const int hr_w = even_extent(cfg, "hr_width", 8);
    const long train_n = positive_count(cfg, "train.instances", 50000);
    const long eval_n = positive_count(cfg, "eval.instances", 400);
    const double prior_mean = cfg.get_real("prior.mean", 0.0);
    const double variance = positive_real(cfg, "prior.variance", 0.04);
    const double length = positive_real(cfg, "prior.length", 1.5);
    const double nugget = positive_real(cfg, "prior.nugget", 1e-4);
    const double sigma = positive_real(cfg, "burst.sigma", 0.1);
    const long epochs = positive_count(cfg, "train.epochs", 60);
    const long batch = positive_count(cfg, "train.batch", 32);
    const double step = positive_real(cfg, "train.step", 0.02);
    const double mean_limit = positive_real(cfg, "check.mean_limit", 0.02);
    const double var_limit = positive_real(cfg, "check.var_limit", 0.05);
    const double mutual_limit = positive_real(cfg, "check.mutual_limit", 0.03);
    cfg.finish();

    const NoiseModel model = NoiseModel::awgn(sigma);
    const GaussianPrior prior(ImageGrid(hr_h, hr_w, prior_mean),
                              periodic_rbf_covariance(hr_h, hr_w, variance, length, nugget));
    const SampleFn sample = prior_sampler(prior);

    // Fixed burst geometry: four integer-shift frames, one per phase, frame 0
    // the reference.  The posterior mean given the three non-reference frames
    // is then one affine map of them, so the trained family contains the
    // oracle.
    const auto make_burst = [&](std::uint64_t key) {
        ImageGrid u = sample(rng::derive_seed(key, 1));
        Burst burst;
        burst.noise = model;
        burst.reference_index = 0;
        for (int t = 0; t < 4; ++t) {
            const SubgridId tau = SubgridId::from_index(t);
            burst.frames.push_back(sample_noise(apply_shift_subsample(u, tau), model,
                                                rng::derive_seed(key, static_cast<std::uint64_t>(2 + t))));
            burst.exposures.push_back(1.0);
            burst.shifts.push_back({static_cast<double>(tau.row), static_cast<double>(tau.col)});
        }
        return std::pair<ImageGrid, Burst>(std::move(u), std::move(burst));
    };

    std::vector<TrainSample> dataset;
    dataset.reserve(static_cast<std::size_t>(train_n));
    for (long i = 0; i < train_n; ++i) {
        auto [u, burst] = make_burst(
            rng::derive_seed(rng::derive_seed(ctx.seed, 0x7E), static_cast<std::uint64_t>(i)));
        TrainSample sample_i;
        sample_i.target = burst.frames[0];
        sample_i.tau = SubgridId{0, 0};
        sample_i.scene = std::move(u);
        sample_i.target_seed =
            rng::derive_seed(rng::derive_seed(ctx.seed, 0x7A), static_cast<std::uint64_t>(i));
        sample_i.burst = std::move(burst);
        dataset.push_back(std::move(sample_i));
    }

    TrainConfig train_cfg;
    train_cfg.epochs = static_cast<int>(epochs);
    train_cfg.batch_size = static_cast<int>(batch);
    train_cfg.step = step;
    train_cfg.supervised = false;
    train_cfg.seed = rng::derive_seed(ctx.seed, 0x70);
    ctx.note("training the self-supervised estimator (" + std::to_string(train_n) + " bursts, " +
             std::to_string(epochs) + " epochs)...");
    const AffineEstimator selfsup = train_affine(dataset, model, train_cfg);

    TrainConfig supervised_cfg = train_cfg;
    supervised_cfg.supervised = true;
    supervised_cfg.seed = rng::derive_seed(ctx.seed, 0x71);
    ctx.note("training the supervised reference estimator...");
    const AffineEstimator supervised = train_affine(dataset, model, supervised_cfg);

    save_affine((ctx.out / "model_selfsup").string(), selfsup, train_cfg);
    save_affine((ctx.out / "model_supervised").string(), supervised, supervised_cfg);
    ctx.artifacts.push_back("model_selfsup/affine_manifest.txt");
    ctx.artifacts.push_back("model_supervised/affine_manifest.txt");

    // Held-out evaluation against the conjugate oracle on fresh bursts.
    double selfsup_sq = 0.0;
    double supervised_sq = 0.0;
    double mutual_sq = 0.0;
    double oracle_sq = 0.0;
    double oracle_var_mean = 0.0;
    std::size_t total_pixels = 0;
    for (long j = 0; j < eval_n; ++j) {
        auto [u, burst] = make_burst(
            rng::derive_seed(rng::derive_seed(ctx.seed, 0xE7), static_cast<std::uint64_t>(j)));
        std::vector<Observation> observations;
        for (int t = 1; t < 4; ++t) {
            observations.push_back(
                Observation{ShiftSubsampleOp::for_subgrid(SubgridId::from_index(t), hr_h, hr_w),
                            burst.frames[static_cast<std::size_t>(t)],
                            ImageGrid(hr_h / 2, hr_w / 2, sigma * sigma)});
        }
        const PosteriorSummary oracle = gaussian_posterior(prior, observations);
        const ImageGrid mean_selfsup = selfsup.predict_mean(burst);
        const ImageGrid mean_supervised = supervised.predict_mean(burst);

        for (std::size_t k = 0; k < u.size(); ++k) {
            const double o = oracle.mean.data[k];
            const double ds = mean_selfsup.data[k] - o;
            const double dp = mean_supervised.data[k] - o;
            const double dm = mean_selfsup.data[k] - mean_supervised.data[k];
            selfsup_sq += ds * ds;
            supervised_sq += dp * dp;
            mutual_sq += dm * dm;
            oracle_sq += o * o;
        }
        total_pixels += u.size();
        if (j == 0) {
            for (double v : oracle.diag.data) oracle_var_mean += v;
            oracle_var_mean /= static_cast<double>(oracle.diag.size());
            ctx.save_raster("scene.raw", u);
            ctx.save_raster("oracle_mean.raw", oracle.mean);
            ctx.save_raster("selfsup_mean.raw", mean_selfsup);
        }

        ctx.row(j, "selfsup", "psnr", psnr(u, mean_selfsup));
        ctx.row(j, "supervised", "psnr", psnr(u, mean_supervised));
        ctx.row(j, "oracle", "psnr", psnr(u, oracle.mean));
    }

    const auto pixels = static_cast<double>(total_pixels);
    const double oracle_rms = std::sqrt(oracle_sq / pixels);
    const double selfsup_gap = std::sqrt(selfsup_sq / pixels) / oracle_rms;
    const double supervised_gap = std::sqrt(supervised_sq / pixels) / oracle_rms;
    const double mutual_gap = std::sqrt(mutual_sq / pixels) / oracle_rms;

    const auto variance_mean = [](const AffineEstimator& est) {
        const ImageGrid v = est.predict_variance();
        double acc = 0.0;
        for (double value : v.data) acc += value;
        return acc / static_cast<double>(v.size());
    };
    const double selfsup_var = variance_mean(selfsup);
    const double supervised_var = variance_mean(supervised);
    const double selfsup_var_gap = std::abs(selfsup_var - oracle_var_mean) / oracle_var_mean;
    const double supervised_var_gap = std::abs(supervised_var - oracle_var_mean) / oracle_var_mean;

    ctx.row(-1, "selfsup", "mean_gap", selfsup_gap);
    ctx.row(-1, "selfsup", "var_gap", selfsup_var_gap);
    ctx.row(-1, "selfsup", "mean_variance", selfsup_var);
    ctx.row(-1, "supervised", "mean_gap", supervised_gap);
    ctx.row(-1, "supervised", "var_gap", supervised_var_gap);
    ctx.row(-1, "supervised", "mean_variance", supervised_var);
    ctx.row(-1, "mutual", "mean_gap", mutual_gap);
    ctx.row(-1, "oracle", "mean_variance", oracle_var_mean);

    ctx.check("selfsup_mean_matches_oracle", selfsup_gap <= mean_limit,
              format_value(selfsup_gap) + " vs limit " + format_value(mean_limit));
    ctx.check("supervised_mean_matches_oracle", supervised_gap <= mean_limit,
              format_value(supervised_gap) + " vs limit " + format_value(mean_limit));
    ctx.check("selfsup_variance_matches_oracle", selfsup_var_gap <= var_limit,
              format_value(selfsup_var_gap) + " vs limit " + format_value(var_limit));
    ctx.check("supervised_variance_matches_oracle", supervised_var_gap <= var_limit,
              format_value(supervised_var_gap) + " vs limit " + format_value(var_limit));
    ctx.check("selfsup_matches_supervised", mutual_gap <= mutual_limit,
              format_value(mutual_gap) + " vs limit " + format_value(mutual_limit));
}

// ---------------------------------------------------------------------------

using ExperimentFn = void (*)(Context&);

const std::map<std::string, ExperimentFn>& experiment_table() {
    static const std::map<std::string, ExperimentFn> table = {
        {"gradcheck", run_gradcheck},           {"stationarity", run_stationarity},
        {"prop1", run_prop1},                   {"coverage_study", run_coverage},
        {"subgrid_study", run_subgrid},         {"train_affine", run_train_affine},
    };
    return table;
}

void write_manifest(const Context& ctx, const RunOptions& options) {
    const fs::path path = ctx.out / "manifest.txt";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "tool: uqsr\n";
    out << "experiment: " << ctx.experiment << "\n";
    out << "config_hash: " << ctx.hash << "\n";
    out << "config_path: " << options.config_path << "\n";
    out << "seed_override: "
        << (options.have_seed_override ? std::to_string(options.seed_override) : std::string("none"))
        << "\n";
    out << "jobs: " << options.jobs << "\n";
    out << "status: " << (ctx.all_pass ? "pass" : "fail") << "\n";
    out << "artifacts:\n";
    out << "  manifest.txt\n";
    for (const std::string& artifact : ctx.artifacts) out << "  " << artifact << "\n";
    out << "config:\n";
    std::istringstream canonical(ctx.config.canonical_text());
    std::string line;
    while (std::getline(canonical, line)) out << "  " << line << "\n";
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

int run_or_throw(const RunOptions& options) {
    if (options.jobs < 0) throw ConfigError("the worker count must be non-negative");
    if (options.jobs > 0) par::set_threads(options.jobs);
    if (options.config_path.empty()) throw ConfigError("no config file given");

    Context ctx;
    ctx.config = Config::parse_file(options.config_path);
    if (options.have_seed_override)
        ctx.config.override_value("seed", std::to_string(options.seed_override));
    ctx.experiment = ctx.config.get_string("experiment");
    const auto& table = experiment_table();
    const auto it = table.find(ctx.experiment);
    if (it == table.end()) {
        std::string known;
        for (const auto& [name, fn] : table) {
            (void)fn;
            known += known.empty() ? name : ", " + name;
        }
        throw ConfigError("key \"experiment\": unknown experiment \"" + ctx.experiment +
                          "\" (known: " + known + ")");
    }
    ctx.hash = ctx.config.hash();
    ctx.seed = ctx.config.get_u64("seed", 0);
    ctx.out = options.out_dir;
    ctx.quiet = options.quiet;

    std::error_code ec;
    fs::create_directories(ctx.out, ec);
    if (ec) throw IoError("cannot create output directory " + ctx.out.string() + ": " + ec.message());
    ctx.csv = std::make_unique<CsvWriter>(ctx.out / "results.csv");
    ctx.artifacts.push_back("results.csv");

    ctx.note("experiment " + ctx.experiment + " (config hash " + ctx.hash + ")");
    it->second(ctx);
    ctx.csv->close();
    write_manifest(ctx, options);
    ctx.note(std::string(ctx.all_pass ? "PASS" : "FAIL") + ": artifacts in " + ctx.out.string());
    return ctx.all_pass ? 0 : 1;
}

}  // namespace

int run_experiment(const RunOptions& options) {
    try {
        return run_or_throw(options);
    } catch (const ConfigError& error) {
        std::cerr << "config error: " << error.what() << '\n';
        return 2;
    } catch (const IoError& error) {
        std::cerr << "io error: " << error.what() << '\n';
        return 3;
    } catch (const std::exception& error) {
        std::cerr << "error: " << error.what() << '\n';
        return 3;
    }
}

}  // namespace uqsr
