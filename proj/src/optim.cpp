#include "uqsr/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "uqsr/errors.hpp"
#include "uqsr/par.hpp"
#include "uqsr/rng.hpp"

namespace uqsr {

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Fixed label layout for the training generators: one label space per use so
// shuffling, fresh-target phases and fresh-target noise never collide.
constexpr std::uint64_t kShuffleLabel = 0x500;
constexpr std::uint64_t kTauLabel = 0x600;
constexpr std::uint64_t kTargetLabel = 0x700;

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

/// Central-difference directional derivative along the normalized gradient,
/// compared against the gradient norm.  Catches sign errors and wrong
/// scalings in hand-written gradients before a long descent run wastes time
/// following them.
void spot_check_gradient(const Objective& objective, std::span<const double> x,
                         std::span<const double> grad) {
    const std::size_t n = x.size();
    double gnorm = 0.0;
    for (double g : grad) gnorm += g * g;
    gnorm = std::sqrt(gnorm);
    if (gnorm <= 1e-8) return;  // already at the stopping tolerance

    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> scratch(n);
    const double scale = std::max(1.0, max_abs(x));
    double best = std::numeric_limits<double>::infinity();
    for (double h_rel : {1e-4, 1e-6}) {
        const double h = h_rel * scale;
        for (std::size_t i = 0; i < n; ++i) probe[i] = x[i] + h * grad[i] / gnorm;
        const double f_plus = objective(probe, scratch);
        for (std::size_t i = 0; i < n; ++i) probe[i] = x[i] - h * grad[i] / gnorm;
        const double f_minus = objective(probe, scratch);
        const double fd = (f_plus - f_minus) / (2.0 * h);
        const double delta = std::abs(fd - gnorm);
        const double err = delta <= 1e-9 ? 0.0 : delta / std::max(std::abs(fd), gnorm);
        best = std::min(best, err);
    }
    if (!(best <= 1e-4))
        throw ValueError(
            "minimize: analytic gradient disagrees with finite differences at the "
            "initial point (relative error " +
            format_double(best) + ")");
}

}  // namespace

void OptimConfig::validate() const {
    if (max_iters < 1) throw ValueError("OptimConfig: max_iters must be at least 1");
    if (!(grad_tol > 0.0) || !std::isfinite(grad_tol))
        throw ValueError("OptimConfig: grad_tol must be positive");
    if (!(initial_step > 0.0) || !std::isfinite(initial_step))
        throw ValueError("OptimConfig: initial_step must be positive");
    if (!(shrink > 0.0) || !(shrink < 1.0))
        throw ValueError("OptimConfig: shrink must lie in (0, 1)");
    if (!(sufficient_decrease > 0.0) || !(sufficient_decrease < 1.0))
        throw ValueError("OptimConfig: sufficient_decrease must lie in (0, 1)");
    if (!std::isfinite(log_variance_floor))
        throw ValueError("OptimConfig: log_variance_floor must be finite");
}

MinimizeResult minimize(const Objective& objective, std::vector<double> init,
                        const OptimConfig& cfg) {
    cfg.validate();
    if (!objective) throw ValueError("minimize: objective is empty");

    const std::size_t n = init.size();
    std::vector<double> x = std::move(init);
    std::vector<double> grad(n, 0.0), trial(n), trial_grad(n);

    double value = objective(x, grad);
    if (!std::isfinite(value))
        throw ValueError("minimize: objective is not finite at the initial point");
    for (double g : grad)
        if (!std::isfinite(g))
            throw ValueError("minimize: gradient is not finite at the initial point");
    if (cfg.check_gradient_at_init && n > 0) spot_check_gradient(objective, x, grad);

    MinimizeResult result;
    result.converged = false;
    result.iterations = 0;
    for (;;) {
        if (max_abs(grad) <= cfg.grad_tol) {
            result.converged = true;
            break;
        }
        if (result.iterations >= cfg.max_iters) break;

        double gg = 0.0;
        for (double g : grad) gg += g * g;

        double step = cfg.initial_step;
        bool accepted = false;
        double trial_value = 0.0;
        while (step >= 1e-16) {
            for (std::size_t i = 0; i < n; ++i) trial[i] = x[i] - step * grad[i];
            trial_value = objective(trial, trial_grad);
            if (std::isfinite(trial_value) &&
                trial_value <= value - cfg.sufficient_decrease * step * gg) {
                accepted = true;
                break;
            }
            step *= cfg.shrink;
        }
        if (!accepted) break;  // line search died: report non-convergence honestly

        x.swap(trial);
        grad.swap(trial_grad);
        value = trial_value;
        ++result.iterations;
    }

    result.argmin = std::move(x);
    result.value = value;
    return result;
}

double fd_check(const Objective& objective, std::span<const double> point) {
    if (!objective) throw ValueError("fd_check: objective is empty");
    const std::size_t n = point.size();
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> grad(n, 0.0), scratch(n);

    const double value = objective(x, grad);
    if (!std::isfinite(value)) throw ValueError("fd_check: objective is not finite at the point");
    for (double g : grad)
        if (!std::isfinite(g)) throw ValueError("fd_check: gradient is not finite at the point");

    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double saved = x[i];
        const double scale = std::max(std::abs(saved), 1.0);
        double best = std::numeric_limits<double>::infinity();
        for (double h_rel : {1e-4, 1e-6}) {
            const double h = h_rel * scale;
            x[i] = saved + h;
            const double f_plus = objective(x, scratch);
            x[i] = saved - h;
            const double f_minus = objective(x, scratch);
            x[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double delta = std::abs(fd - grad[i]);
            const double err =
                delta <= 1e-9 ? 0.0 : delta / std::max(std::abs(fd), std::abs(grad[i]));
            best = std::min(best, err);
        }
        worst = std::max(worst, best);
    }
    return worst;
}

AffineEstimator AffineEstimator::zeros(int hr_height, int hr_width, int n_inputs,
                                       double initial_log_variance) {
    if (hr_height <= 0 || hr_width <= 0 || hr_height % 2 != 0 || hr_width % 2 != 0)
        throw ShapeError("AffineEstimator: extents must be even and positive");
    if (n_inputs < 1) throw ValueError("AffineEstimator: needs at least one input frame");
    if (!std::isfinite(initial_log_variance))
        throw ValueError("AffineEstimator: initial log-variance must be finite");

    AffineEstimator est;
    est.bias = ImageGrid(hr_height, hr_width, 0.0);
    est.log_variance = ImageGrid(hr_height, hr_width, initial_log_variance);
    const int lr = (hr_height / 2) * (hr_width / 2);
    est.weights = DenseMatrix(hr_height * hr_width, n_inputs * lr, 0.0);
    return est;
}

void AffineEstimator::validate() const {
    if (bias.height <= 0 || bias.width <= 0 || bias.height % 2 != 0 || bias.width % 2 != 0)
        throw ShapeError("AffineEstimator: extents must be even and positive");
    if (!bias.same_shape(log_variance))
        throw ShapeError("AffineEstimator: bias and log_variance shapes differ");
    if (weights.rows != static_cast<int>(bias.size()))
        throw ShapeError("AffineEstimator: weight rows must match the output pixel count");
    const int lr = lr_pixels();
    if (weights.cols <= 0 || weights.cols % lr != 0)
        throw ShapeError("AffineEstimator: weight columns must stack whole input frames");
    if (!bias.all_finite() || !log_variance.all_finite() || !weights.all_finite())
        throw ValueError("AffineEstimator: parameters must be finite");
}

std::vector<double> AffineEstimator::stack_inputs(const Burst& burst) const {
    validate();
    burst.validate();
    const int lr_h = bias.height / 2;
    const int lr_w = bias.width / 2;
    if (burst.frames[0].height != lr_h || burst.frames[0].width != lr_w)
        throw ShapeError("AffineEstimator: burst frame extents do not match the model");
    const int expected = n_inputs();
    const int available = burst.n_frames() - (include_reference ? 0 : 1);
    if (available != expected)
        throw ValueError("AffineEstimator: burst supplies " + std::to_string(available) +
                         " input frames, model expects " + std::to_string(expected));

    std::vector<double> x;
    x.reserve(static_cast<std::size_t>(expected) * static_cast<std::size_t>(lr_h) * lr_w);
    for (int t = 0; t < burst.n_frames(); ++t) {
        if (!include_reference && t == burst.reference_index) continue;
        const double e = burst.exposures[static_cast<std::size_t>(t)];
        if (!(e > 0.0) || !std::isfinite(e))
            throw ValueError("AffineEstimator: exposures must be positive");
        for (double v : burst.frames[static_cast<std::size_t>(t)].data) x.push_back(v / e);
    }
    return x;
}

ImageGrid AffineEstimator::predict_mean(const Burst& burst) const {
    const std::vector<double> x = stack_inputs(burst);
    ImageGrid mean(bias.height, bias.width);
    const std::size_t cols = static_cast<std::size_t>(weights.cols);
    par::parallel_for(mean.size(), [&](std::size_t k) {
        const double* row = weights.entries.data() + k * cols;
        double s = bias.data[k];
        for (std::size_t j = 0; j < cols; ++j) s += row[j] * x[j];
        mean.data[k] = s;
    });
    return mean;
}

ImageGrid AffineEstimator::predict_variance() const {
    validate();
    ImageGrid v(log_variance.height, log_variance.width);
    par::parallel_for(v.size(), [&](std::size_t k) {
        v.data[k] = std::max(std::exp(log_variance.data[k]), EstimatorState::kDiagFloor);
    });
    return v;
}

EstimatorState AffineEstimator::predict(const Burst& burst) const {
    return EstimatorState::diagonal(predict_mean(burst), predict_variance());
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ValueError("TrainConfig: epochs must be at least 1");
    if (batch_size < 1) throw ValueError("TrainConfig: batch_size must be at least 1");
    if (!(step > 0.0) || !std::isfinite(step))
        throw ValueError("TrainConfig: step must be positive");
    if (!(divergence_limit > 0.0)) throw ValueError("TrainConfig: divergence_limit must be positive");
    if (!std::isfinite(initial_log_variance) || !std::isfinite(log_variance_floor))
        throw ValueError("TrainConfig: log-variance bounds must be finite");
}

namespace {

void check_dataset(const std::vector<TrainSample>& dataset, const TrainConfig& cfg, int lr_h,
                   int lr_w, int t_frames) {
    for (const TrainSample& s : dataset) {
        s.burst.validate();
        if (s.burst.n_frames() != t_frames)
            throw ValueError("train_affine: every burst must have the same frame count");
        if (s.burst.frames[0].height != lr_h || s.burst.frames[0].width != lr_w)
            throw ShapeError("train_affine: burst frame extents differ across samples");
        if (s.target.height != lr_h || s.target.width != lr_w)
            throw ShapeError("train_affine: target extents do not match the frames");
        if (s.tau.row < 0 || s.tau.row > 1 || s.tau.col < 0 || s.tau.col > 1)
            throw ValueError("train_affine: subgrid phase out of range");
        const bool has_scene = s.scene.size() > 0;
        if (has_scene && (s.scene.height != 2 * lr_h || s.scene.width != 2 * lr_w))
            throw ShapeError("train_affine: scene extents must be twice the frame extents");
        if (cfg.supervised && !has_scene)
            throw ValueError("train_affine: supervised training needs the scene on every sample");
        for (double e : s.burst.exposures)
            if (!(e > 0.0) || !std::isfinite(e))
                throw ValueError("train_affine: exposures must be positive");
    }
}

}  // namespace

AffineEstimator train_affine(const std::vector<TrainSample>& dataset, const NoiseModel& model,
                             const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw ValueError("train_affine: dataset is empty");

    const std::size_t n = dataset.size();
    const Burst& b0 = dataset.front().burst;
    b0.validate();
    const int lr_h = b0.frames[0].height;
    const int lr_w = b0.frames[0].width;
    const int t_frames = b0.n_frames();
    const int n_in = t_frames - (cfg.include_reference ? 0 : 1);
    if (n_in < 1) throw ValueError("train_affine: bursts leave no input frames");
    check_dataset(dataset, cfg, lr_h, lr_w, t_frames);

    AffineEstimator est =
        AffineEstimator::zeros(2 * lr_h, 2 * lr_w, n_in, cfg.initial_log_variance);
    est.include_reference = cfg.include_reference;
    const std::size_t hr = est.bias.size();
    const std::size_t cols = static_cast<std::size_t>(est.weights.cols);

    // Inputs never change across epochs; stack them once.
    std::vector<std::vector<double>> inputs(n);
    for (std::size_t i = 0; i < n; ++i) inputs[i] = est.stack_inputs(dataset[i].burst);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    DenseMatrix grad_w(est.weights.rows, est.weights.cols, 0.0);
    ImageGrid grad_b(est.bias.height, est.bias.width, 0.0);
    ImageGrid grad_s(est.bias.height, est.bias.width, 0.0);
    ImageGrid mean(est.bias.height, est.bias.width);
    ImageGrid variance(est.bias.height, est.bias.width);

    // The last iterate of constant-step SGD fluctuates around the optimum
    // with spread proportional to the step; averaging the iterates over the
    // final third removes that floor without shrinking the early steps.
    // The incremental form keeps parameters that sit at a fixed point
    // (zero weights, clamped log-variance) bitwise unchanged.
    DenseMatrix avg_w(est.weights.rows, est.weights.cols, 0.0);
    ImageGrid avg_b(est.bias.height, est.bias.width, 0.0);
    ImageGrid avg_s(est.bias.height, est.bias.width, 0.0);
    double avg_count = 0.0;
    double cal_count = 0.0;

    // The log-variance equilibrates against the residuals of the wandering
    // iterate, which exceed those of the averaged map by the fluctuation
    // excess.  A calibration stage after the main run freezes the mean map
    // at its average and re-fits only the variance, averaging its own tail.
    const int cal_epochs = (cfg.epochs + 2) / 3;
    const int cal_avg_start = cfg.epochs + (cal_epochs + 1) / 2;
    const int total_epochs = cfg.epochs + cal_epochs;

    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        const bool calibrate = epoch >= cfg.epochs;
        if (epoch == cfg.epochs && avg_count > 0.0) {
            est.weights = avg_w;
            est.bias = avg_b;
        }
        const int phase =
            calibrate ? 2 : (3 * epoch) / cfg.epochs;  // halve the step each third of the run
        const double step = cfg.step * std::ldexp(1.0, -phase);

        rng::Prng shuffle(rng::derive_seed(cfg.seed, kShuffleLabel + static_cast<std::uint64_t>(epoch)), 0);
        for (std::size_t i = n - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(shuffle.next_int(0, static_cast<std::int64_t>(i)));
            std::swap(order[i], order[j]);
        }

        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            const double batch_n = static_cast<double>(stop - start);
            std::fill(grad_w.entries.begin(), grad_w.entries.end(), 0.0);
            std::fill(grad_b.data.begin(), grad_b.data.end(), 0.0);
            std::fill(grad_s.data.begin(), grad_s.data.end(), 0.0);
            double batch_loss = 0.0;

            for (std::size_t pos = start; pos < stop; ++pos) {
                const std::size_t idx = order[pos];
                const TrainSample& s = dataset[idx];
                const std::vector<double>& x = inputs[idx];

                par::parallel_for(hr, [&](std::size_t k) {
                    const double* row = est.weights.entries.data() + k * cols;
                    double acc = est.bias.data[k];
                    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
                    mean.data[k] = acc;
                    variance.data[k] =
                        std::max(std::exp(est.log_variance.data[k]), EstimatorState::kDiagFloor);
                });

                ImageGrid gm, gv;
                if (cfg.supervised) {
                    batch_loss += supervised_nll(s.scene, mean, variance);
                    gm = ImageGrid(mean.height, mean.width);
                    gv = ImageGrid(mean.height, mean.width);
                    par::parallel_for(hr, [&](std::size_t k) {
                        const double v = variance.data[k];
                        const double res = mean.data[k] - s.scene.data[k];
                        gm.data[k] = res / v;
                        gv.data[k] = 0.5 * (1.0 / v - res * res / (v * v));
                    });
                } else {
                    // Fresh-target protocol: with generative access, every
                    // epoch holds out a newly drawn (phase, frame) pair.
                    SubgridId tau = s.tau;
                    ImageGrid fresh;
                    const ImageGrid* target = &s.target;
                    if (s.scene.size() > 0) {
                        const auto e = static_cast<std::uint64_t>(epoch);
                        rng::Prng phase_rng(rng::derive_seed(s.target_seed, kTauLabel + e), 0);
                        tau = SubgridId::from_index(static_cast<int>(phase_rng.next_int(0, 3)));
                        fresh = sample_noise(apply_shift_subsample(s.scene, tau), model,
                                             rng::derive_seed(s.target_seed, kTargetLabel + e));
                        target = &fresh;
                    }

                    const EstimatorState state = EstimatorState::diagonal(mean, variance);
                    const NoiseCovEstimate r_hat = estimate_noise_cov(mean, tau, model);
                    batch_loss += selfsup_nll_diag(*target, state, tau, r_hat);
                    gm = grad_mean_diag(*target, state, tau, r_hat);
                    gv = grad_variance_diag(*target, state, tau, r_hat);
                    if (model.a > 0.0) {
                        // The plug-in noise estimate also depends on the mean;
                        // chain through it wherever the clamp is inactive.
                        par::parallel_for(static_cast<std::size_t>(lr_h) * lr_w, [&](std::size_t l) {
                            const int r = static_cast<int>(l) / lr_w;
                            const int c = static_cast<int>(l) % lr_w;
                            const std::size_t k = subgrid_hr_index(r, c, tau, est.bias.width);
                            if (model.a * mean.data[k] + model.b > NoiseModel::kVarianceFloor)
                                gm.data[k] += model.a * gv.data[k];
                        });
                    }
                }

                par::parallel_for(hr, [&](std::size_t k) {
                    grad_s.data[k] += gv.data[k] * variance.data[k];
                    if (calibrate) return;
                    const double g = gm.data[k];
                    grad_b.data[k] += g;
                    if (g != 0.0) {
                        double* row = grad_w.entries.data() + k * cols;
                        for (std::size_t j = 0; j < cols; ++j) row[j] += g * x[j];
                    }
                });
            }

            batch_loss /= batch_n;
            if (!std::isfinite(batch_loss) || batch_loss > cfg.divergence_limit)
                throw ValueError("train_affine: diverged (batch loss " +
                                 format_double(batch_loss) + ")");

            const double scale = step / batch_n;
            const bool tail = !calibrate && phase == 2;
            const bool cal_tail = epoch >= cal_avg_start;
            if (tail) avg_count += 1.0;
            if (cal_tail) cal_count += 1.0;
            par::parallel_for(hr, [&](std::size_t k) {
                est.log_variance.data[k] =
                    std::max(est.log_variance.data[k] - scale * grad_s.data[k],
                             cfg.log_variance_floor);
                if (!calibrate) {
                    est.bias.data[k] -= scale * grad_b.data[k];
                    double* wrow = est.weights.entries.data() + k * cols;
                    const double* grow = grad_w.entries.data() + k * cols;
                    for (std::size_t j = 0; j < cols; ++j) wrow[j] -= scale * grow[j];
                    if (tail) {
                        avg_b.data[k] += (est.bias.data[k] - avg_b.data[k]) / avg_count;
                        double* arow = avg_w.entries.data() + k * cols;
                        for (std::size_t j = 0; j < cols; ++j)
                            arow[j] += (wrow[j] - arow[j]) / avg_count;
                    }
                } else if (cal_tail) {
                    avg_s.data[k] += (est.log_variance.data[k] - avg_s.data[k]) / cal_count;
                }
            });
        }
    }

    if (cal_count > 0.0) est.log_variance = avg_s;

    est.validate();
    return est;
}

namespace {

ImageGrid matrix_as_grid(const DenseMatrix& m) {
    ImageGrid g(m.rows, m.cols);
    g.data = m.entries;
    return g;
}

}  // namespace

void save_affine(const std::string& dir, const AffineEstimator& est, const TrainConfig& cfg) {
    est.validate();
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create model directory " + dir);

    write_raster(dir + "/affine_weights.raw", matrix_as_grid(est.weights));
    write_raster(dir + "/affine_bias.raw", est.bias);
    write_raster(dir + "/affine_log_variance.raw", est.log_variance);

    std::ofstream manifest(dir + "/affine_manifest.txt");
    if (!manifest) throw IoError("cannot write model manifest in " + dir);
    manifest << "affine v1\n";
    manifest << "hr_height " << est.bias.height << "\n";
    manifest << "hr_width " << est.bias.width << "\n";
    manifest << "n_inputs " << est.n_inputs() << "\n";
    manifest << "include_reference " << (est.include_reference ? 1 : 0) << "\n";
    manifest << "epochs " << cfg.epochs << "\n";
    manifest << "batch_size " << cfg.batch_size << "\n";
    manifest << "step " << format_double(cfg.step) << "\n";
    manifest << "seed " << cfg.seed << "\n";
    manifest << "supervised " << (cfg.supervised ? 1 : 0) << "\n";
    manifest << "weights affine_weights.raw\n";
    manifest << "bias affine_bias.raw\n";
    manifest << "log_variance affine_log_variance.raw\n";
    manifest.close();
    if (!manifest) throw IoError("failed writing model manifest in " + dir);
}

AffineEstimator load_affine(const std::string& dir) {
    std::ifstream manifest(dir + "/affine_manifest.txt");
    if (!manifest) throw IoError("cannot read model manifest in " + dir);

    std::string line;
    auto expect_field = [&](const char* key) -> std::istringstream {
        if (!std::getline(manifest, line)) throw IoError("truncated model manifest in " + dir);
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word != key)
            throw IoError("model manifest: expected '" + std::string(key) + "', got '" + word +
                          "'");
        return ls;
    };

    if (!std::getline(manifest, line) || line != "affine v1")
        throw IoError("model manifest: unknown format marker");

    int hr_h = 0, hr_w = 0, n_inputs = 0, include_reference = 0;
    expect_field("hr_height") >> hr_h;
    expect_field("hr_width") >> hr_w;
    expect_field("n_inputs") >> n_inputs;
    expect_field("include_reference") >> include_reference;
    if (hr_h <= 0 || hr_w <= 0 || hr_h % 2 != 0 || hr_w % 2 != 0 || n_inputs < 1 ||
        (include_reference != 0 && include_reference != 1))
        throw IoError("model manifest: bad dimensions");

    // Training metadata is recorded for provenance; only the shapes matter here.
    expect_field("epochs");
    expect_field("batch_size");
    expect_field("step");
    expect_field("seed");
    expect_field("supervised");

    std::string w_file, b_file, s_file;
    expect_field("weights") >> w_file;
    expect_field("bias") >> b_file;
    expect_field("log_variance") >> s_file;
    if (w_file.empty() || b_file.empty() || s_file.empty())
        throw IoError("model manifest: missing raster file names");

    const ImageGrid w = read_raster(dir + "/" + w_file);
    AffineEstimator est;
    est.weights = DenseMatrix(w.height, w.width);
    est.weights.entries = w.data;
    est.bias = read_raster(dir + "/" + b_file);
    est.log_variance = read_raster(dir + "/" + s_file);
    est.include_reference = include_reference == 1;

    if (est.bias.height != hr_h || est.bias.width != hr_w)
        throw IoError("model manifest: bias raster extents mismatch");
    if (est.weights.rows != hr_h * hr_w ||
        est.weights.cols != n_inputs * (hr_h / 2) * (hr_w / 2))
        throw IoError("model manifest: weight raster extents mismatch");
    est.validate();
    return est;
}

}  // namespace uqsr
