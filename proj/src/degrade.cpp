#include "uqsr/degrade.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "uqsr/par.hpp"
#include "uqsr/rng.hpp"

namespace uqsr {

namespace {

int wrap(int x, int m) { return ((x % m) + m) % m; }

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Fixed stream layout for burst simulation, documented for reproducibility:
// stream 0 draws the per-burst sigma, stream 1+t draws frame t's exponent and
// shift, and frame t's noise uses a seed derived with label kNoiseLabel + t.
constexpr std::uint64_t kNoiseLabel = 0x100;

}  // namespace

NoiseModel::NoiseModel(double gain, double floor) : a(gain), b(floor) {
    if (a < 0.0 || b < 0.0) throw ValueError("NoiseModel: a and b must be non-negative");
    if (!std::isfinite(a) || !std::isfinite(b))
        throw ValueError("NoiseModel: a and b must be finite");
}

ShiftSubsampleOp::ShiftSubsampleOp(int hr_h, int hr_w, int sr, int sc)
    : hr_height(hr_h), hr_width(hr_w), shift_row(sr), shift_col(sc) {
    if (hr_h <= 0 || hr_w <= 0 || hr_h % 2 != 0 || hr_w % 2 != 0)
        throw ShapeError("ShiftSubsampleOp: extents must be even and positive");
}

std::size_t ShiftSubsampleOp::hr_index(int r, int c) const {
    const int rr = wrap(2 * r + shift_row, hr_height);
    const int cc = wrap(2 * c + shift_col, hr_width);
    return static_cast<std::size_t>(rr) * hr_width + cc;
}

ImageGrid ShiftSubsampleOp::apply(const ImageGrid& u) const {
    if (u.height != hr_height || u.width != hr_width)
        throw ShapeError("ShiftSubsampleOp::apply: input extents mismatch");
    ImageGrid out(lr_height(), lr_width());
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c) out.at(r, c) = u.data[hr_index(r, c)];
    return out;
}

ImageGrid ShiftSubsampleOp::adjoint(const ImageGrid& w) const {
    if (w.height != lr_height() || w.width != lr_width())
        throw ShapeError("ShiftSubsampleOp::adjoint: input extents mismatch");
    ImageGrid out(hr_height, hr_width, 0.0);
    for (int r = 0; r < w.height; ++r)
        for (int c = 0; c < w.width; ++c) out.data[hr_index(r, c)] += w.at(r, c);
    return out;
}

ImageGrid apply_shift_subsample(const ImageGrid& u, SubgridId tau) {
    return subgrid_extract(u, tau);
}

ImageGrid warp_translate(const ImageGrid& img, std::array<double, 2> shift) {
    if (img.height == 0 || img.width == 0) return img;
    const double dr = shift[0], dc = shift[1];
    if (dr == 0.0 && dc == 0.0) return img;
    ImageGrid out(img.height, img.width);
    const int h = img.height, w = img.width;
    par::parallel_for(static_cast<std::size_t>(h), [&](std::size_t ri) {
        const int r = static_cast<int>(ri);
        const double y = static_cast<double>(r) - dr;
        const double fy = y - std::floor(y);
        const int y0 = wrap(static_cast<int>(std::floor(y)), h);
        const int y1 = wrap(y0 + 1, h);
        for (int c = 0; c < w; ++c) {
            const double x = static_cast<double>(c) - dc;
            const double fx = x - std::floor(x);
            const int x0 = wrap(static_cast<int>(std::floor(x)), w);
            const int x1 = wrap(x0 + 1, w);
            out.at(r, c) = (1.0 - fy) * ((1.0 - fx) * img.at(y0, x0) + fx * img.at(y0, x1)) +
                           fy * ((1.0 - fx) * img.at(y1, x0) + fx * img.at(y1, x1));
        }
    });
    return out;
}

ImageGrid noise_variance(const ImageGrid& clean, const NoiseModel& model) {
    ImageGrid var(clean.height, clean.width);
    for (std::size_t i = 0; i < clean.size(); ++i) var.data[i] = model.variance(clean.data[i]);
    return var;
}

ImageGrid sample_noise(const ImageGrid& clean, const NoiseModel& model, std::uint64_t seed) {
    if (model.a == 0.0 && model.b == 0.0) return clean;
    ImageGrid out(clean.height, clean.width);
    par::parallel_for(clean.size(), [&](std::size_t i) {
        rng::Prng g(seed, i);
        out.data[i] = clean.data[i] +
                      std::sqrt(model.variance(clean.data[i])) * g.next_gaussian();
    });
    return out;
}

void BurstConfig::validate() const {
    if (n_frames < 2) throw ValueError("BurstConfig: n_frames must be at least 2");
    if (hr_height <= 0 || hr_width <= 0 || hr_height % 2 != 0 || hr_width % 2 != 0)
        throw ShapeError("BurstConfig: hr extents must be even and positive");
    if (!(gamma > 1.0)) throw ValueError("BurstConfig: gamma must exceed 1");
    if (exponent_hi < exponent_lo) throw ValueError("BurstConfig: empty exponent range");
    if (sigma_hi < sigma_lo || sigma_lo < 0.0) throw ValueError("BurstConfig: bad sigma range");
    if (max_shift < 0.0) throw ValueError("BurstConfig: max_shift must be non-negative");
}

void Burst::validate() const {
    const std::size_t n = frames.size();
    if (n < 2) throw ValueError("Burst: needs at least two frames");
    if (exposures.size() != n || shifts.size() != n)
        throw ValueError("Burst: frames, exposures, shifts must have equal length");
    if (reference_index < 0 || reference_index >= static_cast<int>(n))
        throw ValueError("Burst: reference index out of range");
    const auto rs = shifts[static_cast<std::size_t>(reference_index)];
    if (rs[0] != 0.0 || rs[1] != 0.0)
        throw ValueError("Burst: reference frame must have shift (0,0)");
    for (const ImageGrid& f : frames)
        if (!f.same_shape(frames[0])) throw ShapeError("Burst: frame shape mismatch");
}

Burst simulate_burst(const ImageGrid& u, const BurstConfig& cfg) {
    cfg.validate();
    if (u.height != cfg.hr_height || u.width != cfg.hr_width)
        throw ShapeError("simulate_burst: scene extents do not match the config");

    rng::Prng burst_rng(cfg.seed, 0);
    const double sigma = burst_rng.next_uniform(cfg.sigma_lo, cfg.sigma_hi) / 255.0;

    Burst burst;
    burst.noise = NoiseModel::awgn(sigma);
    burst.reference_index = 0;

    for (int t = 0; t < cfg.n_frames; ++t) {
        rng::Prng frame_rng(cfg.seed, 1 + static_cast<std::uint64_t>(t));
        const auto c = frame_rng.next_int(cfg.exponent_lo, cfg.exponent_hi);
        const double exposure = std::pow(cfg.gamma, static_cast<double>(c));
        std::array<double, 2> shift{0.0, 0.0};
        if (t != 0) {
            shift[0] = frame_rng.next_uniform(-cfg.max_shift, cfg.max_shift);
            shift[1] = frame_rng.next_uniform(-cfg.max_shift, cfg.max_shift);
        }

        ImageGrid clean = apply_shift_subsample(warp_translate(u, shift), {0, 0});
        for (double& v : clean.data) v *= exposure;

        burst.frames.push_back(sample_noise(clean, burst.noise,
                                            rng::derive_seed(cfg.seed, kNoiseLabel + t)));
        burst.exposures.push_back(exposure);
        burst.shifts.push_back(shift);
    }
    burst.validate();
    return burst;
}

void write_burst(const std::string& dir, const Burst& burst) {
    burst.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create burst directory " + dir);

    std::ofstream manifest(dir + "/burst_manifest.txt");
    if (!manifest) throw IoError("cannot write burst manifest in " + dir);
    manifest << "burst v1\n";
    manifest << "n_frames " << burst.n_frames() << "\n";
    manifest << "lr_height " << burst.frames[0].height << "\n";
    manifest << "lr_width " << burst.frames[0].width << "\n";
    manifest << "reference_index " << burst.reference_index << "\n";
    manifest << "noise_a " << format_double(burst.noise.a) << "\n";
    manifest << "noise_b " << format_double(burst.noise.b) << "\n";
    for (int t = 0; t < burst.n_frames(); ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%03d.raw", t);
        manifest << "frame " << t << " " << name << " exposure "
                 << format_double(burst.exposures[static_cast<std::size_t>(t)]) << " shift "
                 << format_double(burst.shifts[static_cast<std::size_t>(t)][0]) << " "
                 << format_double(burst.shifts[static_cast<std::size_t>(t)][1]) << "\n";
        write_raster(dir + "/" + name, burst.frames[static_cast<std::size_t>(t)]);
    }
    manifest.close();
    if (!manifest) throw IoError("failed writing burst manifest in " + dir);
}

Burst read_burst(const std::string& dir) {
    std::ifstream manifest(dir + "/burst_manifest.txt");
    if (!manifest) throw IoError("cannot read burst manifest in " + dir);

    std::string line;
    auto next_line = [&]() -> std::istringstream {
        if (!std::getline(manifest, line)) throw IoError("truncated burst manifest in " + dir);
        return std::istringstream(line);
    };
    auto expect_field = [&](const char* key) -> std::istringstream {
        std::istringstream ls = next_line();
        std::string word;
        ls >> word;
        if (word != key) throw IoError("burst manifest: expected '" + std::string(key) +
                                       "', got '" + word + "'");
        return ls;
    };

    if (!std::getline(manifest, line) || line != "burst v1")
        throw IoError("burst manifest: unknown format marker");

    int n = 0, lr_h = 0, lr_w = 0;
    Burst burst;
    expect_field("n_frames") >> n;
    expect_field("lr_height") >> lr_h;
    expect_field("lr_width") >> lr_w;
    expect_field("reference_index") >> burst.reference_index;
    expect_field("noise_a") >> burst.noise.a;
    expect_field("noise_b") >> burst.noise.b;
    if (n < 2 || lr_h <= 0 || lr_w <= 0) throw IoError("burst manifest: bad dimensions");

    for (int t = 0; t < n; ++t) {
        std::istringstream ls = expect_field("frame");
        int idx = 0;
        std::string file, word;
        double exposure = 0.0;
        std::array<double, 2> shift{};
        ls >> idx >> file >> word >> exposure;
        if (!ls || word != "exposure" || idx != t)
            throw IoError("burst manifest: malformed frame line");
        ls >> word >> shift[0] >> shift[1];
        if (!ls || word != "shift") throw IoError("burst manifest: malformed frame line");

        ImageGrid frame = read_raster(dir + "/" + file);
        if (frame.height != lr_h || frame.width != lr_w)
            throw IoError("burst manifest: frame raster extents mismatch");
        burst.frames.push_back(std::move(frame));
        burst.exposures.push_back(exposure);
        burst.shifts.push_back(shift);
    }
    burst.validate();
    return burst;
}

}  // namespace uqsr
