#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uqsr/grid.hpp"

namespace uqsr {

/// Affine signal-dependent noise variance: g(s) = a*s + b, clamped below at
/// kVarianceFloor so a realized variance is always positive.
struct NoiseModel {
    double a = 0.0;  // gain: variance per unit signal
    double b = 0.0;  // variance floor, signal units squared

    static constexpr double kVarianceFloor = 1e-12;

    NoiseModel() = default;
    NoiseModel(double gain, double floor);
    static NoiseModel awgn(double sigma) { return NoiseModel(0.0, sigma * sigma); }

    double variance(double s) const {
        const double g = a * s + b;
        return g > kVarianceFloor ? g : kVarianceFloor;
    }
};

/// Selection operator mapping a 2H x 2W raster to the H x W samples
/// (2r + shift_row, 2c + shift_col), indices wrapped periodically.  For
/// shifts in {0,1}^2 this is exactly subgrid extraction and never wraps.
/// Applied matrix-free; each output row selects a single input pixel, so the
/// adjoint embeds with zeros.
struct ShiftSubsampleOp {
    int hr_height = 0;
    int hr_width = 0;
    int shift_row = 0;
    int shift_col = 0;

    ShiftSubsampleOp(int hr_h, int hr_w, int sr, int sc);
    static ShiftSubsampleOp for_subgrid(SubgridId tau, int hr_h, int hr_w) {
        return {hr_h, hr_w, tau.row, tau.col};
    }

    int lr_height() const { return hr_height / 2; }
    int lr_width() const { return hr_width / 2; }
    /// Which subsampling phase this operator observes.
    SubgridId subgrid() const {
        return {((shift_row % 2) + 2) % 2, ((shift_col % 2) + 2) % 2};
    }

    /// Flat high-resolution index selected by low-resolution pixel (r, c).
    std::size_t hr_index(int r, int c) const;

    ImageGrid apply(const ImageGrid& u) const;
    ImageGrid adjoint(const ImageGrid& w) const;
};

/// The operator A_tau: subsampling composed with a {0,1}^2 grid shift.
ImageGrid apply_shift_subsample(const ImageGrid& u, SubgridId tau);

/// Translates image content by `shift` pixels (row, col) using bilinear
/// interpolation with periodic wrap-around.  Integer shifts are exact
/// circular shifts; shift (0,0) is the identity.
ImageGrid warp_translate(const ImageGrid& img, std::array<double, 2> shift);

/// Per-pixel noise variance of the model evaluated on a clean signal.
ImageGrid noise_variance(const ImageGrid& clean, const NoiseModel& model);

/// clean + eps with eps_i ~ Normal(0, variance(clean_i)), deterministic per
/// seed (pixel i draws from stream i of the counter generator).
ImageGrid sample_noise(const ImageGrid& clean, const NoiseModel& model, std::uint64_t seed);

/// Multi-exposure burst simulation parameters.
struct BurstConfig {
    int n_frames = 8;
    int hr_height = 0;
    int hr_width = 0;
    double gamma = 1.3;              // exposure ratio base; must be > 1
    int exponent_lo = -5;            // e_t = gamma^c, c uniform integer in [lo, hi]
    int exponent_hi = 5;
    double sigma_lo = 5.0;           // AWGN sigma range in 8-bit units,
    double sigma_hi = 18.0;          // rescaled by 1/255 at draw time
    double max_shift = 2.0;          // sub-pixel translation magnitude, pixels
    std::uint64_t seed = 0;

    void validate() const;
};

/// One simulated burst: low-resolution frames with their exposures and
/// translations, plus the realized per-burst noise model.  Frame 0 is the
/// unshifted reference.
struct Burst {
    std::vector<ImageGrid> frames;
    std::vector<double> exposures;
    std::vector<std::array<double, 2>> shifts;
    NoiseModel noise;
    int reference_index = 0;

    int n_frames() const { return static_cast<int>(frames.size()); }
    void validate() const;
};

/// Simulates a burst from a clean scene: per frame, draw a translation
/// (reference keeps (0,0)), an exposure exponent c uniform in the configured
/// integer range, warp, scale by gamma^c, subsample by two, and add AWGN
/// whose sigma is drawn once per burst.  Pure function of (u, cfg).
Burst simulate_burst(const ImageGrid& u, const BurstConfig& cfg);

/// Burst serialization: one raster per frame (frame_000.raw/.hdr, ...) plus
/// a plain-text manifest `burst_manifest.txt` listing frame files, exposures,
/// shifts, and noise parameters.
void write_burst(const std::string& dir, const Burst& burst);
Burst read_burst(const std::string& dir);

}  // namespace uqsr
