#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "uqsr/errors.hpp"

namespace uqsr {

/// Row-major raster of doubles.  Rasters on the high-resolution grid always
/// have even extents (2H x 2W); low-resolution rasters are H x W.
struct ImageGrid {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    ImageGrid() = default;
    ImageGrid(int h, int w, double fill = 0.0);

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const ImageGrid& other) const {
        return height == other.height && width == other.width;
    }
    bool all_finite() const;
};

/// Identifies one of the four x2-subsampling phases of an even grid:
/// subgrid (tr, tc) holds the high-resolution pixels (2r + tr, 2c + tc).
struct SubgridId {
    int row = 0;
    int col = 0;

    /// Canonical enumeration order: (0,0), (0,1), (1,0), (1,1).
    int index() const { return 2 * row + col; }
    static SubgridId from_index(int i) { return {(i >> 1) & 1, i & 1}; }
    static std::array<SubgridId, 4> all() { return {{{0, 0}, {0, 1}, {1, 0}, {1, 1}}}; }

    bool operator==(const SubgridId&) const = default;
};

/// Dense row-major matrix.  Only ever materialized at sizes small enough for
/// direct factorization; operators on the high-resolution grid stay
/// matrix-free.
struct DenseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> entries;

    DenseMatrix() = default;
    DenseMatrix(int r, int c, double fill = 0.0);

    double& at(int i, int j) { return entries[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return entries[static_cast<std::size_t>(i) * cols + j]; }

    static DenseMatrix identity(int n);
    bool all_finite() const;
};

/// Cholesky factorization of a symmetric positive-definite matrix.
/// Construction is the definiteness check: it throws DefinitenessError if a
/// pivot fails, so a successfully built factor certifies the SPD claim.
class SpdFactor {
  public:
    explicit SpdFactor(const DenseMatrix& m);

    int dim() const { return lower_.rows; }
    /// Lower-triangular factor L with m = L L^T.
    const DenseMatrix& lower() const { return lower_; }

    /// Solves m x = rhs with one step of iterative refinement; the relative
    /// residual is below 1e-10 for the conditioning encountered here.
    std::vector<double> solve(std::span<const double> rhs) const;
    /// Column-wise solve: returns x with m x = rhs.
    DenseMatrix solve(const DenseMatrix& rhs) const;
    /// Inverse with one multiplicative refinement pass, symmetrized.
    DenseMatrix inverse() const;
    /// log det m, summed from the factor diagonal.
    double logdet() const;

  private:
    void apply(std::span<const double> x, std::span<double> y) const;  // y = m x
    void substitute(std::span<double> x) const;                        // x <- m^{-1} x
    DenseMatrix lower_;
    DenseMatrix original_;
};

/// Convenience wrapper: factorizes, solves, and optionally reports log det m
/// from the same factorization.
std::vector<double> spd_solve(const DenseMatrix& m, std::span<const double> rhs,
                              double* logdet = nullptr);

/// Extracts subgrid tau of an even-extent raster: out(r,c) = u(2r+tr, 2c+tc).
ImageGrid subgrid_extract(const ImageGrid& u, SubgridId tau);

/// Adjoint of extraction: embeds w into an hr_height x hr_width raster on
/// subgrid tau, zero elsewhere.
ImageGrid subgrid_embed(const ImageGrid& w, SubgridId tau, int hr_height, int hr_width);

/// Flat high-resolution index of low-resolution pixel (r, c) under tau.
inline std::size_t subgrid_hr_index(int r, int c, SubgridId tau, int hr_width) {
    return static_cast<std::size_t>(2 * r + tau.row) * hr_width + (2 * c + tau.col);
}

/// Raster file format: `path` holds the little-endian float64 row-major
/// payload; a sidecar with extension `.hdr` and the same stem holds one line
/// `height width`.  Matrices reuse the format with height=rows, width=cols.
void write_raster(const std::string& path, const ImageGrid& grid);
ImageGrid read_raster(const std::string& path);

}  // namespace uqsr
