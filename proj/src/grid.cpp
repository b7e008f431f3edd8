#include "uqsr/grid.hpp"

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace uqsr {

namespace {

using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EigenRowMajor>;

void require(bool cond, const char* what) {
    if (!cond) throw ShapeError(what);
}

std::string sidecar_path(const std::string& path) {
    const std::size_t slash = path.find_last_of('/');
    const std::size_t dot = path.find_last_of('.');
    if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
        return path + ".hdr";
    return path.substr(0, dot) + ".hdr";
}

void byteswap_doubles(std::vector<double>& v) {
    for (double& d : v) {
        char* p = reinterpret_cast<char*>(&d);
        std::swap(p[0], p[7]);
        std::swap(p[1], p[6]);
        std::swap(p[2], p[5]);
        std::swap(p[3], p[4]);
    }
}

}  // namespace

ImageGrid::ImageGrid(int h, int w, double fill)
    : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {
    require(h >= 0 && w >= 0, "ImageGrid extents must be non-negative");
}

bool ImageGrid::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

DenseMatrix::DenseMatrix(int r, int c, double fill)
    : rows(r), cols(c), entries(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {
    require(r >= 0 && c >= 0, "DenseMatrix extents must be non-negative");
}

DenseMatrix DenseMatrix::identity(int n) {
    DenseMatrix m(n, n, 0.0);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

bool DenseMatrix::all_finite() const {
    for (double v : entries)
        if (!std::isfinite(v)) return false;
    return true;
}

SpdFactor::SpdFactor(const DenseMatrix& m) : original_(m) {
    require(m.rows == m.cols, "SpdFactor requires a square matrix");
    if (!m.all_finite()) throw ValueError("SpdFactor: matrix has non-finite entries");
    const int n = m.rows;
    double scale = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) scale = std::max(scale, std::fabs(m.at(i, j)));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j)
            if (std::fabs(m.at(i, j) - m.at(j, i)) > 1e-8 * std::max(1.0, scale))
                throw ShapeError("SpdFactor: matrix is not symmetric");

    ConstMap a(m.entries.data(), n, n);
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        throw DefinitenessError("SpdFactor: matrix is not positive definite");
    lower_ = DenseMatrix(n, n, 0.0);
    const Eigen::MatrixXd l = llt.matrixL();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) lower_.at(i, j) = l(i, j);
}

void SpdFactor::apply(std::span<const double> x, std::span<double> y) const {
    const int n = lower_.rows;
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += original_.at(i, j) * x[j];
        y[i] = s;
    }
}

void SpdFactor::substitute(std::span<double> x) const {
    const int n = lower_.rows;
    for (int i = 0; i < n; ++i) {  // L y = x
        double s = x[i];
        for (int j = 0; j < i; ++j) s -= lower_.at(i, j) * x[j];
        x[i] = s / lower_.at(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {  // L^T z = y
        double s = x[i];
        for (int j = i + 1; j < n; ++j) s -= lower_.at(j, i) * x[j];
        x[i] = s / lower_.at(i, i);
    }
}

std::vector<double> SpdFactor::solve(std::span<const double> rhs) const {
    const int n = lower_.rows;
    require(static_cast<int>(rhs.size()) == n, "spd_solve: rhs length mismatch");
    std::vector<double> x(rhs.begin(), rhs.end());
    substitute(x);
    // One refinement step keeps the residual near roundoff.
    std::vector<double> r(n), mx(n);
    apply(x, mx);
    for (int i = 0; i < n; ++i) r[i] = rhs[i] - mx[i];
    substitute(r);
    for (int i = 0; i < n; ++i) x[i] += r[i];
    return x;
}

DenseMatrix SpdFactor::solve(const DenseMatrix& rhs) const {
    const int n = lower_.rows;
    require(rhs.rows == n, "spd_solve: rhs row count mismatch");
    DenseMatrix x(n, rhs.cols);
    std::vector<double> col(static_cast<std::size_t>(n));
    for (int j = 0; j < rhs.cols; ++j) {
        for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = rhs.at(i, j);
        const std::vector<double> sol = solve(col);
        for (int i = 0; i < n; ++i) x.at(i, j) = sol[static_cast<std::size_t>(i)];
    }
    return x;
}

DenseMatrix SpdFactor::inverse() const {
    const int n = lower_.rows;
    DenseMatrix inv = solve(DenseMatrix::identity(n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < i; ++j) {
            const double s = 0.5 * (inv.at(i, j) + inv.at(j, i));
            inv.at(i, j) = s;
            inv.at(j, i) = s;
        }
    return inv;
}

double SpdFactor::logdet() const {
    double s = 0.0;
    for (int i = 0; i < lower_.rows; ++i) s += std::log(lower_.at(i, i));
    return 2.0 * s;
}

std::vector<double> spd_solve(const DenseMatrix& m, std::span<const double> rhs, double* logdet) {
    const SpdFactor factor(m);
    if (logdet != nullptr) *logdet = factor.logdet();
    return factor.solve(rhs);
}

ImageGrid subgrid_extract(const ImageGrid& u, SubgridId tau) {
    require(u.height % 2 == 0 && u.width % 2 == 0, "subgrid_extract: extents must be even");
    require((tau.row == 0 || tau.row == 1) && (tau.col == 0 || tau.col == 1),
            "subgrid_extract: tau components must be 0 or 1");
    ImageGrid out(u.height / 2, u.width / 2);
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c) out.at(r, c) = u.at(2 * r + tau.row, 2 * c + tau.col);
    return out;
}

ImageGrid subgrid_embed(const ImageGrid& w, SubgridId tau, int hr_height, int hr_width) {
    require(hr_height == 2 * w.height && hr_width == 2 * w.width,
            "subgrid_embed: target extents must be twice the source extents");
    require((tau.row == 0 || tau.row == 1) && (tau.col == 0 || tau.col == 1),
            "subgrid_embed: tau components must be 0 or 1");
    ImageGrid out(hr_height, hr_width, 0.0);
    for (int r = 0; r < w.height; ++r)
        for (int c = 0; c < w.width; ++c) out.at(2 * r + tau.row, 2 * c + tau.col) = w.at(r, c);
    return out;
}

void write_raster(const std::string& path, const ImageGrid& grid) {
    std::ofstream hdr(sidecar_path(path));
    if (!hdr) throw IoError("cannot write raster header " + sidecar_path(path));
    hdr << grid.height << " " << grid.width << "\n";
    hdr.close();
    if (!hdr) throw IoError("failed writing raster header " + sidecar_path(path));

    std::ofstream raw(path, std::ios::binary);
    if (!raw) throw IoError("cannot write raster " + path);
    if constexpr (std::endian::native == std::endian::little) {
        raw.write(reinterpret_cast<const char*>(grid.data.data()),
                  static_cast<std::streamsize>(grid.data.size() * sizeof(double)));
    } else {
        std::vector<double> swapped = grid.data;
        byteswap_doubles(swapped);
        raw.write(reinterpret_cast<const char*>(swapped.data()),
                  static_cast<std::streamsize>(swapped.size() * sizeof(double)));
    }
    raw.close();
    if (!raw) throw IoError("failed writing raster " + path);
}

ImageGrid read_raster(const std::string& path) {
    std::ifstream hdr(sidecar_path(path));
    if (!hdr) throw IoError("cannot read raster header " + sidecar_path(path));
    int h = -1, w = -1;
    hdr >> h >> w;
    if (!hdr || h < 0 || w < 0) throw IoError("malformed raster header " + sidecar_path(path));

    std::ifstream raw(path, std::ios::binary | std::ios::ate);
    if (!raw) throw IoError("cannot read raster " + path);
    const auto bytes = static_cast<std::size_t>(raw.tellg());
    const std::size_t expect = static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 8;
    if (bytes != expect)
        throw IoError("raster payload size mismatch in " + path + ": got " +
                      std::to_string(bytes) + " bytes, header implies " + std::to_string(expect));
    raw.seekg(0);
    ImageGrid grid(h, w);
    raw.read(reinterpret_cast<char*>(grid.data.data()), static_cast<std::streamsize>(bytes));
    if (!raw) throw IoError("failed reading raster " + path);
    if constexpr (std::endian::native != std::endian::little) byteswap_doubles(grid.data);
    return grid;
}

}  // namespace uqsr
