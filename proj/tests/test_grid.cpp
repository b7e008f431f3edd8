#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cstdio>
#include <fstream>

#include "uqsr/grid.hpp"
#include "uqsr/rng.hpp"

using namespace uqsr;

namespace {

ImageGrid ramp(int h, int w) {
    ImageGrid g(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) g.at(r, c) = r * w + c;
    return g;
}

ImageGrid random_grid(int h, int w, std::uint64_t seed) {
    ImageGrid g(h, w);
    rng::Prng p(seed, 0);
    for (double& v : g.data) v = p.next_uniform(-1.0, 1.0);
    return g;
}

DenseMatrix random_spd(int n, std::uint64_t seed, double shift = 0.5) {
    rng::Prng p(seed, 1);
    DenseMatrix b(n, n);
    for (double& v : b.entries) v = p.next_uniform(-1.0, 1.0);
    DenseMatrix m(n, n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int k = 0; k < n; ++k) s += b.at(k, i) * b.at(k, j);
            m.at(i, j) = s + (i == j ? shift : 0.0);
        }
    return m;
}

}  // namespace

TEST_CASE("subgrid extraction picks the interleaved phases") {
    const ImageGrid u = ramp(4, 4);

    const ImageGrid e00 = subgrid_extract(u, {0, 0});
    CHECK(e00.height == 2);
    CHECK(e00.width == 2);
    CHECK(e00.at(0, 0) == 0.0);
    CHECK(e00.at(0, 1) == 2.0);
    CHECK(e00.at(1, 0) == 8.0);
    CHECK(e00.at(1, 1) == 10.0);

    const ImageGrid e01 = subgrid_extract(u, {0, 1});
    CHECK(e01.at(0, 0) == 1.0);
    CHECK(e01.at(0, 1) == 3.0);
    CHECK(e01.at(1, 0) == 9.0);
    CHECK(e01.at(1, 1) == 11.0);

    const ImageGrid e10 = subgrid_extract(u, {1, 0});
    CHECK(e10.at(0, 0) == 4.0);
    CHECK(e10.at(1, 1) == 14.0);

    const ImageGrid e11 = subgrid_extract(u, {1, 1});
    CHECK(e11.at(0, 0) == 5.0);
    CHECK(e11.at(1, 1) == 15.0);
}

TEST_CASE("subgrid ids enumerate canonically") {
    const auto all = SubgridId::all();
    for (int i = 0; i < 4; ++i) {
        CHECK(all[static_cast<std::size_t>(i)].index() == i);
        CHECK(SubgridId::from_index(i) == all[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("extract then embed is the identity on a subgrid, and the four embeds partition") {
    const ImageGrid u = random_grid(6, 8, 11);
    ImageGrid sum(6, 8, 0.0);
    for (const SubgridId tau : SubgridId::all()) {
        const ImageGrid w = subgrid_extract(u, tau);
        const ImageGrid back = subgrid_embed(w, tau, 6, 8);
        CHECK(subgrid_extract(back, tau).data == w.data);  // exact: pure selection
        for (std::size_t k = 0; k < sum.size(); ++k) sum.data[k] += back.data[k];
    }
    CHECK(sum.data == u.data);  // each pixel written exactly once
}

TEST_CASE("embedding is the adjoint of extraction") {
    const ImageGrid u = random_grid(8, 6, 21);
    const ImageGrid w = random_grid(4, 3, 22);
    for (const SubgridId tau : SubgridId::all()) {
        const ImageGrid eu = subgrid_extract(u, tau);
        const ImageGrid ew = subgrid_embed(w, tau, 8, 6);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t k = 0; k < eu.size(); ++k) lhs += eu.data[k] * w.data[k];
        for (std::size_t k = 0; k < u.size(); ++k) rhs += u.data[k] * ew.data[k];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-14));
    }
}

TEST_CASE("odd extents are rejected") {
    CHECK_THROWS_AS(subgrid_extract(ImageGrid(3, 4), {0, 0}), ShapeError);
    CHECK_THROWS_AS(subgrid_extract(ImageGrid(4, 5), {0, 0}), ShapeError);
    CHECK_THROWS_AS(subgrid_embed(ImageGrid(2, 2), {0, 0}, 5, 4), ShapeError);
}

TEST_CASE("spd solve meets its residual contract") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const int n = 6;
        const DenseMatrix m = random_spd(n, seed);
        rng::Prng p(seed, 2);
        std::vector<double> rhs(static_cast<std::size_t>(n));
        for (double& v : rhs) v = p.next_uniform(-2.0, 2.0);

        double logdet = 0.0;
        const std::vector<double> x = spd_solve(m, rhs, &logdet);

        double rnorm = 0.0, bnorm = 0.0;
        for (int i = 0; i < n; ++i) {
            double mx = 0.0;
            for (int j = 0; j < n; ++j) mx += m.at(i, j) * x[static_cast<std::size_t>(j)];
            rnorm = std::max(rnorm, std::fabs(mx - rhs[static_cast<std::size_t>(i)]));
            bnorm = std::max(bnorm, std::fabs(rhs[static_cast<std::size_t>(i)]));
        }
        CHECK(rnorm / bnorm <= 1e-10);

        // Independent oracle for log det: sum of log eigenvalues.
        Eigen::MatrixXd em(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) em(i, j) = m.at(i, j);
        const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(em).eigenvalues();
        double oracle = 0.0;
        for (int i = 0; i < n; ++i) oracle += std::log(ev(i));
        CHECK(logdet == doctest::Approx(oracle).epsilon(1e-10));
    }
}

TEST_CASE("spd factor inverse is accurate") {
    const DenseMatrix m = random_spd(8, 3);
    const DenseMatrix inv = SpdFactor(m).inverse();
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double s = 0.0;
            for (int k = 0; k < 8; ++k) s += m.at(i, k) * inv.at(k, j);
            CHECK(s == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-11).scale(1.0));
        }
}

TEST_CASE("indefinite and asymmetric matrices are rejected") {
    DenseMatrix indef = DenseMatrix::identity(3);
    indef.at(2, 2) = -1.0;
    CHECK_THROWS_AS(SpdFactor{indef}, DefinitenessError);

    DenseMatrix asym = DenseMatrix::identity(3);
    asym.at(0, 1) = 0.5;
    CHECK_THROWS_AS(SpdFactor{asym}, ShapeError);

    CHECK_THROWS_AS(SpdFactor{DenseMatrix(2, 3)}, ShapeError);
}

TEST_CASE("raster files round-trip exactly and use the documented layout") {
    const std::string dir = "./raster_test_tmp";
    std::remove((dir + ".raw").c_str());
    const ImageGrid g = random_grid(3, 5, 33);
    write_raster(dir + ".raw", g);

    const ImageGrid back = read_raster(dir + ".raw");
    CHECK(back.height == 3);
    CHECK(back.width == 5);
    CHECK(back.data == g.data);

    std::ifstream hdr(dir + ".hdr");
    std::string line;
    std::getline(hdr, line);
    CHECK(line == "3 5");

    // Byte-level check on a known value: 1.5 is 0x3FF8000000000000 little-endian.
    ImageGrid one(1, 1);
    one.at(0, 0) = 1.5;
    write_raster(dir + "_one.raw", one);
    std::ifstream raw(dir + "_one.raw", std::ios::binary);
    unsigned char bytes[8] = {0};
    raw.read(reinterpret_cast<char*>(bytes), 8);
    const unsigned char expect[8] = {0, 0, 0, 0, 0, 0, 0xF8, 0x3F};
    for (int i = 0; i < 8; ++i) CHECK(bytes[i] == expect[i]);
}

TEST_CASE("raster errors are reported as I/O failures") {
    CHECK_THROWS_AS(read_raster("./no_such_raster.raw"), IoError);

    // Payload shorter than the header promises.
    const std::string path = "./raster_bad.raw";
    {
        std::ofstream hdr("./raster_bad.hdr");
        hdr << "2 2\n";
        std::ofstream raw(path, std::ios::binary);
        const double d = 1.0;
        raw.write(reinterpret_cast<const char*>(&d), sizeof(d));
    }
    CHECK_THROWS_AS(read_raster(path), IoError);
}
