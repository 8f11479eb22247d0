#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "seep/kle.hpp"
#include "seep/linalg.hpp"
#include "seep/rng.hpp"

using namespace seep;

TEST_CASE("jacobi eigensolver reproduces a known spectrum") {
    // 2x2 with eigenvalues 3 and 1
    DenseMatrix m(2, 2);
    m(0, 0) = 2.0;
    m(0, 1) = 1.0;
    m(1, 0) = 1.0;
    m(1, 1) = 2.0;
    SymmetricEigen e = jacobi_eigen(m);
    std::sort(e.values.begin(), e.values.end());
    CHECK(e.values[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(e.values[1] == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("cholesky solve matches a hand-computed system") {
    DenseMatrix a(2, 2);
    a(0, 0) = 4.0;
    a(0, 1) = 2.0;
    a(1, 0) = 2.0;
    a(1, 1) = 3.0;
    const DenseMatrix l = cholesky(a);
    const std::vector<double> x = cholesky_solve(l, {2.0, 3.0});
    // A x = b  =>  x = (0, 1)
    CHECK(x[0] == Catch::Approx(0.0).margin(1e-14));
    CHECK(x[1] == Catch::Approx(1.0).margin(1e-14));
}

TEST_CASE("KLE retains about 20 terms at 80% energy for the reference case") {
    CaseSpec s;
    const KLEBasis basis = build_kle(s, 1.0, 408.0, 408.0, 0.8);
    CHECK(basis.terms() >= 17);
    CHECK(basis.terms() <= 23);
    // retained energy must meet the target and be minimal
    const double total = basis.total_energy;
    const double retained = basis.retained_energy();
    CHECK(retained / total >= 0.8);
    CHECK((retained - basis.eigenvalues.back()) / total < 0.8);
}

TEST_CASE("eigenvalue trace identity and positivity") {
    CaseSpec s;
    const KLEBasis basis = build_kle(s, 1.0, 408.0, 408.0, 0.8);
    CHECK(basis.total_energy == Catch::Approx(1.0 * s.nx * s.ny).epsilon(1e-6));
    for (std::size_t i = 1; i < basis.eigenvalues.size(); ++i) {
        CHECK(basis.eigenvalues[i] > 0.0);
        CHECK(basis.eigenvalues[i] <= basis.eigenvalues[i - 1]);
    }
}

TEST_CASE("full energy fraction retains every term") {
    CaseSpec s;
    s.nx = 7;
    s.ny = 5;
    const KLEBasis basis = build_kle(s, 2.0, 150.0, 80.0, 1.0);
    CHECK(basis.terms() == s.nx * s.ny);
}

TEST_CASE("eigenfields are orthonormal") {
    CaseSpec s;
    s.nx = 17;
    s.ny = 13;
    const KLEBasis basis = build_kle(s, 1.0, 200.0, 150.0, 0.9);
    for (int a = 0; a < basis.terms(); ++a) {
        for (int b = a; b < basis.terms(); ++b) {
            double dot = 0.0;
            for (std::size_t c = 0; c < basis.eigenfields[a].size(); ++c)
                dot += basis.eigenfields[a].v[c] * basis.eigenfields[b].v[c];
            CHECK(dot == Catch::Approx(a == b ? 1.0 : 0.0).margin(1e-8));
        }
    }
}

TEST_CASE("sample_gaussian special coefficient vectors") {
    CaseSpec s;
    s.nx = 9;
    s.ny = 9;
    const KLEBasis basis = build_kle(s, 1.0, 100.0, 100.0, 0.85);
    std::vector<double> xi(basis.terms(), 0.0);
    const ScalarField2D zero = sample_gaussian(basis, xi);
    for (double v : zero.v) CHECK(v == 0.0);

    xi[0] = 1.0;
    const ScalarField2D first = sample_gaussian(basis, xi);
    const double w = std::sqrt(basis.eigenvalues[0]);
    for (std::size_t c = 0; c < first.size(); ++c)
        CHECK(first.v[c] == Catch::Approx(w * basis.eigenfields[0].v[c]).margin(1e-14));

    xi.pop_back();
    CHECK_THROWS_AS(sample_gaussian(basis, xi), ShapeError);
}

TEST_CASE("sampled covariance matches the exponential kernel") {
    CaseSpec s;
    s.nx = 15;
    s.ny = 15;
    const double sigma2 = 1.0, eta = 408.0;
    const KLEBasis basis = build_kle(s, sigma2, eta, eta, 0.99);

    const std::pair<int, int> cells[] = {{3, 3}, {7, 11}, {12, 5}};
    const int n_draws = 100000;
    Rng rng(77, Stream::McFields, 0);
    std::vector<double> sums(3, 0.0);
    std::vector<double> prods(3, 0.0); // (pair01, pair02, pair12)
    std::vector<double> vals(3);
    std::vector<double> var_acc(3, 0.0);
    for (int d = 0; d < n_draws; ++d) {
        const std::vector<double> xi = draw_xi(basis, rng);
        const ScalarField2D f = sample_gaussian(basis, xi);
        for (int c = 0; c < 3; ++c) vals[c] = f.at(cells[c].first, cells[c].second);
        for (int c = 0; c < 3; ++c) {
            sums[c] += vals[c];
            var_acc[c] += vals[c] * vals[c];
        }
        prods[0] += vals[0] * vals[1];
        prods[1] += vals[0] * vals[2];
        prods[2] += vals[1] * vals[2];
    }
    auto cov_expect = [&](int a, int b) {
        const double dx = std::abs(cells[a].second - cells[b].second) * s.dx;
        const double dy = std::abs(cells[a].first - cells[b].first) * s.dy;
        return sigma2 * std::exp(-dx / eta - dy / eta);
    };
    const int pair_idx[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (int p = 0; p < 3; ++p) {
        const int a = pair_idx[p][0], b = pair_idx[p][1];
        const double mean_a = sums[a] / n_draws, mean_b = sums[b] / n_draws;
        const double cov = prods[p] / n_draws - mean_a * mean_b;
        CHECK(cov == Catch::Approx(cov_expect(a, b)).epsilon(0.05));
    }
}

TEST_CASE("single-cell sample variance matches the retained energy share") {
    CaseSpec s;
    s.nx = 15;
    s.ny = 15;
    const KLEBasis basis = build_kle(s, 1.0, 300.0, 300.0, 0.8);
    // pointwise variance of the truncated expansion
    const int ci = 7, cj = 7;
    double truth = 0.0;
    for (int k = 0; k < basis.terms(); ++k) {
        const double f = basis.eigenfields[k].at(ci, cj);
        truth += basis.eigenvalues[k] * f * f;
    }
    Rng rng(5, Stream::McFields, 1);
    double acc = 0.0, acc2 = 0.0;
    const int n_draws = 100000;
    for (int d = 0; d < n_draws; ++d) {
        double v = 0.0;
        for (int k = 0; k < basis.terms(); ++k)
            v += std::sqrt(basis.eigenvalues[k]) * basis.eigenfields[k].at(ci, cj) * rng.normal();
        acc += v;
        acc2 += v * v;
    }
    const double var = acc2 / n_draws - (acc / n_draws) * (acc / n_draws);
    CHECK(var == Catch::Approx(truth).epsilon(0.05));
}

TEST_CASE("polynomial transform pointwise examples") {
    PolyTransform pt{0.0, 0.5, 0.3, 0.0};
    ScalarField2D g(2, 2, 0.0);
    const ScalarField2D a = transform_non_gaussian(g, pt);
    for (double v : a.v) CHECK(v == Catch::Approx(-0.3));

    g.at(0, 0) = 1.0;
    const ScalarField2D b = transform_non_gaussian(g, pt);
    CHECK(b.at(0, 0) == Catch::Approx(0.5));

    PolyTransform bad{1.0, 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(transform_non_gaussian(g, bad), std::invalid_argument);
}

TEST_CASE("transform skewness matches the Hermite-moment value") {
    // For X = u1 g + u2 (g^2 - 1): E[X^2] = u1^2 + 2 u2^2, and
    // E[X^3] = 6 u1^2 u2 + 8 u2^3; with (0.5, 0.3): 0.43 and 0.666.
    const PolyTransform pt{0.0, 0.5, 0.3, 0.0};
    const double var_expect = 0.25 + 2 * 0.09;
    const double m3_expect = 6 * 0.25 * 0.3 + 8 * 0.027;
    const double skew_expect = m3_expect / std::pow(var_expect, 1.5);
    CHECK(var_expect == Catch::Approx(0.43));
    CHECK(m3_expect == Catch::Approx(0.666));
    CHECK(skew_expect == Catch::Approx(2.36).epsilon(0.002));

    Rng rng(9, Stream::McFields, 2);
    const long n = 1000000;
    double s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (long i = 0; i < n; ++i) {
        const double x = pt(rng.normal());
        s1 += x;
        s2 += x * x;
        s3 += x * x * x;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    const double m3 = s3 / n - 3 * mean * var - mean * mean * mean;
    const double skew = m3 / std::pow(var, 1.5);
    // positive (right) skew; the implementation asserts magnitude only
    CHECK(std::abs(skew) == Catch::Approx(skew_expect).epsilon(0.05));
}

TEST_CASE("affine transform keeps the distribution Gaussian") {
    const PolyTransform pt{0.2, 0.7, 0.0, 0.0};
    Rng rng(13, Stream::McFields, 3);
    const long n = 1000000;
    double s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (long i = 0; i < n; ++i) {
        const double x = pt(rng.normal());
        s1 += x;
        s2 += x * x;
        s3 += x * x * x;
    }
    const double mean = s1 / n;
    const double var = s2 / n - mean * mean;
    const double m3 = s3 / n - 3 * mean * var - mean * mean * mean;
    CHECK(std::abs(m3 / std::pow(var, 1.5)) < 0.05);
}

TEST_CASE("to_conductivity basics and clamping") {
    ScalarField2D lnk(2, 2, 0.0);
    const ScalarField2D k1 = to_conductivity(lnk);
    for (double v : k1.v) CHECK(v == 1.0);

    lnk.at(0, 1) = 1.0;
    CHECK(to_conductivity(lnk).at(0, 1) == Catch::Approx(std::exp(1.0)));

    lnk.at(1, 1) = 500.0; // clamped to 20
    CHECK(to_conductivity(lnk).at(1, 1) == Catch::Approx(std::exp(20.0)));

    // round trip within the clamp range
    Rng rng(1, Stream::McFields, 4);
    ScalarField2D x(3, 3);
    for (double& v : x.v) v = 3.0 * rng.normal();
    const ScalarField2D k = to_conductivity(x);
    for (std::size_t c = 0; c < x.size(); ++c)
        CHECK(std::log(k.v[c]) == Catch::Approx(x.v[c]).margin(1e-12));
}
