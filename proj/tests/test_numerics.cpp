#include "doctest.h"

#include <cmath>
#include <vector>

#include "hkx/numerics.hpp"

using namespace hkx;

namespace {

// Plain trapezoid on a truncated cosh representation; converges geometrically.
double k_trapezoid(int order, double x) {
    const double h = 1e-3, Y = std::acosh(1.0 + 60.0 / x);
    double s = 0.5 * std::exp(-x);
    for (double y = h; y < Y; y += h) s += std::exp(-x * std::cosh(y)) * (order == 0 ? 1.0 : std::cosh(y));
    return s * h;
}

struct Case {
    const char* name;
    RealIntegrand f;
    double a, b;
    cplx exact;
};

}  // namespace

TEST_CASE("semi-infinite elementary integrals") {
    auto r = integrate_semi_infinite([](double t) { return cplx(std::exp(-t)); }, 0.0);
    CHECK(std::abs(r.value - 1.0) < 1e-10);
    CHECK(r.err >= 0.0);
    auto z = integrate_semi_infinite([](double) { return cplx(0.0); }, 0.0);
    CHECK(std::abs(z.value) == 0.0);
}

TEST_CASE("semi-infinite cosh integral matches trapezoid oracle") {
    auto r = integrate_semi_infinite([](double t) { return cplx(std::exp(-std::cosh(t))); }, 0.0);
    const double oracle = k_trapezoid(0, 1.0);
    CHECK(std::abs(oracle - 0.42102443824) < 1e-10);
    CHECK(std::abs(r.value.real() - oracle) < 1e-8);
}

TEST_CASE("quadrature error estimates bound the true error on a corpus") {
    const double pi = kPi;
    std::vector<Case> corpus = {
        {"x^2", [](double x) { return cplx(x * x); }, 0, 1, 1.0 / 3},
        {"sin", [](double x) { return cplx(std::sin(x)); }, 0, pi, 2.0},
        {"exp", [](double x) { return cplx(std::exp(x)); }, 0, 1, std::exp(1.0) - 1},
        {"1/(1+x^2)", [](double x) { return cplx(1 / (1 + x * x)); }, -1, 1, pi / 2},
        {"sqrt", [](double x) { return cplx(std::sqrt(x)); }, 0, 1, 2.0 / 3},
        {"log", [](double x) { return cplx(std::log(x)); }, 0, 1, -1.0},
        {"1/sqrt", [](double x) { return cplx(1 / std::sqrt(x)); }, 0, 1, 2.0},
        {"x^9", [](double x) { return cplx(std::pow(x, 9)); }, 0, 2, 102.4},
        {"cos^2", [](double x) { return cplx(std::cos(x) * std::cos(x)); }, 0, 2 * pi, pi},
        {"e^{ix}", [](double x) { return std::exp(cplx(0, x)); }, 0, pi / 2, cplx(1, 1)},
        {"gauss", [](double x) { return cplx(std::exp(-x * x)); }, -8, 8, std::sqrt(pi)},
        {"abs", [](double x) { return cplx(std::abs(x - 0.3)); }, 0, 1, 0.29},
        {"step", [](double x) { return cplx(x < 0.7 ? 1.0 : 0.0); }, 0, 1, 0.7},
        {"sin(50x)", [](double x) { return cplx(std::sin(50 * x)); }, 0, pi, 0.0},
        {"1/x", [](double x) { return cplx(1 / x); }, 1, 10, std::log(10.0)},
        {"x e^{-x}", [](double x) { return cplx(x * std::exp(-x)); }, 0, 30, 1 - 31 * std::exp(-30.0)},
        {"lorentz", [](double x) { return cplx(1e-2 / (x * x + 1e-4)); }, -1, 1, 2 * std::atan(100.0)},
        {"x^{1/3}", [](double x) { return cplx(std::cbrt(x)); }, 0, 8, 12.0},
        {"z/(1+z^2)", [](double x) { return cplx(x, 1) / (1.0 + cplx(x, 1) * cplx(x, 1) + 3.0); }, 0, 1,
         0.5 * (std::log(cplx(1, 1) * cplx(1, 1) + 4.0) - std::log(cplx(0, 1) * cplx(0, 1) + 4.0))},
        {"cosh", [](double x) { return cplx(std::cosh(x)); }, -2, 2, 2 * std::sinh(2.0)},
    };
    for (const auto& c : corpus) {
        CAPTURE(c.name);
        auto r = integrate(c.f, c.a, c.b);
        CHECK(r.err >= 0.0);
        CHECK(std::abs(r.value - c.exact) <= r.err + 1e-15);
        CHECK(std::abs(r.value - c.exact) <= std::max(1e-10, 1e-9 * std::abs(c.exact)) * 10);
    }
}

TEST_CASE("quadrature errors") {
    Quadrature q;
    q.max_subdivisions = 3;
    CHECK_THROWS_AS(integrate([](double x) { return cplx(std::sin(1 / (x + 1e-3))); }, 0, 1, q), NumericalError);
    CHECK_THROWS_AS(integrate([](double) { return cplx(NAN); }, 0, 1), NumericalError);
    Quadrature bad;
    bad.abs_tol = 0;
    CHECK_THROWS_AS(integrate([](double) { return cplx(1.0); }, 0, 1, bad), DomainError);
    try {
        integrate([](double x) { return cplx(std::sin(1 / (x + 1e-3))); }, 0, 1, q);
    } catch (const NumericalError& e) {
        CHECK(std::isfinite(e.best().real()));
        CHECK(e.err() > 0);
    }
}

TEST_CASE("contour integrals") {
    auto c = ContourPath::circle(0.0, 1.0, +1);
    auto r = integrate_contour([](cplx z) { return 1.0 / z; }, c);
    CHECK(std::abs(r.value - 2.0 * kPi * kI) < 1e-10);
    auto rr = integrate_contour([](cplx z) { return 1.0 / z; }, c.reversed());
    CHECK(std::abs(rr.value + 2.0 * kPi * kI) < 1e-10);

    auto sq = ContourPath::polyline({{1, 0}, {0, 2}, {-3, -1}, {2, -2}, {1, 0}});
    CHECK(sq.closed());
    CHECK(std::abs(integrate_contour([](cplx) { return cplx(1.0); }, sq).value) < 1e-12);
    CHECK(std::abs(integrate_contour([](cplx) { return cplx(1.0); }, c).value) < 1e-12);

    // Outside [-1, 1] this product form is a continuous branch of sqrt(z^2 - 1).
    auto branch = [](cplx z) { return z * std::sqrt(1.0 - 1.0 / (z * z)); };
    auto b = integrate_contour(branch, ContourPath::circle(0.0, 2.0));
    // Oracle: collapse onto the cut, 2i * int_{-1}^{1} sqrt(1 - x^2) dx in magnitude.
    auto cut = integrate([](double x) { return cplx(std::sqrt(1 - x * x)); }, -1, 1);
    CHECK(std::abs(std::abs(b.value) - 2.0 * cut.value.real()) < 1e-6);
    CHECK(std::abs(b.value.real()) < 1e-8);
    CHECK(std::abs(std::abs(b.value) - kPi) < 1e-6);
}

TEST_CASE("contour exclusion radius") {
    ContourOptions opts;
    opts.singularities = {cplx(0.5, 0.0)};
    opts.exclusion_radius = 0.6;
    CHECK_THROWS_AS(integrate_contour([](cplx z) { return z; }, ContourPath::circle(0.0, 1.0), {}, opts), DomainError);
    opts.exclusion_radius = 0.4;
    CHECK_NOTHROW(integrate_contour([](cplx z) { return z; }, ContourPath::circle(0.0, 1.0), {}, opts));
    CHECK_THROWS_AS(ContourPath::polyline({cplx(0.0)}), DomainError);
    CHECK_THROWS_AS(ContourPath::circle(0.0, 0.0), DomainError);
}

TEST_CASE("bessel K0, K1 against trapezoid oracle") {
    CHECK(std::abs(bessel_k(0, 1.0) - k_trapezoid(0, 1.0)) < 1e-12);
    CHECK(std::abs(bessel_k(1, 1.0) - k_trapezoid(1, 1.0)) < 1e-12);
    CHECK(std::abs(bessel_k(0, 1.0) - 0.42102443824) < 1e-10);
    CHECK(std::abs(bessel_k(1, 1.0) - 0.60190723020) < 1e-10);
    for (double x : {1e-2, 0.1, 0.5, 0.99, 2.0, 7.5, 20.0, 50.0}) {
        CAPTURE(x);
        CHECK(std::abs(bessel_k(0, x) / k_trapezoid(0, x) - 1) < 1e-10);
        CHECK(std::abs(bessel_k(1, x) / k_trapezoid(1, x) - 1) < 1e-10);
    }
}

TEST_CASE("bessel series and quadrature agree at the crossover") {
    for (int n : {0, 1}) {
        const double below = bessel_k(n, std::nextafter(1.0, 0.0));
        const double above = bessel_k(n, 1.0);
        CHECK(std::abs(below / above - 1) < 1e-12);
    }
}

TEST_CASE("bessel asymptotics and derivative consistency") {
    // Leading-order ratio is 1 - 1/(8x) + 9/(128x^2) - ..., so it enters [0.99, 1.01] only near x = 12.5.
    for (double x : {10.0, 12.5, 20.0, 40.0}) {
        CAPTURE(x);
        const double ratio = bessel_k(0, x) * std::sqrt(2 * x / kPi) * std::exp(x);
        const double series = 1 - 1 / (8 * x) + 9 / (128 * x * x) - 225 / (3072 * x * x * x);
        CHECK(std::abs(ratio - series) < 0.12 / (x * x * x * x));  // next term 11025/(98304 x^4)
        if (x >= 12.5) CHECK(std::abs(ratio - 1) < 0.01);
    }
    for (double x = 0.5; x <= 10.0; x += 0.5) {
        const double h = 1e-4;
        const double d = (bessel_k(0, x + h) - bessel_k(0, x - h)) / (2 * h);
        CHECK(std::abs(-d - bessel_k(1, x)) < 1e-6);
    }
    CHECK_THROWS_AS(bessel_k(0, 0.0), DomainError);
    CHECK_THROWS_AS(bessel_k(0, -1.0), DomainError);
    CHECK_THROWS_AS(bessel_k(2, 1.0), DomainError);
}

TEST_CASE("cauchy kernel") {
    CHECK(cauchy_kernel(1.0, 0.0) == cplx(1.0));
    CHECK(cauchy_kernel(1.0, -1.0) == cplx(0.0));
    CHECK(std::abs(cauchy_kernel(2.0 * kI, kI) - cplx(0, -1.5)) < 1e-15);
    CHECK_THROWS_AS(cauchy_kernel(0.0, 1.0), DomainError);
    CHECK_THROWS_AS(cauchy_kernel(kI, kI), DomainError);
    for (cplx zp : {cplx(0.3, 1.2), cplx(-2, 0.5), cplx(4, -4)})
        for (cplx z : {cplx(1, 1), cplx(-0.2, 0.1)})
            CHECK(std::abs(cauchy_kernel(zp, z) - (2.0 / (zp - z) - 1.0 / zp)) < 1e-14 * std::abs(cauchy_kernel(zp, z)) + 1e-15);
    // Antisymmetry of the bare factor (zp + z) / (zp - z) under zp <-> z.
    CHECK(std::abs(cauchy_kernel(cplx(2, 1), cplx(0.5, -1)) * cplx(2, 1) + cauchy_kernel(cplx(0.5, -1), cplx(2, 1)) * cplx(0.5, -1)) < 1e-14);
}

TEST_CASE("gauss-legendre integrates polynomials exactly") {
    std::vector<double> x, w;
    for (int n : {1, 2, 5, 8, 16}) {
        gauss_legendre(n, x, w);
        for (int p = 0; p < 2 * n; ++p) {
            double s = 0;
            for (int i = 0; i < n; ++i) s += w[i] * std::pow(x[i], p);
            const double exact = p % 2 ? 0.0 : 2.0 / (p + 1);
            CHECK(std::abs(s - exact) < 1e-13);
        }
    }
}
