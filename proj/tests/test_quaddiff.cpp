#include "doctest.h"

#include <cmath>
#include <set>
#include <string>

#include "hkx/quaddiff.hpp"

using namespace hkx;

namespace {

std::vector<cplx> circle_points(cplx c, double r, int n) {
    std::vector<cplx> p;
    for (int k = 0; k <= n; ++k) p.push_back(c + r * std::exp(kI * (2 * kPi * k / n)));
    return p;
}

double dist_to_polyline(cplx p, const std::vector<cplx>& z) {
    double best = 1e300;
    for (size_t i = 0; i + 1 < z.size(); ++i) {
        const cplx d = z[i + 1] - z[i];
        double u = std::clamp(std::real((p - z[i]) * std::conj(d)) / std::max(std::norm(d), 1e-300), 0.0, 1.0);
        best = std::min(best, std::abs(p - z[i] - u * d));
    }
    return best;
}

QuadraticDifferential q_inv_z2(cplx m2) { return QuadraticDifferential(m2, {}, {cplx(0.0)}); }

}  // namespace

TEST_CASE("construction and local data") {
    auto q = QuadraticDifferential(2.0, {cplx(1, 0)}, {cplx(0, 0), cplx(3, 0)});
    CHECK(std::abs(q(cplx(2, 1)) - 2.0 * cplx(1, 1) / (cplx(2, 1) * cplx(2, 1) * cplx(-1, 1) * cplx(-1, 1))) < 1e-14);
    // leading = lim z^2 q at 0 = 2 * (-1) / 9
    CHECK(std::abs(q.leading(0) - cplx(-2.0 / 9.0)) < 1e-15);
    CHECK(std::abs(-q.sigma(0) * q.sigma(0) - q.leading(0)) < 1e-15);
    auto w = QuadraticDifferential::with_sigma({cplx(1, 0)}, {cplx(0, 0), cplx(3, 0)}, 1, cplx(0.5, 0.2));
    CHECK(std::abs(w.sigma(1) * w.sigma(1) - cplx(0.5, 0.2) * cplx(0.5, 0.2)) < 1e-14);
    // derivative against finite differences
    const cplx z(0.7, 0.4), h(1e-6, 0);
    CHECK(std::abs(q.derivative(z) - (q(z + h) - q(z - h)) / (2.0 * h)) < 1e-7);
    CHECK(q.infinity_order() == 1);
    CHECK_THROWS_AS(QuadraticDifferential(1.0, {cplx(1, 0), cplx(1, 0)}, {}), DomainError);
    CHECK_THROWS_AS(QuadraticDifferential(1.0, {cplx(1, 0)}, {cplx(1, 0)}), DomainError);
    CHECK_THROWS_AS(QuadraticDifferential(0.0, {}, {}), DomainError);
}

TEST_CASE("sqrt_tracked") {
    auto qz = QuadraticDifferential(1.0, {cplx(0.0)}, {});
    auto v = sqrt_tracked(qz, circle_points(0.0, 1.0, 8), 1.0);
    CHECK(std::abs(v.back() + 1.0) < 1e-14);
    auto q1 = QuadraticDifferential(1.0, {}, {});
    for (auto x : sqrt_tracked(q1, {cplx(0, 0), cplx(5, 2), cplx(-3, 1)}, 1.0)) CHECK(x == cplx(1.0));
    auto qp = q_inv_z2(1.0);
    std::vector<cplx> path;
    for (int k = 0; k <= 10; ++k) path.push_back(1.0 + 0.1 * k);
    auto vp = sqrt_tracked(qp, path, 1.0);
    for (size_t k = 0; k < path.size(); ++k) CHECK(std::abs(vp[k] - 1.0 / path[k]) < 1e-14);
    try {
        sqrt_tracked(qz, {cplx(-1, 1e-12), cplx(1, 1e-12)}, std::sqrt(cplx(-1, 1e-12)), 1e-6);
        FAIL("expected a branch-point error");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()).find("zero #0") != std::string::npos);
    }
    CHECK_THROWS_AS(sqrt_tracked(qz, {cplx(4, 0)}, 1.0), DomainError);
}

TEST_CASE("log-spiral into a double pole") {
    auto q = q_inv_z2(1.0);  // m = 1
    auto tr = trace_trajectory(q, 1.0, 0.0, -1);
    REQUIRE(tr.size() > 10);
    CHECK(tr.ends[1].kind == EndKind::Pole);
    double err = 0;
    for (size_t i = 0; i < tr.size(); ++i) err = std::max(err, std::abs(tr.z[i] - std::exp(-tr.t[i])));
    CHECK(err < 1e-6);
    CHECK(tr.max_residual() < 1e-6);
    // Hermite interpolation between samples
    for (double s : {0.05, 1.3, 4.71}) CHECK(std::abs(tr.at(s).first - std::exp(-s)) < 1e-6);
    CHECK(classify(tr) == TrajectoryClass::Divergent);  // start end is open
    auto full = trace_full(q, 1.0, 0.0);
    CHECK(classify(full) == TrajectoryClass::Generic);

    // complex m: spiral z0 exp(-(e^{i theta}/m) t)
    const cplx m(1.0, 0.5);
    auto qs = q_inv_z2(m * m);
    auto sp = trace_trajectory(qs, 1.0, 0.3, -1, {}, m);
    double e2 = 0;
    for (size_t i = 0; i < sp.size(); ++i)
        e2 = std::max(e2, std::abs(sp.z[i] - std::exp(-(std::exp(kI * 0.3) / m) * sp.t[i])));
    CHECK(e2 < 1e-6);
}

TEST_CASE("circle around a double pole is periodic") {
    auto q = q_inv_z2(-1.0);  // m = i
    auto tr = trace_trajectory(q, 1.0, 0.0, 1);
    CHECK(tr.periodic);
    CHECK(classify(tr) == TrajectoryClass::Periodic);
    for (auto z : tr.z) CHECK(std::abs(std::abs(z) - 1.0) < 1e-9);
    CHECK(std::abs(tr.t.back() - 2 * kPi) < 1e-6);
}

TEST_CASE("trajectory of q = z runs along the real axis into the zero") {
    auto q = QuadraticDifferential(1.0, {cplx(0.0)}, {});
    auto tr = trace_trajectory(q, 2.0, 0.0, -1);
    CHECK(tr.ends[1].kind == EndKind::Zero);
    const double w0 = (2.0 / 3.0) * std::pow(2.0, 1.5);
    for (size_t i = 0; i < tr.size(); ++i) {
        CHECK(std::abs(tr.z[i].imag()) < 1e-9);
        const double exact = std::pow(1.5 * (w0 - tr.t[i]), 2.0 / 3.0);
        CHECK(std::abs(tr.z[i].real() - exact) < 1e-8);
    }
    CHECK(tr.max_residual() < 1e-6);
}

TEST_CASE("orientation symmetries") {
    auto q = QuadraticDifferential(cplx(1.0, 0.3), {cplx(1, 0), cplx(-1, 0.2)}, {cplx(0, 1.5), cplx(0.5, -1)});
    StopRules st;
    st.max_length = 1.0;
    const cplx z0(0.3, 0.1);
    auto a = trace_trajectory(q, z0, 0.4, +1, st);
    REQUIRE(a.ends[1].kind == EndKind::Open);
    auto back = trace_trajectory(q, a.z.back(), 0.4, -1, st, a.sqrtq.back());
    CHECK(std::abs(back.z.back() - z0) < 1e-8);
    for (size_t i = 0; i < back.size(); ++i) CHECK(dist_to_polyline(back.z[i], a.z) < 1e-3 * std::abs(a.z.back() - z0));
    // theta + pi with +1 traces the same set as theta with -1
    auto m1 = trace_trajectory(q, z0, 0.4, -1, st);
    auto p1 = trace_trajectory(q, z0, 0.4 + kPi, +1, st);
    REQUIRE(m1.size() == p1.size());
    for (size_t i = 0; i < m1.size(); ++i) CHECK(std::abs(m1.z[i] - p1.z[i]) < 1e-10);
    auto r = a.reversed();
    CHECK(r.direction == -1);
    CHECK(r.max_residual() < 1e-6);
}

TEST_CASE("separatrices of q = z") {
    auto q = QuadraticDifferential(1.0, {cplx(0.0)}, {});
    for (double theta : {0.0, kPi / 2}) {
        auto s = separatrices(q, 0, theta);
        for (int k = 0; k < 3; ++k) {
            const double expect = std::remainder(2.0 * theta / 3.0 + 2 * kPi * k / 3.0, 2 * kPi);
            CHECK(std::abs(std::remainder(s.directions[k] - expect, 2 * kPi)) < 1e-3);
            const double d = std::remainder(s.directions[(k + 1) % 3] - s.directions[k], 2 * kPi);
            CHECK(std::abs(std::abs(d) - 2 * kPi / 3) < 1e-3);
            // oracle: e^{-2 i theta} z^3 real positive along the curve
            const auto& c = s.curves[k];
            for (size_t i = 0; i < c.size(); i += 5) {
                const cplx v = std::exp(-2.0 * kI * theta) * c.z[i] * c.z[i] * c.z[i];
                CHECK(std::abs(v.imag()) < 1e-7 * std::abs(v));
                CHECK(v.real() > 0);
            }
            CHECK(c.ends[0].kind == EndKind::Zero);
            CHECK(c.ends[1].kind == EndKind::Infinity);
            CHECK(c.max_residual() < 1e-6);
        }
        CHECK_FALSE(s.collision);
    }
    auto q2 = QuadraticDifferential(cplx(0.3, 1.0), {cplx(0.4, 0.1), cplx(-1, 0.5)}, {cplx(1, 1)});
    auto s2 = separatrices(q2, 1, 0.7);
    for (int k = 0; k < 3; ++k) {
        const double d = std::remainder(s2.directions[(k + 1) % 3] - s2.directions[k], 2 * kPi);
        CHECK(std::abs(std::abs(d) - 2 * kPi / 3) < 1e-3);
    }
    CHECK_THROWS_AS(separatrices(q2, 5, 0.0), DomainError);
}

TEST_CASE("classification of the saddle of z^2 - 1") {
    auto q = QuadraticDifferential(1.0, {cplx(-1, 0), cplx(1, 0)}, {});
    auto tr = trace_full(q, 0.0, kPi / 2);
    CHECK(classify(tr) == TrajectoryClass::Saddle);
    CHECK(std::string(to_string(classify(tr))) == "saddle");
    auto other = trace_full(q, cplx(0, 0.5), 0.0);
    CHECK(classify(other) == TrajectoryClass::Generic);
    auto sep = separatrices(q, 0, 0.0).curves[0];
    CHECK(classify(sep) == TrajectoryClass::Separating);
}

TEST_CASE("periods") {
    auto q = q_inv_z2(1.0);
    auto c = ContourPath::circle(0.0, 1.0);
    CHECK(std::abs(period(q, c, 1.0) - cplx(0, 2)) < 1e-8);
    CHECK(std::abs(period(q, c.reversed(), 1.0) + cplx(0, 2)) < 1e-8);

    auto qb = QuadraticDifferential(1.0, {cplx(-1, 0), cplx(1, 0)}, {});
    auto c2 = ContourPath::circle(0.0, 2.0);
    const cplx zs = c2.point(0.0);
    const cplx Z = period(qb, c2, std::sqrt(qb(zs)));
    CHECK(std::abs(std::abs(Z) - 1.0) < 1e-6);
    CHECK(std::abs(Z.real()) < 1e-6);
    CHECK(std::abs(period(qb, c2.reversed(), std::sqrt(qb(zs))) + Z) < 1e-8);

    // additivity: two double poles with single-valued root
    auto q2 = QuadraticDifferential(cplx(0.4, 0.3), {}, {cplx(1, 0), cplx(-1, 0)});
    const cplx s0 = std::sqrt(cplx(0.4, 0.3));
    auto root = [&](cplx z) { return s0 / ((z - 1.0) * (z + 1.0)); };
    auto big = ContourPath::circle(0.0, 3.0);
    auto left = ContourPath::circle(-1.0, 0.5), right = ContourPath::circle(1.0, 0.5);
    const cplx total = period(q2, big, root(big.point(0)));
    const cplx parts = period(q2, left, root(left.point(0))) + period(q2, right, root(right.point(0)));
    CHECK(std::abs(total - parts) < 1e-8);
    CHECK_THROWS_AS(period(q2, ContourPath::circle(1.0, 1e-12), 1.0), DomainError);
}

TEST_CASE("saddle scan of z^2 - 1") {
    auto q = QuadraticDifferential(1.0, {cplx(-1, 0), cplx(1, 0)}, {});
    std::vector<double> grid;
    for (int k = 0; k < 32; ++k) grid.push_back(kPi * k / 32.0);
    auto ev = find_saddles(q, grid);
    REQUIRE(ev.size() == 1);
    CHECK(std::abs(ev[0].theta - kPi / 2) < 1e-3);
    CHECK_FALSE(ev[0].low_confidence);
    const cplx rot = std::exp(-kI * ev[0].theta) * ev[0].period;
    CHECK(std::abs(rot.imag()) < 1e-6);
    CHECK(rot.real() > 0);
    CHECK(std::abs(ev[0].period - cplx(0, 1)) < 1e-6);
    std::set<int> ends{ev[0].zero_from, ev[0].zero_to};
    CHECK(ends == std::set<int>{0, 1});

    std::vector<double> away;
    for (double t : grid)
        if (std::abs(t - kPi / 2) > 0.2) away.push_back(t);
    // split the grid so no bracket straddles pi/2
    std::vector<double> lo, hi;
    for (double t : away) (t < kPi / 2 ? lo : hi).push_back(t);
    CHECK(find_saddles(q, lo).empty());
    CHECK(find_saddles(q, hi).empty());

    CHECK(find_saddles(q_inv_z2(1.0), grid).empty());
}
